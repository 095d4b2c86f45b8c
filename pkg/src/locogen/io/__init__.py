"""On-disk formats: robots, scenes, source demonstrations, datasets, meshes."""

from locogen.io.robot import load_robot, load_sphere_file, save_sphere_file
from locogen.io.mesh import load_mesh, save_mesh

__all__ = [
    "load_robot",
    "load_sphere_file",
    "save_sphere_file",
    "load_mesh",
    "save_mesh",
]
