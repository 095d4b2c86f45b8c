"""ASCII triangle-mesh format (OBJ subset).

Grammar: lines of ``v x y z`` (vertex, meters) and ``f i j k`` (triangle,
1-based vertex indices). ``#`` starts a comment; blank lines and unknown
directives other than v/f are rejected. Faces must be triangles.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from locogen.collision import TriMesh


class MeshFileError(ValueError):
    """Malformed mesh file."""


def load_mesh(path: str | Path) -> TriMesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "v" and len(parts) == 4:
                vertices.append([float(x) for x in parts[1:]])
            elif parts[0] == "f" and len(parts) == 4:
                idx = [int(p.split("/", 1)[0]) for p in parts[1:]]
                faces.append([i - 1 for i in idx])
            else:
                raise MeshFileError(f"{path}:{lineno}: unsupported line {line!r}")
    if not vertices or not faces:
        raise MeshFileError(f"{path}: mesh needs at least one vertex and one face")
    try:
        return TriMesh(np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64))
    except ValueError as e:
        raise MeshFileError(f"{path}: {e}") from None


def save_mesh(path: str | Path, mesh: TriMesh) -> None:
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")
