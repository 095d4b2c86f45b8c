"""Generated-dataset file: length-prefixed binary episodes behind a JSON header.

Byte-level layout (all integers little-endian, all floats IEEE-754 f64)::

    file    := magic "LGDT" | u32 version (=1) | u64 episode_count
               | u64 header_len | header (UTF-8 JSON) | episode*
    episode := u64 payload_len | payload
    payload := u64 seed | u8 success | f64[4] tracking
               | u32 n_segments | segment*
               | u32 n_steps | step* | state            # trailing final state
    segment := u8 kind | u32 start | u32 end | u16 n_ids | (u16 len | utf8)*
    step    := state | u8 image_present (=0) | action | action
               # stored action first, executed action second
    state   := f64[4] base | f64[nq] q | f64[7 * n_objects] poses
               | u8 n_attachments | (u8 ee_idx | u8 obj_idx | f64[7] offset)*
    action  := f64[n_upper] | f64[n_hands] | f64[4] base_command

The header records the joint/object/end-effector layouts that fix all field
widths, the robot/scene/demo paths and SHA-256 hashes, the generation config,
the master seed, and the aggregate generation stats. Episodes are
independently readable by walking the length prefixes; `episode_count` sits
at a fixed offset so a streaming writer can patch it on close. Observations
equal the recorded state by construction (the image slot is reserved and
absent), so only a presence flag is stored and the observation view is
rebuilt on read.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from locogen.collision import Attachment
from locogen.episodes import Episode, EpisodeStep, Provenance, Segment, SEGMENT_KINDS
from locogen.executor import Action, TrackingError, WorldState, observe
from locogen.kinematics import Configuration
from locogen.pose import PlanarPose, Pose

MAGIC = b"LGDT"
VERSION = 1
_COUNT_OFFSET = 8  # magic + version


class DatasetError(ValueError):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetHashError(DatasetError):
    pass


class DatasetTruncatedError(DatasetError):
    def __init__(self, episode_index: int, detail: str = ""):
        self.episode_index = episode_index
        super().__init__(
            f"dataset truncated at episode {episode_index}" + (f": {detail}" if detail else "")
        )


@dataclass
class DatasetFile:
    header: dict
    episodes: list[Episode]


class _Layout:
    def __init__(self, header: dict):
        self.nq = int(header["n_joints"])
        self.objects = list(header["object_names"])
        self.ees = list(header["ee_names"])
        self.n_upper = int(header["n_upper"])
        self.n_hands = int(header["n_hands"])
        self.obj_idx = {n: i for i, n in enumerate(self.objects)}
        self.ee_idx = {n: i for i, n in enumerate(self.ees)}


def _pack_state(buf: io.BytesIO, s: WorldState, lay: _Layout) -> None:
    base = s.configuration.base
    buf.write(struct.pack("<4d", base.x, base.y, base.yaw, base.height))
    q = np.ascontiguousarray(s.configuration.q, dtype="<f8")
    if q.shape != (lay.nq,):
        raise DatasetError(f"state q has {q.shape}, expected ({lay.nq},)")
    buf.write(q.tobytes())
    for name in lay.objects:
        buf.write(np.ascontiguousarray(s.object_poses[name].as_array(), dtype="<f8").tobytes())
    atts = sorted(s.attachments.items())
    buf.write(struct.pack("<B", len(atts)))
    for ee, att in atts:
        buf.write(struct.pack("<BB", lay.ee_idx[ee], lay.obj_idx[att.obj]))
        buf.write(np.ascontiguousarray(att.offset.as_array(), dtype="<f8").tobytes())


def _unpack_state(buf, lay: _Layout, time_step: int) -> WorldState:
    x, y, yaw, h = struct.unpack("<4d", buf.read(32))
    q = np.frombuffer(buf.read(8 * lay.nq), dtype="<f8").copy()
    poses = {}
    for name in lay.objects:
        poses[name] = Pose.from_array(np.frombuffer(buf.read(56), dtype="<f8"))
    (n_att,) = struct.unpack("<B", buf.read(1))
    attachments = {}
    for _ in range(n_att):
        ei, oi = struct.unpack("<BB", buf.read(2))
        offset = Pose.from_array(np.frombuffer(buf.read(56), dtype="<f8"))
        ee = lay.ees[ei]
        attachments[ee] = Attachment(ee, lay.objects[oi], offset)
    cfg = Configuration(PlanarPose(x, y, yaw, h), q)
    return WorldState(cfg, poses, attachments, time_step)


def _pack_action(buf: io.BytesIO, a: Action, lay: _Layout) -> None:
    if a.upper.shape != (lay.n_upper,) or a.hands.shape != (lay.n_hands,):
        raise DatasetError("action layout mismatch")
    buf.write(np.ascontiguousarray(a.upper, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(a.hands, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(a.base_command, dtype="<f8").tobytes())


def _unpack_action(buf, lay: _Layout) -> Action:
    upper = np.frombuffer(buf.read(8 * lay.n_upper), dtype="<f8").copy()
    hands = np.frombuffer(buf.read(8 * lay.n_hands), dtype="<f8").copy()
    bc = np.frombuffer(buf.read(32), dtype="<f8").copy()
    return Action(upper, hands, bc)


def encode_episode(ep: Episode, lay: _Layout) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<QB", ep.seed, 1 if ep.success else 0))
    buf.write(np.ascontiguousarray(ep.tracking.as_array(), dtype="<f8").tobytes())
    buf.write(struct.pack("<I", len(ep.provenance.segments)))
    for seg in ep.provenance.segments:
        buf.write(struct.pack("<BII", SEGMENT_KINDS.index(seg.kind), seg.start, seg.end))
        buf.write(struct.pack("<H", len(seg.skill_ids)))
        for sid in seg.skill_ids:
            raw = sid.encode()
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
    buf.write(struct.pack("<I", len(ep.steps)))
    for step in ep.steps:
        _pack_state(buf, step.state, lay)
        buf.write(struct.pack("<B", 0))  # image slot reserved, absent
        _pack_action(buf, step.stored, lay)
        _pack_action(buf, step.executed, lay)
    _pack_state(buf, ep.final_state, lay)
    return buf.getvalue()


def decode_episode(payload: bytes, lay: _Layout, source_demo: str) -> Episode:
    buf = io.BytesIO(payload)
    seed, success = struct.unpack("<QB", buf.read(9))
    tracking = TrackingError.from_array(np.frombuffer(buf.read(32), dtype="<f8"))
    (n_seg,) = struct.unpack("<I", buf.read(4))
    segments = []
    for _ in range(n_seg):
        kind, start, end = struct.unpack("<BII", buf.read(9))
        (n_ids,) = struct.unpack("<H", buf.read(2))
        ids = []
        for _ in range(n_ids):
            (ln,) = struct.unpack("<H", buf.read(2))
            ids.append(buf.read(ln).decode())
        segments.append(Segment(SEGMENT_KINDS[kind], start, end, tuple(ids)))
    (n_steps,) = struct.unpack("<I", buf.read(4))
    steps = []
    for i in range(n_steps):
        state = _unpack_state(buf, lay, i)
        (img,) = struct.unpack("<B", buf.read(1))
        if img != 0:
            raise DatasetError("unexpected image payload")
        stored = _unpack_action(buf, lay)
        executed = _unpack_action(buf, lay)
        steps.append(EpisodeStep(state, observe(state), stored, executed))
    final_state = _unpack_state(buf, lay, n_steps)
    if buf.read(1):
        raise DatasetError("trailing bytes in episode payload")
    return Episode(
        tuple(steps), final_state, bool(success), seed, tracking,
        Provenance(source_demo, tuple(segments)),
    )


class DatasetWriter:
    """Streaming single-writer appender; patches the episode count on close."""

    def __init__(self, path: str | Path, header: dict):
        header = dict(header)
        header["format_version"] = VERSION
        self.layout = _Layout(header)
        self.header = header
        self.count = 0
        self._f = open(path, "wb")
        raw = json.dumps(header, sort_keys=True).encode()
        self._f.write(MAGIC)
        self._f.write(struct.pack("<I", VERSION))
        self._f.write(struct.pack("<Q", 0))
        self._f.write(struct.pack("<Q", len(raw)))
        self._f.write(raw)

    def append(self, ep: Episode) -> None:
        payload = encode_episode(ep, self.layout)
        self._f.write(struct.pack("<Q", len(payload)))
        self._f.write(payload)
        self.count += 1

    def close(self) -> None:
        self._f.seek(_COUNT_OFFSET)
        self._f.write(struct.pack("<Q", self.count))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_dataset(path: str | Path, header: dict, episodes) -> None:
    with DatasetWriter(path, header) as w:
        for ep in episodes:
            w.append(ep)


def read_header(path: str | Path) -> tuple[dict, int]:
    """(header, episode_count) without reading episodes."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise DatasetError(f"{path}: not a dataset file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise DatasetVersionError(f"{path}: version {version}, reader supports {VERSION}")
        (count,) = struct.unpack("<Q", f.read(8))
        (hlen,) = struct.unpack("<Q", f.read(8))
        raw = f.read(hlen)
        if len(raw) != hlen:
            raise DatasetTruncatedError(0, "header cut short")
        return json.loads(raw.decode()), count


def iter_episodes(path: str | Path):
    """Stream episodes; each is decodable without reading the rest."""
    header, count = read_header(path)
    lay = _Layout(header)
    demo_name = header.get("demo_name", "")
    with open(path, "rb") as f:
        f.seek(4 + 4 + 8)
        (hlen,) = struct.unpack("<Q", f.read(8))
        f.seek(hlen, 1)
        for i in range(count):
            raw = f.read(8)
            if len(raw) < 8:
                raise DatasetTruncatedError(i, "missing length prefix")
            (plen,) = struct.unpack("<Q", raw)
            payload = f.read(plen)
            if len(payload) != plen:
                raise DatasetTruncatedError(i, f"payload cut short ({len(payload)}/{plen} bytes)")
            yield decode_episode(payload, lay, demo_name)


def read_dataset(path: str | Path) -> DatasetFile:
    """Load the whole file; round-trips bit-exactly through write_dataset."""
    header, _ = read_header(path)
    return DatasetFile(header, list(iter_episodes(path)))


def verify_input_hashes(header: dict, base_dir: str | Path) -> None:
    """Check the referenced robot/scene/demo files against recorded hashes."""
    from locogen.io.demo import file_sha256

    base = Path(base_dir)
    for key in ("robot", "scene", "demo"):
        rel = header.get(key)
        want = header.get(f"{key}_sha256")
        if rel is None or want is None:
            continue
        p = base / rel
        if not p.exists():
            raise DatasetHashError(f"referenced {key} file {p} not found")
        got = file_sha256(p)
        if got != want:
            raise DatasetHashError(f"{key} file {p} hash mismatch: {got} != {want}")
