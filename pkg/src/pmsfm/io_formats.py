"""Bit-exact serialization for pointmaps, depth maps, poses, graphs, reports.

Binary containers are little-endian regardless of host, with payload
sizes fully determined by the header. Text documents are line oriented
with ``#`` comments, stable field order, and shortest-round-trip decimal
floats (Python ``repr``), so write-read is value-exact. Readers reject
malformed input, never repair it.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import DepthMap, Pointmap
from .metrics import SequenceReport
from .pose_graph import Edge, GlobalPoses, PoseGraph

MAGIC_POINTMAP = b"PMAP1"
MAGIC_DEPTH = b"DMAP1"
FLAG_CONFIDENCE = 1
FLAG_MASK = 2

_HEADER = struct.Struct("<III")
_HEADER_END = 5 + _HEADER.size  # magic + width/height/flags

FORMAT_DOC = """\
pmsfm on-disk formats
=====================

Pixel convention: (i, j) = (column/x, row/y), zero-indexed. "Row-major"
payloads iterate rows (j) outer, columns (i) inner. All binary numbers
are little-endian regardless of host. All text files are UTF-8, one
record per line, with '#' starting a comment line and a stable field
order; floats print with shortest-round-trip decimals so reading them
back is value-exact.

Pointmap container (magic "PMAP1")
----------------------------------
offset  size          field
0       5             magic bytes "PMAP1"
5       4             width  (u32 LE)
9       4             height (u32 LE)
13      4             flags  (u32 LE): bit 0 = has confidence plane,
                      bit 1 = has mask plane
17      W*H*3*4       points, float32 LE, row-major, (x, y, z) per pixel
...     W*H*4         confidence plane, float32 LE (if flag bit 0)
...     W*H           mask plane, bytes 0/1 (if flag bit 1)

The file length must match the header exactly. Confidence values must
be strictly positive and finite; mask bytes must be 0 or 1; NaN is
forbidden in masked-in point entries. Without a mask plane every pixel
counts as valid; without a confidence plane confidence reads as 1.

Depth container (magic "DMAP1")
-------------------------------
Same 17-byte header; flag bit 0 must be 0 (no confidence plane). The
payload is one float32 depth plane, then the optional mask plane.
Masked-in depths must be strictly positive and finite; masked-out
pixels must carry depth 0.

Poses document ("pmsfm poses v1")
---------------------------------
    # pmsfm poses v1
    frames <count>
    frame <id> recovered <0|1>
    <m00> <m01> <m02> <m03>        4 rows: the 4x4 row-major
    ...                            world-to-camera matrix
Repeated per frame, ascending file order. Frame ids may be any
non-negative integers (e.g. original video frame numbers).

Pose graph document ("pmsfm pose graph v1")
-------------------------------------------
    # pmsfm pose graph v1
    frames <n_frames>
    edge <i> <j> <r00 r01 r02 r10 r11 r12 r20 r21 r22> <t0 t1 t2> <weight> <quality>
The edge transform maps frame-j camera coordinates to frame-i camera
coordinates; weight is the averaging concentration, quality the inlier
fraction that passed filtering.

Sequence report ("pmsfm sequence report v1")
--------------------------------------------
Flat key-value lines: n_frames, rot_error_deg, trans_error, trans_rmse,
det_rate_pct, acc_15_15_pct, acc_30_30_pct, partial (0/1). Error means
cover recovered frames only when partial is 1.
"""


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# binary containers


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated payload: needed {self.pos + n} bytes, file has "
                f"{len(self.data)}", offset=len(self.data))
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out


def _read_header(cur: _Cursor, magic: bytes) -> tuple[int, int, int]:
    got = cur.take(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    width, height, flags = _HEADER.unpack(cur.take(_HEADER.size))
    if width == 0 or height == 0:
        raise FormatError("zero image dimension in header", offset=5)
    if flags & ~(FLAG_CONFIDENCE | FLAG_MASK):
        raise FormatError(f"unknown flag bits {flags:#x}", offset=13)
    return width, height, flags


def _read_mask(cur: _Cursor, n: int) -> np.ndarray:
    start = cur.pos
    raw = np.frombuffer(cur.take(n), dtype=np.uint8)
    bad = np.flatnonzero(raw > 1)
    if len(bad):
        raise FormatError(f"mask byte is {raw[bad[0]]}, expected 0 or 1",
                          offset=start + int(bad[0]))
    return raw.astype(bool)


def _expect_end(cur: _Cursor):
    if cur.pos != len(cur.data):
        raise FormatError(
            f"trailing data: expected {cur.pos} bytes, file has {len(cur.data)}",
            offset=cur.pos)


def pointmap_to_bytes(pm: Pointmap, with_confidence: bool = True,
                      with_mask: bool = True) -> bytes:
    flags = (FLAG_CONFIDENCE if with_confidence else 0) | (FLAG_MASK if with_mask else 0)
    parts = [MAGIC_POINTMAP, _HEADER.pack(pm.width, pm.height, flags),
             pm.points.astype("<f4").tobytes()]
    if with_confidence:
        parts.append(pm.confidence.astype("<f4").tobytes())
    if with_mask:
        parts.append(pm.mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def pointmap_from_bytes(data: bytes, frame_id: str = "") -> Pointmap:
    cur = _Cursor(data)
    width, height, flags = _read_header(cur, MAGIC_POINTMAP)
    n = width * height

    points_off = cur.pos
    points = np.frombuffer(cur.take(n * 12), dtype="<f4").astype(np.float64)
    points = points.reshape(height, width, 3)
    if flags & FLAG_CONFIDENCE:
        conf_off = cur.pos
        conf = np.frombuffer(cur.take(n * 4), dtype="<f4").astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(conf) | (conf <= 0))
        if len(bad):
            raise FormatError(
                f"confidence value {conf[bad[0]]} is not strictly positive"
                " and finite", offset=conf_off + int(bad[0]) * 4)
        conf = conf.reshape(height, width)
    else:
        conf = np.ones((height, width))
    if flags & FLAG_MASK:
        mask = _read_mask(cur, n).reshape(height, width)
    else:
        mask = np.ones((height, width), dtype=bool)
    _expect_end(cur)

    bad = np.flatnonzero(~np.isfinite(points.reshape(-1, 3)[mask.reshape(-1)]).all(axis=1))
    if len(bad):
        flat_idx = int(np.flatnonzero(mask.reshape(-1))[bad[0]])
        raise FormatError("NaN/inf in a masked-in point",
                          offset=points_off + flat_idx * 12)
    return Pointmap(width, height, points, conf, mask, frame_id=frame_id)


def depthmap_to_bytes(dm: DepthMap, with_mask: bool = True) -> bytes:
    flags = FLAG_MASK if with_mask else 0
    parts = [MAGIC_DEPTH, _HEADER.pack(dm.width, dm.height, flags),
             dm.depth.astype("<f4").tobytes()]
    if with_mask:
        parts.append(dm.mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def depthmap_from_bytes(data: bytes) -> DepthMap:
    cur = _Cursor(data)
    width, height, flags = _read_header(cur, MAGIC_DEPTH)
    if flags & FLAG_CONFIDENCE:
        raise FormatError("depth containers carry no confidence plane", offset=13)
    n = width * height

    depth_off = cur.pos
    depth = np.frombuffer(cur.take(n * 4), dtype="<f4").astype(np.float64)
    if flags & FLAG_MASK:
        mask = _read_mask(cur, n)
    else:
        mask = depth > 0
    _expect_end(cur)

    bad = np.flatnonzero(mask & (~np.isfinite(depth) | (depth <= 0)))
    if len(bad):
        raise FormatError(f"masked-in depth {depth[bad[0]]} is not strictly"
                          " positive and finite", offset=depth_off + int(bad[0]) * 4)
    bad = np.flatnonzero(~mask & (depth != 0))
    if len(bad):
        raise FormatError(f"masked-out pixel carries depth {depth[bad[0]]}, expected 0",
                          offset=depth_off + int(bad[0]) * 4)
    return DepthMap(width, height, depth.reshape(height, width),
                    mask.reshape(height, width))


def write_pointmap(path, pm: Pointmap, with_confidence: bool = True,
                   with_mask: bool = True):
    Path(path).write_bytes(pointmap_to_bytes(pm, with_confidence, with_mask))


def read_pointmap(path, frame_id: str = "") -> Pointmap:
    return pointmap_from_bytes(Path(path).read_bytes(), frame_id=frame_id)


def write_depthmap(path, dm: DepthMap, with_mask: bool = True):
    Path(path).write_bytes(depthmap_to_bytes(dm, with_mask))


def read_depthmap(path) -> DepthMap:
    return depthmap_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# text documents


class _Lines:
    """Content lines with original numbers; comments and blanks skipped."""

    def __init__(self, text: str):
        self.lines = [(n + 1, line.strip()) for n, line in enumerate(text.splitlines())
                      if line.strip() and not line.strip().startswith("#")]
        self.pos = 0

    def next(self, what: str) -> tuple[int, str]:
        if self.pos >= len(self.lines):
            raise FormatError(f"unexpected end of document, expected {what}")
        out = self.lines[self.pos]
        self.pos += 1
        return out

    def done(self) -> bool:
        return self.pos >= len(self.lines)


def _parse_floats(lineno: int, line: str, n: int, what: str) -> list[float]:
    parts = line.split()
    if len(parts) != n:
        raise FormatError(f"line {lineno}: expected {n} {what} fields, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise FormatError(f"line {lineno}: {exc}") from None


def poses_to_text(poses: GlobalPoses, frame_ids=None) -> str:
    if frame_ids is None:
        frame_ids = list(range(poses.n_frames))
    if len(frame_ids) != poses.n_frames:
        raise FormatError(f"{len(frame_ids)} frame ids for {poses.n_frames} poses")
    out = ["# pmsfm poses v1", f"frames {poses.n_frames}"]
    for k in range(poses.n_frames):
        out.append(f"frame {frame_ids[k]} recovered {int(poses.recovered[k])}")
        m = np.eye(4)
        m[:3, :3] = poses.rotations[k]
        m[:3, 3] = poses.translations[k]
        for row in m:
            out.append(" ".join(_fmt(x) for x in row))
    return "\n".join(out) + "\n"


def poses_from_text(text: str) -> tuple[GlobalPoses, list[int]]:
    lines = _Lines(text)
    lineno, line = lines.next("frames header")
    parts = line.split()
    if len(parts) != 2 or parts[0] != "frames":
        raise FormatError(f"line {lineno}: expected 'frames <count>', got {line!r}")
    try:
        n = int(parts[1])
    except ValueError:
        raise FormatError(f"line {lineno}: bad frame count {parts[1]!r}") from None

    rotations = np.zeros((n, 3, 3))
    translations = np.zeros((n, 3))
    recovered = np.zeros(n, dtype=bool)
    frame_ids = []
    for k in range(n):
        lineno, line = lines.next("frame header")
        parts = line.split()
        if len(parts) != 4 or parts[0] != "frame" or parts[2] != "recovered":
            raise FormatError(
                f"line {lineno}: expected 'frame <id> recovered <0|1>', got {line!r}")
        try:
            frame_ids.append(int(parts[1]))
            flag = int(parts[3])
        except ValueError:
            raise FormatError(f"line {lineno}: bad integer in {line!r}") from None
        if flag not in (0, 1):
            raise FormatError(f"line {lineno}: recovered flag must be 0 or 1")
        recovered[k] = bool(flag)
        m = np.zeros((4, 4))
        for r in range(4):
            lineno, line = lines.next("matrix row")
            m[r] = _parse_floats(lineno, line, 4, "matrix")
        if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-12):
            raise FormatError(f"line {lineno}: last matrix row must be 0 0 0 1")
        rotations[k] = m[:3, :3]
        translations[k] = m[:3, 3]
    if not lines.done():
        lineno, line = lines.next("")
        raise FormatError(f"line {lineno}: trailing content {line!r}")
    try:
        return GlobalPoses(rotations, translations, recovered), frame_ids
    except ValueError as exc:
        raise FormatError(f"invalid pose document: {exc}") from None


def graph_to_text(graph: PoseGraph) -> str:
    out = ["# pmsfm pose graph v1", f"frames {graph.n_frames}"]
    for e in graph.edges:
        fields = ([str(e.i), str(e.j)]
                  + [_fmt(x) for x in e.rotation.reshape(-1)]
                  + [_fmt(x) for x in e.translation]
                  + [_fmt(e.weight), _fmt(e.quality)])
        out.append("edge " + " ".join(fields))
    return "\n".join(out) + "\n"


def graph_from_text(text: str) -> PoseGraph:
    lines = _Lines(text)
    lineno, line = lines.next("frames header")
    parts = line.split()
    if len(parts) != 2 or parts[0] != "frames":
        raise FormatError(f"line {lineno}: expected 'frames <count>', got {line!r}")
    try:
        n = int(parts[1])
    except ValueError:
        raise FormatError(f"line {lineno}: bad frame count {parts[1]!r}") from None
    edges = []
    while not lines.done():
        lineno, line = lines.next("edge")
        parts = line.split()
        if parts[0] != "edge" or len(parts) != 17:
            raise FormatError(
                f"line {lineno}: expected 'edge i j r00..r22 t0..t2 weight quality'")
        try:
            i, j = int(parts[1]), int(parts[2])
        except ValueError:
            raise FormatError(f"line {lineno}: bad edge endpoints") from None
        vals = _parse_floats(lineno, " ".join(parts[3:]), 14, "edge")
        try:
            edges.append(Edge(
                i=i, j=j,
                rotation=np.array(vals[:9]).reshape(3, 3),
                translation=np.array(vals[9:12]),
                weight=vals[12], quality=vals[13],
            ))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: invalid edge: {exc}") from None
    try:
        return PoseGraph(n_frames=n, edges=tuple(edges))
    except ValueError as exc:
        raise FormatError(f"invalid pose graph: {exc}") from None


_REPORT_FIELDS = ("n_frames", "rot_error_deg", "trans_error", "trans_rmse",
                  "det_rate_pct", "acc_15_15_pct", "acc_30_30_pct", "partial")


def report_to_text(report: SequenceReport) -> str:
    out = ["# pmsfm sequence report v1",
           f"n_frames {report.n_frames}",
           f"rot_error_deg {_fmt(report.rot_error_deg)}",
           f"trans_error {_fmt(report.trans_error)}",
           f"trans_rmse {_fmt(report.trans_rmse)}",
           f"det_rate_pct {_fmt(report.det_rate_pct)}",
           f"acc_15_15_pct {_fmt(report.acc_15_15_pct)}",
           f"acc_30_30_pct {_fmt(report.acc_30_30_pct)}",
           f"partial {int(report.partial)}"]
    return "\n".join(out) + "\n"


def report_from_text(text: str) -> SequenceReport:
    values = {}
    lines = _Lines(text)
    while not lines.done():
        lineno, line = lines.next("key value")
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 'key value', got {line!r}")
        if parts[0] not in _REPORT_FIELDS:
            raise FormatError(f"line {lineno}: unknown report field {parts[0]!r}")
        values[parts[0]] = parts[1]
    missing = [f for f in _REPORT_FIELDS if f not in values]
    if missing:
        raise FormatError(f"missing report fields: {missing}")
    try:
        return SequenceReport(
            n_frames=int(values["n_frames"]),
            rot_error_deg=float(values["rot_error_deg"]),
            trans_error=float(values["trans_error"]),
            trans_rmse=float(values["trans_rmse"]),
            det_rate_pct=float(values["det_rate_pct"]),
            acc_15_15_pct=float(values["acc_15_15_pct"]),
            acc_30_30_pct=float(values["acc_30_30_pct"]),
            partial=bool(int(values["partial"])),
        )
    except ValueError as exc:
        raise FormatError(f"bad report value: {exc}") from None


def write_poses(path, poses: GlobalPoses, frame_ids=None):
    Path(path).write_text(poses_to_text(poses, frame_ids), encoding="utf-8")


def read_poses(path) -> tuple[GlobalPoses, list[int]]:
    return poses_from_text(Path(path).read_text(encoding="utf-8"))


def write_graph(path, graph: PoseGraph):
    Path(path).write_text(graph_to_text(graph), encoding="utf-8")


def read_graph(path) -> PoseGraph:
    return graph_from_text(Path(path).read_text(encoding="utf-8"))


def write_report(path, report: SequenceReport):
    Path(path).write_text(report_to_text(report), encoding="utf-8")


def read_report(path) -> SequenceReport:
    return report_from_text(Path(path).read_text(encoding="utf-8"))
