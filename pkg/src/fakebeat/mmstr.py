"""Spatial-temporal map extraction: face masking, ROI-grid average pooling,
prior block selection, and the binary map file format.

A map holds, per frame, the mean intensity of every valid pixel in each of
rows x cols non-overlapping blocks partitioning the face bounding box, per
color channel: a (T, N, C) array with N = rows * cols, block n = r * cols + c.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import media_io
from .media_io import FOREHEAD, JAW, LEFT_EYE, NOSE_BRIDGE, RIGHT_EYE

MAP_MAGIC = b"MMST"
MAP_VERSION = 1

# landmark roles used for the prior blocks: the four eye corners and the two
# nose-bridge points between the eyes
EYE_CORNERS = (36, 39, 42, 45)


@dataclass
class RoiGrid:
    """Non-overlapping rows x cols grid anchored to one face bounding box."""

    rows: int
    cols: int
    box: tuple  # (x0, y0, x1, y1) floats, half-open in pixel space

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must be at least 1x1")
        x0, y0, x1, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate face box {self.box}")

    @property
    def n_blocks(self):
        return self.rows * self.cols

    def block_of(self, x, y):
        """Block index of a point, clipped into the box."""
        x0, y0, x1, y1 = self.box
        c = int(np.clip((x - x0) / (x1 - x0) * self.cols, 0, self.cols - 1e-9))
        r = int(np.clip((y - y0) / (y1 - y0) * self.rows, 0, self.rows - 1e-9))
        return r * self.cols + c

    @property
    def block_height(self):
        return (self.box[3] - self.box[1]) / self.rows


@dataclass
class MmstMap:
    """The pooled (T, N, C) map plus its grid and provenance metadata."""

    values: np.ndarray
    grid: RoiGrid
    fps: float
    prior_blocks: tuple = ()
    fallback_count: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError("map values must be (T, N, C)")
        if not np.isfinite(self.values).all():
            raise ValueError("map contains non-finite values")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("map values outside [0, 1]")

    @property
    def shape(self):
        return self.values.shape

    def block_major(self):
        """(N, T, C) view for block-major consumers."""
        return self.values.transpose(1, 0, 2)


# ---------------------------------------------------------------------------
# geometry


def convex_hull(points):
    """Andrew's monotone chain; returns hull vertices in counter-clockwise order."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        raise ValueError("degenerate polygon: fewer than 3 distinct landmarks")
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise ValueError("degenerate polygon: collinear landmarks")
    return hull


def points_in_polygon(px, py, poly):
    """Even-odd crossing test, edges half-open in y; px/py are equal-shape arrays."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(px.shape, dtype=bool)
    x1, y1 = poly[-1]
    for x2, y2 in poly:
        crosses = (y1 <= py) != (y2 <= py)
        if np.any(crosses):
            xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < xi)
        x1, y1 = x2, y2
    return inside


def face_box(landmarks):
    """Bounding box (x0, y0, x1, y1) of the face contour (jaw + forehead)."""
    contour = landmarks[list(JAW) + list(FOREHEAD)]
    x0, y0 = contour.min(axis=0)
    x1, y1 = contour.max(axis=0)
    return float(x0), float(y0), float(x1), float(y1)


def mask_face(frame, landmarks):
    """Zero out background and eyes; returns (masked frame, validity mask).

    Valid pixels lie inside the convex hull of the jaw + forehead landmarks
    and outside both eye polygons.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if landmarks.shape != (media_io.N_LANDMARKS, 2):
        raise ValueError(f"expected {media_io.N_LANDMARKS} landmarks")
    h, w = frame.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    hull = convex_hull(landmarks[list(JAW) + list(FOREHEAD)])
    valid = points_in_polygon(xx, yy, hull)
    for eye in (LEFT_EYE, RIGHT_EYE):
        valid &= ~points_in_polygon(xx, yy, convex_hull(landmarks[list(eye)]))
    masked = frame.copy()
    masked[~valid] = 0.0
    return masked, valid


def median_face_box(track):
    """Per-video median of the per-frame face boxes (valid frames only)."""
    boxes = np.array([face_box(p) for p in track.points if p is not None])
    if len(boxes) == 0:
        raise ValueError("track has no valid frames")
    x0, y0, x1, y1 = np.median(boxes, axis=0)
    return float(x0), float(y0), float(x1), float(y1)


def make_grid(track, rows, cols):
    """Grid anchored to the median face box, so block identity is stable in time."""
    return RoiGrid(rows=rows, cols=cols, box=median_face_box(track))


def block_index_map(grid, h, w):
    """(H, W) int array of block indices; -1 outside the face box."""
    yy, xx = np.mgrid[0:h, 0:w]
    x0, y0, x1, y1 = grid.box
    inside = (xx >= x0) & (xx < x1) & (yy >= y0) & (yy < y1)
    c = np.clip(((xx - x0) / (x1 - x0) * grid.cols).astype(int), 0, grid.cols - 1)
    r = np.clip(((yy - y0) / (y1 - y0) * grid.rows).astype(int), 0, grid.rows - 1)
    idx = r * grid.cols + c
    idx[~inside] = -1
    return idx


# ---------------------------------------------------------------------------
# pooling


def compute_mmst_map(seq, track, grid, valid_masks=None):
    """Average-pool each block and color channel per frame.

    Entry (i, n, c) is the mean over valid pixels of channel c in block n of
    frame i. Blocks with no valid pixels fall back to the frame's face-wide
    channel mean (counted in fallback_count). A frame with no valid pixels at
    all is an error.
    """
    t, h, w, ch = seq.frames.shape
    if len(track) != t:
        raise ValueError("track length does not match frame count")
    if not track.valid.all():
        raise ValueError("pooling requires a track valid on all frames")
    idx_map = block_index_map(grid, h, w)
    n = grid.n_blocks
    values = np.empty((t, n, ch), dtype=np.float32)
    fallbacks = 0

    mask_cache = {}
    for i in range(t):
        if valid_masks is not None:
            valid = valid_masks[i]
        else:
            key = track.points[i].tobytes()
            valid = mask_cache.get(key)
            if valid is None:
                valid = mask_face(seq.frames[i], track.points[i])[1]
                mask_cache[key] = valid
        if not valid.any():
            raise ValueError(f"frame {i} has no valid pixels")
        sel = valid & (idx_map >= 0)
        flat_idx = idx_map[sel]
        counts = np.bincount(flat_idx, minlength=n)
        frame = seq.frames[i].astype(np.float64)
        face_mean = frame[valid].mean(axis=0)
        empty = counts == 0
        fallbacks += int(empty.sum())
        for c in range(ch):
            sums = np.bincount(flat_idx, weights=frame[..., c][sel], minlength=n)
            with np.errstate(invalid="ignore"):
                means = sums / counts
            means[empty] = face_mean[c]
            values[i, :, c] = means.astype(np.float32)
    return MmstMap(values=values, grid=grid, fps=seq.fps, fallback_count=fallbacks)


# ---------------------------------------------------------------------------
# prior blocks


def _neighbors_bfs(grid, start, used):
    """First unused block reachable from start, expanding right/down/left/up."""
    rows, cols = grid.rows, grid.cols
    offsets = ((0, 1), (1, 0), (0, -1), (-1, 0))  # right, down, left, up
    queue = [start]
    seen = {start}
    while queue:
        cur = queue.pop(0)
        r, c = divmod(cur, cols)
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < rows and 0 <= cc < cols):
                continue
            cand = rr * cols + cc
            if cand in seen:
                continue
            seen.add(cand)
            if cand not in used:
                return cand
            queue.append(cand)
    return None


def prior_block_set(track, grid):
    """The six physiologically robust blocks.

    Four blocks holding the eye corners shifted down by one block height, and
    the two blocks holding the nose-bridge landmarks between the eyes.
    Duplicate hits move to the nearest unused neighbor (scanning right, down,
    left, up). Returns a sorted tuple of 6 distinct indices.
    """
    if grid.n_blocks < 6:
        raise ValueError("cannot place 6 prior blocks: grid too coarse")
    pts = np.median(np.stack([p for p in track.points if p is not None]), axis=0)
    targets = [(pts[i][0], pts[i][1] + grid.block_height) for i in EYE_CORNERS]
    targets += [tuple(pts[i]) for i in NOSE_BRIDGE]
    used = set()
    for x, y in targets:
        blk = grid.block_of(x, y)
        if blk in used:
            blk = _neighbors_bfs(grid, blk, used)
            if blk is None:
                raise ValueError("cannot place 6 prior blocks: grid exhausted")
        used.add(blk)
    return tuple(sorted(used))


def prior_attention(prior_blocks, n_blocks):
    """Binary vector with ones exactly at the prior block indices."""
    s_p = np.zeros(n_blocks, dtype=np.float32)
    s_p[list(prior_blocks)] = 1.0
    return s_p


# ---------------------------------------------------------------------------
# serialization


def save_map(mmap, path):
    """Binary map file: magic, version, T, N, C (uint32 LE), fps (float32 LE),
    then row-major float32 values. Metadata goes to a JSON sidecar."""
    p = Path(path)
    t, n, c = mmap.values.shape
    header = struct.pack("<4sIIIIf", MAP_MAGIC, MAP_VERSION, t, n, c, float(mmap.fps))
    p.write_bytes(header + mmap.values.astype("<f4").tobytes())
    meta = {
        "rows": mmap.grid.rows,
        "cols": mmap.grid.cols,
        "box": list(mmap.grid.box),
        "prior_blocks": list(mmap.prior_blocks),
        "fallback_count": mmap.fallback_count,
    }
    meta.update(mmap.meta)
    Path(str(p) + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_map(path):
    p = Path(path)
    raw = p.read_bytes()
    magic, version, t, n, c, fps = struct.unpack_from("<4sIIIIf", raw)
    if magic != MAP_MAGIC:
        raise ValueError(f"not a map file: {p}")
    if version != MAP_VERSION:
        raise ValueError(f"unsupported map version {version}")
    values = np.frombuffer(raw, dtype="<f4", offset=struct.calcsize("<4sIIIIf"))
    values = values.reshape(t, n, c).copy()
    meta = json.loads(Path(str(p) + ".json").read_text())
    grid = RoiGrid(rows=meta.pop("rows"), cols=meta.pop("cols"), box=tuple(meta.pop("box")))
    prior = tuple(meta.pop("prior_blocks"))
    fallback = meta.pop("fallback_count")
    return MmstMap(values=values, grid=grid, fps=fps, prior_blocks=prior,
                   fallback_count=fallback, meta=meta)
