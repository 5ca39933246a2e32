"""Frame-sequence and landmark IO, synthetic pulse-video generation, degradations.

Frames are stored as (T, H, W, 3) float32 arrays with intensities in [0, 1].
Landmarks use the 81-point face layout (the 68 classic points plus a 13-point
forehead arc, indices 68..80); coordinates are (x, y) pixels.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.fft import dctn, idctn
from scipy.ndimage import convolve1d

N_LANDMARKS = 81
JAW = tuple(range(0, 17))
LEFT_EYE = tuple(range(36, 42))     # image-left eye; 36 outer corner, 39 inner
RIGHT_EYE = tuple(range(42, 48))    # image-right eye; 42 inner corner, 45 outer
NOSE_BRIDGE = (27, 28)              # the two landmarks between the eyes
FOREHEAD = tuple(range(68, 81))

MAX_FRAMES = 300        # frames kept from the start of each video
MAX_DROPPED = 50        # invalid-frame budget before a video is rejected

DISRUPTIONS = ("none", "flatten", "phase_scramble", "block_texture")
DEGRADATION_KINDS = ("jpeg", "blur", "noise", "sampling")

# Pulse modulation is strongest in green, weaker in red/blue (blood absorption).
PULSE_CHANNEL_MIX = np.array([0.35, 1.0, 0.55], dtype=np.float64)

# synthetic face proportions (fractions of the face semi-axes), shared by the
# landmark layout and the renderer
EYE_DX_FRAC = 0.45
EYE_W_FRAC = 0.20
EYE_Y_FRAC = 0.22
EYE_H_FRAC = 0.09


class VideoRejected(RuntimeError):
    """Raised when too many frames of a video are invalid."""

    def __init__(self, dropped, budget):
        super().__init__(f"video rejected: {dropped} invalid frames exceed budget {budget}")
        self.dropped = dropped
        self.budget = budget


@dataclass
class FrameSequence:
    """Ordered RGB frames at a fixed frame rate."""

    frames: np.ndarray   # (T, H, W, 3) float32 in [0, 1]
    fps: float
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[3] != 3:
            raise ValueError(f"frames must be (T,H,W,3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("frame count must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities outside [0,1]: min={lo}, max={hi}")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def frame_shape(self):
        return self.frames.shape[1:3]


@dataclass
class LandmarkTrack:
    """Per-frame 81-point landmarks; frames without points are invalid."""

    points: list          # per frame: (81, 2) float array or None
    valid: np.ndarray     # (T,) bool

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        if len(self.points) != len(self.valid):
            raise ValueError("points/valid length mismatch")
        for i, pts in enumerate(self.points):
            if (pts is None) == bool(self.valid[i]):
                raise ValueError(f"frame {i}: valid flag inconsistent with points presence")
            if pts is not None and pts.shape != (N_LANDMARKS, 2):
                raise ValueError(f"frame {i}: expected {N_LANDMARKS} landmarks, got {pts.shape[0]}")

    def __len__(self):
        return len(self.points)


@dataclass
class DegradationSpec:
    """One corruption: kind plus its scalar degree.

    Degrees follow the usual 8-bit video conventions: jpeg quality in [0,100],
    blur kernel size (odd, >= 1), noise standard deviation in 8-bit intensity
    levels (applied as degree/255 to unit-range frames), sampling interval
    K >= 1 (keep every K-th frame).
    """

    kind: str
    degree: float

    def __post_init__(self):
        if self.kind not in DEGRADATION_KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        d = self.degree
        if self.kind == "jpeg" and not (0 < d <= 100):
            raise ValueError("jpeg quality must be in (0, 100]")
        if self.kind == "blur" and (d < 1 or int(d) != d or int(d) % 2 == 0):
            raise ValueError("blur kernel size must be an odd integer >= 1")
        if self.kind == "noise" and d < 0:
            raise ValueError("noise std must be >= 0")
        if self.kind == "sampling" and (d < 1 or int(d) != d):
            raise ValueError("sampling interval must be an integer >= 1")


@dataclass
class SynthSpec:
    """Parameters for one synthetic pulse video."""

    height: int = 128
    width: int = 128
    n_frames: int = 300
    fps: float = 30.0
    pulse_freq: float = 1.2        # Hz
    pulse_amp: float = 0.008       # intensity units
    label: str = "real"
    disruption: str = "none"
    motion_jitter: float = 0.0     # pixels (std of per-frame shift)
    illum_drift: float = 0.0       # intensity per frame
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.pulse_freq < self.fps / 2):
            raise ValueError("pulse_freq must lie in (0, fps/2)")
        if self.pulse_amp < 0:
            raise ValueError("pulse_amp must be >= 0")
        if self.label not in ("real", "fake"):
            raise ValueError(f"bad label {self.label!r}")
        if self.disruption not in DISRUPTIONS:
            raise ValueError(f"bad disruption {self.disruption!r}")
        if (self.label == "real") != (self.disruption == "none"):
            raise ValueError("label=real requires disruption=none and vice versa")


@dataclass
class ManifestEntry:
    video: str
    landmarks: str
    label: str
    split: str


@dataclass
class DatasetManifest:
    entries: list
    fps: float
    root: Path = Path(".")

    def split(self, name):
        return [e for e in self.entries if e.split == name]


# ---------------------------------------------------------------------------
# frame IO


def _read_ppm(path):
    """Binary P6 portable pixmap, maxval 255 or 65535."""
    data = path.read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"unreadable frame (not binary P6): {path}")
    w, h, maxval = (int(g) for g in m.groups())
    raw = data[m.end():]
    if maxval == 255:
        arr = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3)
    elif maxval == 65535:
        arr = np.frombuffer(raw, dtype=">u2", count=h * w * 3)
    else:
        raise ValueError(f"unsupported PPM maxval {maxval}: {path}")
    return arr.reshape(h, w, 3).astype(np.float32) / maxval


def _write_ppm(path, frame, bit_depth=16):
    h, w, _ = frame.shape
    if bit_depth == 16:
        maxval = 65535
        payload = np.round(frame.astype(np.float64) * maxval).astype(">u2").tobytes()
    else:
        maxval = 255
        payload = np.round(frame.astype(np.float64) * maxval).astype(np.uint8).tobytes()
    path.write_bytes(b"P6\n%d %d\n%d\n" % (w, h, maxval) + payload)


def load_frame_sequence(dir_path, fps):
    """Load lexicographically ordered .ppm/.png frames from a directory."""
    d = Path(dir_path)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory not found: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".ppm", ".png"))
    if not files:
        raise ValueError(f"no frames found in {d}")
    frames = []
    shape = None
    for p in files:
        try:
            if p.suffix.lower() == ".ppm":
                arr = _read_ppm(p)
            else:
                with Image.open(p) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except ValueError:
            raise
        except Exception as exc:
            raise ValueError(f"unreadable frame {p}: {exc}") from exc
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ValueError(f"inconsistent dimensions: {p} is {arr.shape[:2]}, expected {shape[:2]}")
        frames.append(arr)
    return FrameSequence(np.stack(frames), fps=fps, source_id=d.name)


def save_frame_sequence(seq, dir_path, fmt="ppm", bit_depth=16):
    """Write frames as zero-padded numeric files; returns the directory."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    digits = max(4, len(str(seq.n_frames - 1)))
    for i, frame in enumerate(seq.frames):
        name = f"{i:0{digits}d}.{fmt}"
        if fmt == "ppm":
            _write_ppm(d / name, frame, bit_depth=bit_depth)
        elif fmt == "png":
            arr = np.round(frame.astype(np.float64) * 255).astype(np.uint8)
            Image.fromarray(arr).save(d / name)
        else:
            raise ValueError(f"unsupported frame format {fmt!r}")
    return d


# ---------------------------------------------------------------------------
# landmark IO


def load_landmark_track(file_path, expected_t, frame_shape=None):
    """Parse a landmark sidecar: one line per frame, 'index x0 y0 ... x80 y80'.

    Frames without a record are marked invalid. With frame_shape given,
    coordinates are checked against the frame bounds.
    """
    p = Path(file_path)
    if not p.is_file():
        raise FileNotFoundError(f"landmark sidecar not found: {p}")
    points = [None] * expected_t
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            idx = int(fields[0])
            coords = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        except ValueError as exc:
            raise ValueError(f"{p}:{lineno}: malformed record: {exc}") from exc
        if coords.size != 2 * N_LANDMARKS:
            raise ValueError(
                f"{p}:{lineno}: expected {N_LANDMARKS} landmarks, got {coords.size // 2}"
            )
        if not 0 <= idx < expected_t:
            raise ValueError(f"{p}:{lineno}: frame index {idx} outside 0..{expected_t - 1}")
        pts = coords.reshape(N_LANDMARKS, 2)
        if frame_shape is not None:
            h, w = frame_shape
            if pts[:, 0].min() < 0 or pts[:, 0].max() >= w or pts[:, 1].min() < 0 or pts[:, 1].max() >= h:
                raise ValueError(f"{p}:{lineno}: coordinate out of frame bounds {w}x{h}")
        points[idx] = pts
    valid = np.array([pt is not None for pt in points])
    return LandmarkTrack(points=points, valid=valid)


def save_landmark_track(track, file_path):
    lines = []
    for i, pts in enumerate(track.points):
        if pts is None:
            continue
        flat = " ".join(f"{v:.4f}" for v in pts.reshape(-1))
        lines.append(f"{i} {flat}")
    Path(file_path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# face selection / preprocessing


def _bbox(points):
    x0, y0 = points.min(axis=0)
    x1, y1 = points.max(axis=0)
    return x0, y0, x1, y1


def _bbox_center(points):
    x0, y0, x1, y1 = _bbox(points)
    return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])


def _bbox_area(points):
    x0, y0, x1, y1 = _bbox(points)
    return (x1 - x0) * (y1 - y0)


def select_face(candidates_per_frame, prev_center=None):
    """Keep one landmark set per frame.

    A single candidate is kept as is. Among several, the one whose bounding-box
    center is closest to the previously retained center wins; if there is no
    previous center yet, the largest bounding box wins. Frames with no
    candidates become invalid.
    """
    points = []
    center = None if prev_center is None else np.asarray(prev_center, dtype=np.float64)
    for cands in candidates_per_frame:
        if not cands:
            points.append(None)
            continue
        if len(cands) == 1:
            chosen = cands[0]
        elif center is None:
            chosen = max(cands, key=_bbox_area)
        else:
            chosen = min(cands, key=lambda p: float(np.linalg.norm(_bbox_center(p) - center)))
        chosen = np.asarray(chosen, dtype=np.float64)
        points.append(chosen)
        center = _bbox_center(chosen)
    valid = np.array([pt is not None for pt in points])
    return LandmarkTrack(points=points, valid=valid)


def preprocess_video(seq, track, max_frames=MAX_FRAMES, max_dropped=MAX_DROPPED):
    """Truncate to the first max_frames frames and drop landmark-invalid ones.

    Raises VideoRejected when the truncated window contains more than
    max_dropped invalid frames. Idempotent on its own output.
    """
    if seq.n_frames != len(track):
        raise ValueError("frame sequence and landmark track lengths differ")
    t = min(seq.n_frames, max_frames)
    window_valid = track.valid[:t]
    dropped = int(t - window_valid.sum())
    if dropped > max_dropped:
        raise VideoRejected(dropped, max_dropped)
    keep = np.flatnonzero(window_valid)
    out_seq = FrameSequence(seq.frames[keep], fps=seq.fps, source_id=seq.source_id)
    out_track = LandmarkTrack(
        points=[track.points[i] for i in keep],
        valid=np.ones(len(keep), dtype=bool),
    )
    return out_seq, out_track


# ---------------------------------------------------------------------------
# synthetic corpus


def synthetic_landmarks(height, width, center=None, axes=None):
    """Fixed 81-point layout on an elliptical face. Returns (81, 2) floats."""
    h, w = float(height), float(width)
    cx, cy = center if center is not None else (w / 2.0, h / 2.0)
    ax, ay = axes if axes is not None else (0.32 * w, 0.42 * h)
    pts = np.zeros((N_LANDMARKS, 2))

    def ellipse(theta, rx, ry, ox=cx, oy=cy):
        return np.stack([ox + rx * np.cos(theta), oy + ry * np.sin(theta)], axis=-1)

    # jaw 0..16: image-left ear, through the chin (y grows downward), image-right ear
    pts[0:17] = ellipse(np.linspace(np.pi, 0.0, 17), ax, ay)
    # forehead 68..80: arc over the top, slightly inside the ellipse
    pts[68:81] = ellipse(np.linspace(np.pi, 2 * np.pi, 15)[1:-1], 0.96 * ax, 0.96 * ay)

    # eyes: leftmost corner first then around; for the image-left eye that is
    # 36 outer / 39 inner, for the image-right eye 42 inner / 45 outer
    eye_dx, eye_y = EYE_DX_FRAC * ax, cy - EYE_Y_FRAC * ay
    eye_w, eye_h = EYE_W_FRAC * ax, EYE_H_FRAC * ay
    for start, ex in ((36, cx - eye_dx), (42, cx + eye_dx)):
        pts[start : start + 6] = [
            [ex - eye_w, eye_y],
            [ex - 0.5 * eye_w, eye_y - eye_h],
            [ex + 0.5 * eye_w, eye_y - eye_h],
            [ex + eye_w, eye_y],
            [ex + 0.5 * eye_w, eye_y + eye_h],
            [ex - 0.5 * eye_w, eye_y + eye_h],
        ]

    # brows 17..26
    brow_y = eye_y - 0.16 * ay
    pts[17:22] = np.stack([np.linspace(cx - eye_dx - eye_w, cx - eye_dx + eye_w, 5),
                           brow_y - 0.02 * ay * np.sin(np.linspace(0, np.pi, 5))], axis=-1)
    pts[22:27] = np.stack([np.linspace(cx + eye_dx - eye_w, cx + eye_dx + eye_w, 5),
                           brow_y - 0.02 * ay * np.sin(np.linspace(0, np.pi, 5))], axis=-1)

    # nose bridge 27..30 (27, 28 sit between the eyes), nose base 31..35
    pts[27:31] = np.stack([np.full(4, cx), np.linspace(eye_y, cy + 0.10 * ay, 4)], axis=-1)
    pts[31:36] = np.stack([np.linspace(cx - 0.12 * ax, cx + 0.12 * ax, 5),
                           np.full(5, cy + 0.16 * ay)], axis=-1)

    # mouth 48..67: outer ring of 12, inner ring of 8
    mouth_y, mouth_w, mouth_h = cy + 0.48 * ay, 0.30 * ax, 0.10 * ay
    pts[48:60] = ellipse(np.linspace(np.pi, 3 * np.pi, 13)[:-1], mouth_w, mouth_h, cx, mouth_y)
    pts[60:68] = ellipse(np.linspace(np.pi, 3 * np.pi, 9)[:-1], 0.6 * mouth_w, 0.5 * mouth_h, cx, mouth_y)

    # keep everything strictly inside the frame and off integer pixel centers
    pts[:, 0] = np.clip(pts[:, 0], 0.5, w - 1.5) + 0.25
    pts[:, 1] = np.clip(pts[:, 1], 0.5, h - 1.5) + 0.25
    return pts


def _ellipse_mask(h, w, cx, cy, ax, ay):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def synth_video(spec):
    """Generate one synthetic face video with an injected pulse.

    Deterministic given spec.seed. Skin intensity is modulated by
    pulse_amp * sin(2*pi*pulse_freq*t) with a green-dominant channel mix;
    the configured disruption breaks the rhythm for fake labels. Frames are
    quantized to 256 intensity levels, emulating an 8-bit sensor.

    Returns (FrameSequence, LandmarkTrack, label).
    """
    rng = np.random.default_rng(spec.seed)
    h, w, t = spec.height, spec.width, spec.n_frames
    cx, cy = w / 2.0, h / 2.0
    ax, ay = 0.32 * w, 0.42 * h

    background = 0.10 + 0.05 * (np.arange(h, dtype=np.float64) / h)[:, None]
    background = np.repeat(background[:, :, None], 3, axis=2) * np.ones((1, w, 1))

    face_mask = _ellipse_mask(h, w, cx, cy, ax, ay)
    yy, xx = np.mgrid[0:h, 0:w]
    rad2 = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2
    shading = np.clip(1.0 - 0.18 * rad2, 0.0, 1.0)
    base_color = np.array([0.72, 0.52, 0.44])
    face_rgb = shading[:, :, None] * base_color[None, None, :]

    landmarks = synthetic_landmarks(h, w, (cx, cy), (ax, ay))
    eye_dx, eye_y = EYE_DX_FRAC * ax, cy - EYE_Y_FRAC * ay
    eye_w, eye_h = EYE_W_FRAC * ax, EYE_H_FRAC * ay
    eyes = np.zeros((h, w), dtype=bool)
    for ex in (cx - eye_dx, cx + eye_dx):
        eyes |= _ellipse_mask(h, w, ex, eye_y, 1.25 * eye_w, 1.6 * eye_h)
    mouth = _ellipse_mask(h, w, cx, cy + 0.48 * ay, 0.30 * ax, 0.10 * ay)
    face_rgb[eyes] = [0.16, 0.13, 0.13]
    face_rgb[mouth] = [0.48, 0.30, 0.30]

    skin = face_mask & ~eyes & ~mouth

    # per-pixel modulation phase; phase_scramble draws one phase per region of
    # a 5x5 grid over the face box
    phase0 = rng.uniform(0.0, 2 * np.pi)
    phase_map = np.zeros((h, w), dtype=np.float64)
    if spec.disruption == "phase_scramble":
        x0, y0, x1, y1 = cx - ax, cy - ay, cx + ax, cy + ay
        gr = np.clip(((yy - y0) / (y1 - y0) * 5).astype(int), 0, 4)
        gc = np.clip(((xx - x0) / (x1 - x0) * 5).astype(int), 0, 4)
        region_phase = rng.uniform(0.0, 2 * np.pi, size=(5, 5))
        phase_map = region_phase[gr, gc]

    amp = 0.0 if spec.disruption == "flatten" else spec.pulse_amp

    jitters = np.zeros((t, 2), dtype=int)
    if spec.motion_jitter > 0:
        jitters = np.round(rng.normal(0.0, spec.motion_jitter, size=(t, 2))).astype(int)

    frames = np.empty((t, h, w, 3), dtype=np.float32)
    points = []
    omega = 2 * np.pi * spec.pulse_freq / spec.fps
    for i in range(t):
        dy, dx = jitters[i]
        sk = np.roll(skin, (dy, dx), axis=(0, 1))
        fm = np.roll(face_mask, (dy, dx), axis=(0, 1))
        frame = background.copy()
        frame[fm] = np.roll(face_rgb, (dy, dx), axis=(0, 1))[fm]
        if amp > 0:
            ph = np.roll(phase_map, (dy, dx), axis=(0, 1))[sk]
            frame[sk] += amp * np.sin(omega * i + phase0 + ph)[:, None] * PULSE_CHANNEL_MIX
        if spec.illum_drift:
            frame += spec.illum_drift * i
        if spec.disruption == "block_texture":
            side = max(4, int(0.2 * min(ax, ay) * 2))
            px = int(rng.uniform(cx - ax, cx + ax - side))
            py = int(rng.uniform(cy - ay, cy + ay - side))
            offset = rng.uniform(-0.15, 0.15)
            texture = rng.normal(0.0, 0.08, size=(side, side, 3))
            frame[py : py + side, px : px + side] += offset + texture
        frame = np.round(np.clip(frame, 0.0, 1.0) * 255.0) / 255.0
        frames[i] = frame.astype(np.float32)
        points.append(landmarks + np.array([dx, dy], dtype=np.float64))

    seq = FrameSequence(frames, fps=spec.fps, source_id=f"synth-{spec.label}-{spec.seed}")
    track = LandmarkTrack(points=points, valid=np.ones(t, dtype=bool))
    return seq, track, spec.label


# ---------------------------------------------------------------------------
# degradations


# Baseline JPEG quantization tables (luminance, chrominance), row-major 8x8.
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

JPEG_CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def jpeg_quality_table(base_table, quality):
    """Scale a base table by quality: s = 5000/q (q < 50) else 200 - 2q,
    entry = clip(floor((t*s + 50) / 100), 1, 255)."""
    q = float(quality)
    s = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    t = np.floor((base_table * s + 50.0) / 100.0)
    return np.clip(t, 1.0, 255.0)


def _rgb_to_ycbcr(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _quantize_plane(plane, table):
    """8x8 block DCT, divide by table, round, multiply back, inverse DCT."""
    h, w = plane.shape
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    hb, wb = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(hb, 8, wb, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, type=2, norm="ortho", axes=(2, 3))
    coef = np.round(coef / table) * table
    rec = idctn(coef, type=2, norm="ortho", axes=(2, 3))
    out = rec.transpose(0, 2, 1, 3).reshape(padded.shape)
    return out[:h, :w]


def _degrade_jpeg(frames, quality):
    luma_t = jpeg_quality_table(JPEG_LUMA_TABLE, quality)
    chroma_t = jpeg_quality_table(JPEG_CHROMA_TABLE, quality)
    out = np.empty_like(frames)
    for i, frame in enumerate(frames):
        ycc = _rgb_to_ycbcr(frame.astype(np.float64) * 255.0)
        ycc[..., 0] = _quantize_plane(ycc[..., 0] - 128.0, luma_t) + 128.0
        ycc[..., 1] = _quantize_plane(ycc[..., 1] - 128.0, chroma_t) + 128.0
        ycc[..., 2] = _quantize_plane(ycc[..., 2] - 128.0, chroma_t) + 128.0
        out[i] = np.clip(_ycbcr_to_rgb(ycc) / 255.0, 0.0, 1.0).astype(np.float32)
    return out


def gaussian_kernel(size):
    """Odd-size sampled Gaussian with sigma = size/6, normalized to sum 1."""
    if size == 1:
        return np.array([1.0])
    r = (size - 1) // 2
    sigma = size / 6.0
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _degrade_blur(frames, size):
    if size == 1:
        return frames.copy()
    k = gaussian_kernel(int(size))
    out = frames.astype(np.float64)
    out = convolve1d(out, k, axis=1, mode="reflect")
    out = convolve1d(out, k, axis=2, mode="reflect")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _degrade_noise(frames, degree, seed):
    if degree == 0:
        return frames.copy()
    std = degree / 255.0
    out = np.empty_like(frames)
    for i, frame in enumerate(frames):
        # counter-based stream: one Philox key per (seed, frame), so per-frame
        # work can be parallelized without changing the result
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        noisy = frame.astype(np.float64) + rng.normal(0.0, std, size=frame.shape)
        out[i] = np.clip(noisy, 0.0, 1.0).astype(np.float32)
    return out


def degrade(seq, spec, seed=0):
    """Apply one degradation; returns a new FrameSequence."""
    if spec.kind == "jpeg":
        frames, fps = _degrade_jpeg(seq.frames, spec.degree), seq.fps
    elif spec.kind == "blur":
        frames, fps = _degrade_blur(seq.frames, int(spec.degree)), seq.fps
    elif spec.kind == "noise":
        frames, fps = _degrade_noise(seq.frames, spec.degree, seed), seq.fps
    elif spec.kind == "sampling":
        k = int(spec.degree)
        frames, fps = seq.frames[::k].copy(), seq.fps / k
    else:  # unreachable: spec validates kind
        raise ValueError(spec.kind)
    return FrameSequence(frames, fps=fps, source_id=f"{seq.source_id}+{spec.kind}{spec.degree:g}")


def subsample_track(track, k):
    """Landmark counterpart of the sampling degradation (keep every k-th frame)."""
    k = int(k)
    idx = range(0, len(track), k)
    return LandmarkTrack(points=[track.points[i] for i in idx], valid=track.valid[::k].copy())


# ---------------------------------------------------------------------------
# manifests


def save_manifest(manifest, path):
    payload = {
        "fps": manifest.fps,
        "entries": [
            {"video": e.video, "landmarks": e.landmarks, "label": e.label, "split": e.split}
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_manifest(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"manifest not found: {p}")
    payload = json.loads(p.read_text())
    entries = []
    for rec in payload["entries"]:
        e = ManifestEntry(video=rec["video"], landmarks=rec["landmarks"],
                          label=rec["label"], split=rec["split"])
        if e.label not in ("real", "fake"):
            raise ValueError(f"manifest label must be real/fake, got {e.label!r}")
        if e.split not in ("train", "val", "test"):
            raise ValueError(f"manifest split must be train/val/test, got {e.split!r}")
        for rel in (e.video, e.landmarks):
            if not (p.parent / rel).exists():
                raise FileNotFoundError(f"manifest path not resolvable: {rel}")
        entries.append(e)
    return DatasetManifest(entries=entries, fps=float(payload["fps"]), root=p.parent)
