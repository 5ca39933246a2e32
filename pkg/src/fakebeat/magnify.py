"""Eulerian color magnification: pyramid decomposition, ideal temporal
bandpass, scaled re-addition.

Each pyramid level beyond the base is temporally bandpassed per pixel and
channel, scaled by alpha, upsampled back to full resolution and summed onto
the original frames. For a spatially uniform in-band signal every level
passes the signal through unchanged, so the closed-form amplitude gain is
1 + alpha * levels (uniform_gain below); out-of-band content has gain 1.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .media_io import FrameSequence

# 5-tap binomial smoothing kernel used between pyramid levels
PYRAMID_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

# with RGB processed directly, green is treated as the signal channel and
# red/blue as the attenuable chroma pair
CHROMA_CHANNELS = (0, 2)


@dataclass
class MagnifyParams:
    """Free parameters of the magnification step."""

    alpha: float = 20.0
    f_lo: float = 0.75
    f_hi: float = 4.0
    levels: int = 3
    chrom_atten: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not 0.0 <= self.chrom_atten <= 1.0:
            raise ValueError("chrom_atten must be in [0, 1]")
        if not 0 < self.f_lo < self.f_hi:
            raise ValueError("need 0 < f_lo < f_hi")

    def validate_for_fps(self, fps):
        if not self.f_hi < fps / 2:
            raise ValueError(f"band [{self.f_lo}, {self.f_hi}] outside Nyquist for fps {fps}")


def clamp_band(params, fps):
    """Return params with f_hi pulled inside Nyquist for the given fps.

    Used by the pipeline when temporally-resampled videos drop the rate below
    the configured band edge. Raises if no valid band remains.
    """
    f_hi = min(params.f_hi, 0.49 * fps)
    if f_hi <= params.f_lo:
        raise ValueError(f"no valid passband below Nyquist at fps {fps}")
    return MagnifyParams(params.alpha, params.f_lo, f_hi, params.levels, params.chrom_atten)


def _blur_decimate(frames):
    """One pyramid step on (T,H,W,C): binomial blur then floor-halving 2x decimation."""
    out = convolve1d(frames, PYRAMID_KERNEL, axis=1, mode="reflect")
    out = convolve1d(out, PYRAMID_KERNEL, axis=2, mode="reflect")
    h, w = out.shape[1], out.shape[2]
    return out[:, 0 : 2 * (h // 2) : 2, 0 : 2 * (w // 2) : 2]


def gaussian_pyramid(frame, levels):
    """Level 0 is the input; each next level is blur + 2x decimation.

    Returns levels + 1 images. Errors when a level would fall below 2 pixels
    on either axis.
    """
    frame = np.asarray(frame, dtype=np.float64)
    single = frame.ndim == 2
    current = frame[None, :, :, None] if single else frame[None]
    out = [frame]
    for k in range(levels):
        h, w = current.shape[1], current.shape[2]
        if h // 2 < 2 or w // 2 < 2:
            raise ValueError(f"levels too deep: level {k + 1} would be {h // 2}x{w // 2}")
        current = _blur_decimate(current)
        out.append(current[0, :, :, 0] if single else current[0])
    return out


def ideal_bandpass(series, fps, f_lo, f_hi):
    """Zero every temporal DFT bin with |f| outside [f_lo, f_hi]; time on axis 0.

    Exactly linear and idempotent on its passband; the constant (DC) component
    never passes since f_lo > 0.
    """
    series = np.asarray(series, dtype=np.float64)
    t = series.shape[0]
    if t < 4:
        raise ValueError("series too short to bandpass (need >= 4 samples)")
    if not 0 < f_lo < f_hi:
        raise ValueError("need 0 < f_lo < f_hi")
    if not f_hi < fps / 2:
        raise ValueError(f"band [{f_lo}, {f_hi}] outside Nyquist for fps {fps}")
    spec = np.fft.fft(series, axis=0)
    freqs = np.abs(np.fft.fftfreq(t, d=1.0 / fps))
    keep = (freqs >= f_lo) & (freqs <= f_hi)
    spec[~keep] = 0.0
    return np.fft.ifft(spec, axis=0).real


def uniform_gain(params, channel=1):
    """Closed-form in-band amplitude gain for spatially uniform signals."""
    a = params.alpha * (params.chrom_atten if channel in CHROMA_CHANNELS else 1.0)
    return 1.0 + a * params.levels


def _upsample_to(arr, h, w):
    """Nearest-neighbor upsample of (T,h',w',C) to (T,h,w,C); constants survive."""
    fy = h // arr.shape[1] + (h % arr.shape[1] > 0)
    fx = w // arr.shape[2] + (w % arr.shape[2] > 0)
    out = np.repeat(np.repeat(arr, fy, axis=1), fx, axis=2)
    return out[:, :h, :w]


def magnify_video(seq, params):
    """Amplify in-band temporal variation of every pyramid level >= 1.

    Output is the input plus the summed, alpha-scaled, upsampled bandpassed
    levels, clamped to [0, 1]. alpha = 0 returns the input unchanged.
    """
    params.validate_for_fps(seq.fps)
    frames = seq.frames.astype(np.float64)
    t, h, w, _ = frames.shape
    acc = np.zeros_like(frames)
    current = frames
    for _ in range(params.levels):
        hc, wc = current.shape[1], current.shape[2]
        if hc // 2 < 2 or wc // 2 < 2:
            raise ValueError("pyramid levels too deep for frame size")
        current = _blur_decimate(current)
        band = ideal_bandpass(current, seq.fps, params.f_lo, params.f_hi)
        band = band * params.alpha
        for c in CHROMA_CHANNELS:
            band[..., c] *= params.chrom_atten
        acc += _upsample_to(band, h, w)
    out = np.clip(frames + acc, 0.0, 1.0).astype(np.float32)
    return FrameSequence(out, fps=seq.fps, source_id=seq.source_id)
