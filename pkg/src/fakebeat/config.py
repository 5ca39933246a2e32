"""Run configuration: one flat dataclass, JSON round trip, presets, hashing.

The "paper" preset mirrors the published training protocol (lr 0.1, weight
decay 0.01, 500 epochs, patience 50, full-width nets); "desk" is the small
default that trains in minutes on a CPU.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

ABLATION_CHOICES = ("mm", "A", "P", "B", "F", "e2e")


@dataclass
class CorpusConfig:
    """Synthetic corpus shape and interference levels."""

    n_real: int = 100
    n_fake: int = 100
    height: int = 128
    width: int = 128
    frames: int = 150
    fps: float = 30.0
    pulse_lo: float = 0.8      # Hz
    pulse_hi: float = 2.5
    amp_lo: float = 0.005      # intensity units
    amp_hi: float = 0.01
    motion_jitter: float = 0.5  # pixels
    illum_drift: float = 0.0003
    frame_format: str = "ppm"


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    # map extraction
    grid_rows: int = 5
    grid_cols: int = 5
    max_frames: int = 300
    max_dropped: int = 50
    # magnification
    alpha: float = 20.0
    band_lo_hz: float = 0.75
    band_hi_hz: float = 4.0
    pyramid_levels: int = 3
    chrom_atten: float = 1.0
    # model
    lstm_hidden: int = 16
    lstm_block_major: bool = False
    meso_input: int = 64
    classifier_width: int = 8
    atten_kernels: int = 64
    atten_extent: int = 15
    # training
    lr: float = 1e-3
    weight_decay: float = 0.01
    max_epochs: int = 40
    patience: int = 12
    finetune_epochs: int = 15
    batch_frames: int = 32
    batch_videos: int = 8
    meso_frames_per_video: int = 5
    ablation: tuple = ABLATION_CHOICES
    # degradation sweep grids (kind -> degrees)
    sweep: dict = field(default_factory=lambda: {
        "jpeg": [100, 80, 60, 40, 20],
        "blur": [1, 5, 11, 15, 19],
        "noise": [0, 5, 15, 25],
        "sampling": [1, 2, 5, 10, 15],
    })
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    def __post_init__(self):
        if isinstance(self.corpus, dict):
            self.corpus = CorpusConfig(**self.corpus)
        self.ablation = tuple(self.ablation)
        bad = set(self.ablation) - set(ABLATION_CHOICES)
        if bad:
            raise ValueError(f"unknown ablation flags: {sorted(bad)}")
        if self.preset not in ("desk", "paper"):
            raise ValueError(f"preset must be desk or paper, got {self.preset!r}")


PRESETS = {
    "desk": {},
    "paper": {
        "lr": 0.1,
        "weight_decay": 0.01,
        "max_epochs": 500,
        "patience": 50,
        "finetune_epochs": 50,
        "classifier_width": 64,
        "meso_input": 256,
        "max_frames": 300,
    },
}


def apply_preset(cfg, preset):
    cfg = replace(cfg, preset=preset)
    return replace(cfg, **PRESETS[preset])


def load_config(path=None, preset=None, seed=None):
    """Resolve a config: preset defaults, then file keys, then seed override.

    The preset comes from the command line when given, else from the file,
    else "desk". Explicit file keys always win over preset defaults.
    """
    payload = json.loads(Path(path).read_text()) if path else {}
    cfg = apply_preset(RunConfig(), preset or payload.get("preset", "desk"))
    overrides = {k: v for k, v in payload.items() if k != "preset"}
    if "corpus" in overrides and isinstance(overrides["corpus"], dict):
        overrides["corpus"] = CorpusConfig(**overrides["corpus"])
    if "ablation" in overrides:
        overrides["ablation"] = tuple(overrides["ablation"])
    if overrides:
        cfg = replace(cfg, **overrides)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg


def save_config(cfg, path):
    Path(path).write_text(to_json(cfg) + "\n")


def to_json(cfg):
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


def config_hash(cfg):
    """Stable hash of the fully resolved configuration."""
    canon = json.dumps(asdict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
