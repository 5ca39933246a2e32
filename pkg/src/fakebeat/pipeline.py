"""End-to-end plumbing: corpus synthesis, per-video extraction, two-phase
training, the ablation ladder, and degradation sweeps.

Videos are processed one at a time (load -> preprocess -> mask -> magnify ->
pool); only the small artifacts (maps, prior blocks, resized frames for the
frame scorer) are kept, so a 200-video corpus fits comfortably in memory.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import magnify as mg
from . import media_io as mio
from . import mmstr
from . import train as tr
from .model import DualAttentionModel, FrameScorer
from .train import VideoSample

# ablation ladder: variant name -> (flags, initialize from)
LADDER = (
    ("DR-st", (), None),
    ("DR-mmst", ("mm",), None),
    ("DR-mmst-A", ("mm", "A"), "DR-mmst"),
    ("DR-mmst-B", ("mm", "B"), "DR-mmst"),
    ("DR-mmst-AP", ("mm", "A", "P"), "DR-mmst-A"),
    ("DR-mmst-BF", ("mm", "B", "F"), "DR-mmst-B"),
    ("DR-mmst-APBF", ("mm", "A", "P", "B", "F"), "DR-mmst-AP+DR-mmst-BF"),
    ("DR-mmst-APBF-e2e", ("mm", "A", "P", "B", "F", "e2e"), None),
)

IDENTITY_DEGREES = {"jpeg": 100, "blur": 1, "noise": 0, "sampling": 1}


@dataclass
class VideoSource:
    """Handle to one video; frames are materialized only inside extraction."""

    source_id: str
    label: str
    split: str
    loader: object  # () -> (FrameSequence, LandmarkTrack)


@dataclass
class ExtractedVideo:
    source_id: str
    label: str
    split: str
    maps: dict              # variant ("mm"/"raw") -> MmstMap
    prior_blocks: tuple
    meso_frames: np.ndarray = None  # (T, S, S, 3) uint8, magnified + resized
    t_f: np.ndarray = None


# ---------------------------------------------------------------------------
# corpus


def corpus_specs(corpus, seed):
    """Deterministic per-video synthesis specs with the 8:1:1 split per label.

    Per label group of n videos: floor(0.8 n) train, half the remainder
    (rounded down) to test, the rest to val.
    """
    rng = np.random.default_rng(seed)
    fakes = ("flatten", "phase_scramble", "block_texture")
    out = []
    for label, count in (("real", corpus.n_real), ("fake", corpus.n_fake)):
        n_train = int(0.8 * count)
        n_test = (count - n_train) // 2
        for i in range(count):
            split = "train" if i < n_train else ("val" if i < count - n_test else "test")
            disruption = "none" if label == "real" else fakes[i % len(fakes)]
            spec = mio.SynthSpec(
                height=corpus.height, width=corpus.width, n_frames=corpus.frames,
                fps=corpus.fps,
                pulse_freq=float(rng.uniform(corpus.pulse_lo, corpus.pulse_hi)),
                pulse_amp=float(rng.uniform(corpus.amp_lo, corpus.amp_hi)),
                label=label, disruption=disruption,
                motion_jitter=corpus.motion_jitter, illum_drift=corpus.illum_drift,
                seed=int(rng.integers(0, 2**31 - 1)),
            )
            out.append((f"{label}_{i:04d}", spec, split))
    return out


def synthetic_sources(corpus, seed):
    """In-memory corpus handles; each loader regenerates its video on demand."""
    sources = []
    for source_id, spec, split in corpus_specs(corpus, seed):
        def loader(spec=spec):
            seq, track, _ = mio.synth_video(spec)
            return seq, track
        sources.append(VideoSource(source_id, spec.label, split, loader))
    return sources


def write_corpus(out_dir, cfg):
    """Materialize the synthetic corpus on disk and return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for source_id, spec, split in corpus_specs(cfg.corpus, cfg.seed):
        seq, track, label = mio.synth_video(spec)
        mio.save_frame_sequence(seq, out / source_id, fmt=cfg.corpus.frame_format, bit_depth=8)
        mio.save_landmark_track(track, out / f"{source_id}.landmarks.txt")
        entries.append(mio.ManifestEntry(video=source_id,
                                         landmarks=f"{source_id}.landmarks.txt",
                                         label=label, split=split))
    manifest = mio.DatasetManifest(entries=entries, fps=cfg.corpus.fps)
    path = out / "manifest.json"
    mio.save_manifest(manifest, path)
    return path


def manifest_sources(manifest):
    sources = []
    for e in manifest.entries:
        def loader(entry=e, root=manifest.root, fps=manifest.fps):
            seq = mio.load_frame_sequence(root / entry.video, fps=fps)
            track = mio.load_landmark_track(root / entry.landmarks, seq.n_frames,
                                            frame_shape=seq.frame_shape)
            return seq, track
        sources.append(VideoSource(Path(e.video).name, e.label, e.split, loader))
    return sources


# ---------------------------------------------------------------------------
# extraction


def resize_frames(frames, size):
    """(T, H, W, 3) -> (T, size, size, 3); exact block mean when sizes divide."""
    t, h, w, _ = frames.shape
    if h == size and w == size:
        return frames.copy()
    if h % size == 0 and w % size == 0:
        fy, fx = h // size, w // size
        return frames.reshape(t, size, fy, size, fx, 3).mean(axis=(2, 4), dtype=np.float64).astype(frames.dtype)
    yi = (np.arange(size) + 0.5) * h / size - 0.5
    xi = (np.arange(size) + 0.5) * w / size - 0.5
    yi = np.clip(np.round(yi).astype(int), 0, h - 1)
    xi = np.clip(np.round(xi).astype(int), 0, w - 1)
    return frames[:, yi][:, :, xi]


def magnify_params(cfg):
    return mg.MagnifyParams(alpha=cfg.alpha, f_lo=cfg.band_lo_hz, f_hi=cfg.band_hi_hz,
                            levels=cfg.pyramid_levels, chrom_atten=cfg.chrom_atten)


def extract_video(seq, track, cfg, variants=("mm",), keep_meso=True):
    """Mask, magnify and pool one preprocessed video.

    variants selects which maps to produce: "mm" (magnified) and/or "raw"
    (pooled without magnification). The band is clamped when the video's
    frame rate makes the configured top edge invalid (temporal resampling).
    """
    masks = []
    masked = np.empty_like(seq.frames)
    cache = {}
    for i in range(seq.n_frames):
        key = track.points[i].tobytes()
        got = cache.get(key)
        if got is None:
            frame_masked, valid = mmstr.mask_face(seq.frames[i], track.points[i])
            cache[key] = valid
        else:
            valid = got
            frame_masked = seq.frames[i] * valid[:, :, None]
        masked[i] = frame_masked
        masks.append(valid)
    masked_seq = mio.FrameSequence(masked, fps=seq.fps, source_id=seq.source_id)

    grid = mmstr.make_grid(track, cfg.grid_rows, cfg.grid_cols)
    prior = mmstr.prior_block_set(track, grid)
    maps = {}
    magnified_seq = None
    if "mm" in variants:
        params = mg.clamp_band(magnify_params(cfg), seq.fps)
        magnified_seq = mg.magnify_video(masked_seq, params)
        mm = mmstr.compute_mmst_map(magnified_seq, track, grid, valid_masks=masks)
        mm.prior_blocks = prior
        mm.meta = {"source_id": seq.source_id, "magnified": True,
                   "band": [params.f_lo, params.f_hi], "alpha": params.alpha}
        maps["mm"] = mm
    if "raw" in variants:
        raw = mmstr.compute_mmst_map(masked_seq, track, grid, valid_masks=masks)
        raw.prior_blocks = prior
        raw.meta = {"source_id": seq.source_id, "magnified": False}
        maps["raw"] = raw

    meso = None
    if keep_meso:
        base = magnified_seq.frames if magnified_seq is not None else masked_seq.frames
        resized = resize_frames(base, cfg.meso_input)
        meso = np.round(resized * 255.0).astype(np.uint8)
    return maps, prior, meso


def extract_all(sources, cfg, variants=("mm",), keep_meso=True, degradation=None,
                degrade_seed=0, map_dir=None, progress=None):
    """Extract every source; per-video failures are collected, not raised.

    Returns (records, rejections) where rejections is a list of
    (source_id, reason) pairs. With map_dir set, magnified maps (or raw ones
    when only "raw" is requested) are also serialized to disk.
    """
    records, rejections = [], []
    for k, src in enumerate(sources):
        if progress:
            progress(k, len(sources), src.source_id)
        try:
            seq, track = src.loader()
            if degradation is not None:
                seq = mio.degrade(seq, degradation, seed=degrade_seed)
                if degradation.kind == "sampling":
                    track = mio.subsample_track(track, int(degradation.degree))
            seq, track = mio.preprocess_video(seq, track, cfg.max_frames, cfg.max_dropped)
            maps, prior, meso = extract_video(seq, track, cfg, variants, keep_meso)
        except (mio.VideoRejected, ValueError, FileNotFoundError) as exc:
            rejections.append((src.source_id, str(exc)))
            continue
        rec = ExtractedVideo(source_id=src.source_id, label=src.label, split=src.split,
                             maps=maps, prior_blocks=prior, meso_frames=meso)
        if map_dir is not None:
            variant = "mm" if "mm" in maps else "raw"
            mmstr.save_map(maps[variant], Path(map_dir) / f"{src.source_id}.mmst")
        records.append(rec)
    return records, rejections


# ---------------------------------------------------------------------------
# scorer plumbing


def frame_training_set(records, per_video, splits=("train",)):
    """First frames of each video as (frames, labels), scorer-ready."""
    xs, ys = [], []
    for rec in records:
        if rec.split not in splits or rec.meso_frames is None:
            continue
        take = rec.meso_frames[:per_video].astype(np.float32) / 255.0
        xs.append(take.transpose(0, 3, 1, 2))
        ys.append(np.full(len(take), 1.0 if rec.label == "fake" else 0.0))
    if not xs:
        raise ValueError("no frames available for scorer training")
    return np.concatenate(xs), np.concatenate(ys)


def attach_frame_scores(records, scorer):
    """Run the frozen scorer over every video's frames to fill t_f."""
    for rec in records:
        if rec.meso_frames is None:
            continue
        frames = rec.meso_frames.astype(np.float32).transpose(0, 3, 1, 2) / 255.0
        rec.t_f = scorer.score_frames(frames)


def to_samples(records, variant, with_scores):
    out = []
    for rec in records:
        mmap = rec.maps[variant]
        s_p = mmstr.prior_attention(rec.prior_blocks, mmap.shape[1])
        out.append(VideoSample(source_id=rec.source_id,
                               label=1 if rec.label == "fake" else 0,
                               values=mmap.values, s_p=s_p,
                               t_f=rec.t_f if with_scores else None))
    return out


def split_samples(samples_by_id, records, split):
    return [samples_by_id[r.source_id] for r in records if r.split == split]


# ---------------------------------------------------------------------------
# training runs


def build_model(cfg, seed_offset=0):
    n_blocks = cfg.grid_rows * cfg.grid_cols
    return DualAttentionModel(
        n_blocks=n_blocks, channels=3, atten_kernels=cfg.atten_kernels,
        atten_extent=cfg.atten_extent, lstm_hidden=cfg.lstm_hidden,
        classifier_width=cfg.classifier_width, meso_input=cfg.meso_input,
        lstm_block_major=cfg.lstm_block_major,
        seq_len=cfg.corpus.frames if cfg.lstm_block_major else None,
        seed=cfg.seed + seed_offset)


def train_scorer_stage(records, cfg, log_path=None):
    """Phase 1: frame scorer on per-frame labels (first frames per video)."""
    scorer = FrameScorer(cfg.meso_input, rng=np.random.default_rng(cfg.seed + 1000))
    train_x, train_y = frame_training_set(records, cfg.meso_frames_per_video, ("train",))
    val_x, val_y = frame_training_set(records, cfg.meso_frames_per_video, ("val",))
    tr.train_frame_scorer(scorer, train_x, train_y, val_x, val_y,
                          lr=cfg.lr, weight_decay=cfg.weight_decay,
                          max_epochs=cfg.max_epochs, patience=cfg.patience,
                          batch_size=cfg.batch_frames, seed=cfg.seed + 2000,
                          log_path=log_path)
    return scorer


def train_variant(records, cfg, flags, epochs=None, init_models=None,
                  log_path=None, seed_offset=0):
    """Train one ladder variant; returns (model, log, test metrics)."""
    variant = "mm" if "mm" in flags else "raw"
    with_scores = "F" in flags
    samples = {s.source_id: s for s in to_samples(records, variant, with_scores)}
    train_s = split_samples(samples, records, "train")
    val_s = split_samples(samples, records, "val")
    test_s = split_samples(samples, records, "test")
    model = build_model(cfg, seed_offset)
    if init_models:
        _copy_component(init_models[0], model, "classifier")
        if "A" in flags:
            _copy_component(init_models[0], model, "spatial")
        if "B" in flags:
            _copy_component(init_models[-1], model, "temporal")
    log = tr.train_joint(model, train_s, val_s, flags, lr=cfg.lr,
                         weight_decay=cfg.weight_decay,
                         max_epochs=epochs or cfg.max_epochs, patience=cfg.patience,
                         batch_size=cfg.batch_videos, seed=cfg.seed + 3000,
                         log_path=log_path)
    metrics = tr.evaluate(model, test_s, flags, batch_size=cfg.batch_videos)
    return model, log, metrics


def _copy_component(src_model, dst_model, comp_name):
    src = src_model.components()[comp_name]
    dst = dst_model.components()[comp_name]
    for name, tensor in src.params.items():
        dst.params[name].data = tensor.data.copy()
    for name, rs in src.running.items():
        dst.running[name].mean = rs.mean.copy()
        dst.running[name].var = rs.var.copy()


def run_ablation(records, cfg, scorer=None, log_dir=None, reuse=None):
    """Train the whole ladder; returns {variant: (model, metrics)}.

    Variants with an init ancestor fine-tune for cfg.finetune_epochs; the
    fresh rungs train for cfg.max_epochs. `reuse` may pre-supply trained
    rungs (e.g. the e2e model from a prior full run).
    """
    if scorer is not None:
        attach_frame_scores(records, scorer)
    results = dict(reuse or {})
    for i, (name, flags, init_from) in enumerate(LADDER):
        if name in results:
            continue
        init_models = None
        epochs = cfg.max_epochs
        if init_from:
            parents = init_from.split("+")
            init_models = [results[p][0] for p in parents]
            epochs = cfg.finetune_epochs
        log_path = Path(log_dir) / f"{name}.log.csv" if log_dir else None
        model, _, metrics = train_variant(records, cfg, flags, epochs=epochs,
                                          init_models=init_models,
                                          log_path=log_path, seed_offset=i)
        results[name] = (model, metrics)
    return results


# ---------------------------------------------------------------------------
# robustness


def mmst_distance(deg_map, base_map, kind, degree):
    """Relative Frobenius distance; sampling compares against the kept rows."""
    ref = base_map.values
    if kind == "sampling":
        ref = ref[:: int(degree)]
    ref = ref[: deg_map.values.shape[0]]
    got = deg_map.values[: ref.shape[0]]
    denom = float(np.linalg.norm(ref))
    return float(np.linalg.norm(got - ref)) / denom if denom else 0.0


def run_robustness(test_sources, base_records, model, scorer, cfg, flags):
    """Degrade the test split, re-extract, evaluate each (kind, degree) cell.

    Returns rows: dicts with kind, degree, accuracy, n_videos, mmst_distance.
    Per-cell failures yield a row with accuracy None.
    """
    base_by_id = {r.source_id: r for r in base_records}
    rows = []
    for kind, degrees in cfg.sweep.items():
        for degree in degrees:
            spec = mio.DegradationSpec(kind, degree)
            recs, rejects = extract_all(test_sources, cfg, variants=("mm",),
                                        keep_meso="F" in flags, degradation=spec,
                                        degrade_seed=cfg.seed)
            if not recs:
                rows.append({"kind": kind, "degree": degree, "accuracy": None,
                             "n_videos": 0, "mmst_distance": None,
                             "note": f"{len(rejects)} rejected"})
                continue
            if scorer is not None and "F" in flags:
                attach_frame_scores(recs, scorer)
            samples = to_samples(recs, "mm", "F" in flags)
            metrics = tr.evaluate(model, samples, flags, batch_size=cfg.batch_videos)
            dists = [mmst_distance(r.maps["mm"], base_by_id[r.source_id].maps["mm"], kind, degree)
                     for r in recs if r.source_id in base_by_id]
            rows.append({"kind": kind, "degree": degree,
                         "accuracy": metrics["accuracy"], "n_videos": metrics["n_videos"],
                         "mmst_distance": float(np.mean(dists)) if dists else None})
    return rows
