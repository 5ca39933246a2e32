"""Batch command-line interface.

Subcommands: synth, extract, degrade, train, eval, ablation, robustness,
report. Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
Per-video failures inside a batch never abort the run; they are listed in
the rejection report instead.
"""

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from . import media_io as mio
from . import model as mdl
from . import pipeline, reporting
from . import train as tr

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def add_common(sp, out_required=True):
    sp.add_argument("--config", type=Path, help="JSON run config")
    sp.add_argument("--seed", type=int, help="overrides the config seed")
    sp.add_argument("--out", type=Path, required=out_required, help="output directory")
    sp.add_argument("--preset", choices=("paper", "desk"), help="hyperparameter preset")


def resolve_config(args):
    return cfgmod.load_config(args.config, preset=args.preset, seed=args.seed)


def write_rejections(out_dir, rejections):
    path = Path(out_dir) / "rejections.json"
    path.write_text(json.dumps([{"source_id": sid, "reason": reason}
                                for sid, reason in rejections], indent=2) + "\n")
    return path


def active_flags(cfg):
    return tuple(f for f in cfg.ablation if f in ("mm", "A", "P", "B", "F"))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = resolve_config(args)
    manifest_path = pipeline.write_corpus(args.out, cfg)
    cfgmod.save_config(cfg, args.out / "config.json")
    manifest = mio.load_manifest(manifest_path)
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {len(manifest.entries)} videos to {args.out} "
          f"(train/val/test = {counts['train']}/{counts['val']}/{counts['test']})")
    return EXIT_OK


def cmd_extract(args):
    cfg = resolve_config(args)
    manifest = mio.load_manifest(args.manifest)
    sources = pipeline.manifest_sources(manifest)
    variant = "raw" if args.raw else "mm"
    args.out.mkdir(parents=True, exist_ok=True)
    records, rejections = pipeline.extract_all(
        sources, cfg, variants=(variant,), keep_meso=False, map_dir=args.out)
    write_rejections(args.out, rejections)
    print(f"extracted {len(records)} maps ({variant}), {len(rejections)} rejected")
    return EXIT_OK


def cmd_degrade(args):
    cfg = resolve_config(args)
    spec = mio.DegradationSpec(args.kind, args.degree)
    manifest = mio.load_manifest(args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    entries = []
    fps_out = manifest.fps
    for entry in manifest.entries:
        seq = mio.load_frame_sequence(manifest.root / entry.video, fps=manifest.fps)
        track = mio.load_landmark_track(manifest.root / entry.landmarks, seq.n_frames)
        out_seq = mio.degrade(seq, spec, seed=cfg.seed)
        if spec.kind == "sampling":
            track = mio.subsample_track(track, int(spec.degree))
        fps_out = out_seq.fps
        name = Path(entry.video).name
        mio.save_frame_sequence(out_seq, args.out / name, fmt=cfg.corpus.frame_format, bit_depth=8)
        mio.save_landmark_track(track, args.out / f"{name}.landmarks.txt")
        entries.append(mio.ManifestEntry(video=name, landmarks=f"{name}.landmarks.txt",
                                         label=entry.label, split=entry.split))
    mio.save_manifest(mio.DatasetManifest(entries=entries, fps=fps_out),
                      args.out / "manifest.json")
    print(f"degraded {len(entries)} videos with {args.kind}({args.degree:g})")
    return EXIT_OK


def _extract_for_training(cfg, manifest, flags):
    sources = pipeline.manifest_sources(manifest)
    variant = "mm" if "mm" in flags else "raw"
    records, rejections = pipeline.extract_all(
        sources, cfg, variants=(variant,), keep_meso="F" in flags)
    if not records:
        raise ValueError("no videos survived extraction")
    return records, rejections


def cmd_train(args):
    cfg = resolve_config(args)
    flags = active_flags(cfg)
    manifest = mio.load_manifest(args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    records, rejections = _extract_for_training(cfg, manifest, flags)
    write_rejections(args.out, rejections)
    scorer = None
    if "F" in flags:
        scorer = pipeline.train_scorer_stage(records, cfg, log_path=args.out / "scorer_log.csv")
        pipeline.attach_frame_scores(records, scorer)
    model, _, metrics = pipeline.train_variant(
        records, cfg, flags, log_path=args.out / "train_log.csv")
    if scorer is not None:
        model.scorer = scorer
    extra = {"flags": list(flags), "config_hash": cfgmod.config_hash(cfg)}
    mdl.save_checkpoint(args.out / "model.npz", model, extra_meta=extra)
    cfgmod.save_config(cfg, args.out / "config.json")
    metrics_out = {k: v for k, v in metrics.items()}
    metrics_out["config_hash"] = cfgmod.config_hash(cfg)
    (args.out / "metrics.json").write_text(json.dumps(metrics_out, indent=2, sort_keys=True) + "\n")
    print(f"test accuracy {metrics['accuracy']:.3f} on {metrics['n_videos']} videos")
    return EXIT_OK


def cmd_eval(args):
    cfg = resolve_config(args)
    model, _, extra = mdl.load_checkpoint(args.model)
    flags = tuple(extra.get("flags", ["mm"])) if extra else ("mm",)
    manifest = mio.load_manifest(args.manifest)
    entries = [e for e in manifest.entries if e.split == args.split]
    if not entries:
        raise ValueError(f"split {args.split!r} is empty")
    sub = mio.DatasetManifest(entries=entries, fps=manifest.fps, root=manifest.root)
    sources = pipeline.manifest_sources(sub)
    variant = "mm" if "mm" in flags else "raw"
    records, rejections = pipeline.extract_all(sources, cfg, variants=(variant,),
                                               keep_meso="F" in flags)
    if "F" in flags:
        pipeline.attach_frame_scores(records, model.scorer)
    samples = pipeline.to_samples(records, variant, "F" in flags)
    metrics = tr.evaluate(model, samples, flags, batch_size=cfg.batch_videos)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rejections(args.out, rejections)
    metrics["config_hash"] = cfgmod.config_hash(cfg)
    (args.out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"accuracy {metrics['accuracy']:.3f} on {metrics['n_videos']} videos ({args.split})")
    return EXIT_OK


def cmd_ablation(args):
    cfg = resolve_config(args)
    manifest = mio.load_manifest(args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    sources = pipeline.manifest_sources(manifest)
    records, rejections = pipeline.extract_all(sources, cfg, variants=("mm", "raw"),
                                               keep_meso=True)
    write_rejections(args.out, rejections)
    if not records:
        raise ValueError("no videos survived extraction")
    scorer = pipeline.train_scorer_stage(records, cfg, log_path=args.out / "scorer_log.csv")
    results = pipeline.run_ablation(records, cfg, scorer=scorer, log_dir=args.out)
    report = reporting.ablation_report(results, cfgmod.config_hash(cfg), cfg.seed)
    csv_path, figures = reporting.write_report_bundle(report, args.out, "ablation",
                                                      "Ablation ladder")
    for name, (_model, metrics) in results.items():
        print(f"{name:22s} accuracy {metrics['accuracy']:.3f}")
    print(f"report: {csv_path} (+{len(figures)} figures)")
    return EXIT_OK


def cmd_robustness(args):
    cfg = resolve_config(args)
    model, _, extra = mdl.load_checkpoint(args.model)
    flags = tuple(extra.get("flags", ["mm", "A", "P", "B", "F"])) if extra else ("mm",)
    manifest = mio.load_manifest(args.manifest)
    entries = [e for e in manifest.entries if e.split == "test"]
    if not entries:
        raise ValueError("manifest has no test split")
    sub = mio.DatasetManifest(entries=entries, fps=manifest.fps, root=manifest.root)
    test_sources = pipeline.manifest_sources(sub)
    base_records, rejections = pipeline.extract_all(test_sources, cfg, variants=("mm",),
                                                    keep_meso="F" in flags)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rejections(args.out, rejections)
    scorer = model.scorer if "F" in flags else None
    rows = pipeline.run_robustness(test_sources, base_records, model, scorer, cfg, flags)
    report = reporting.robustness_report(rows, cfgmod.config_hash(cfg), cfg.seed)
    csv_path, figures = reporting.write_report_bundle(report, args.out, "robustness",
                                                      "Degradation robustness")
    print(f"report: {csv_path} (+{len(figures)} figures)")
    return EXIT_OK


def cmd_report(args):
    run = Path(args.run)
    if not run.is_dir():
        raise FileNotFoundError(f"run directory not found: {run}")
    out = args.out or run
    out.mkdir(parents=True, exist_ok=True)
    rendered = []
    for csv_path in sorted(run.glob("*.csv")):
        if csv_path.name.endswith(".log.csv") or csv_path.stem in ("train_log", "scorer_log"):
            fig = out / f"{csv_path.stem}_curves.png"
            reporting.render_training_curves(csv_path, fig)
            rendered.append(fig)
            continue
        header, rows = reporting.read_report_csv(csv_path)
        if header and header[0] == "condition":
            fig = out / f"{csv_path.stem}_accuracy.png"
            reporting.render_ablation_figure(rows, fig)
            rendered.append(fig)
        elif header and header[0] == "kind":
            rendered.extend(reporting.render_robustness_figures(rows, out, stem=csv_path.stem))
    if not rendered:
        raise ValueError(f"no report CSVs found in {run}")
    for p in rendered:
        print(f"rendered {p}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point


def build_parser():
    parser = CliParser(prog="fakebeat",
                       description="rhythm-based fake face video detection")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    sp = sub.add_parser("synth", help="generate a synthetic corpus")
    add_common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("extract", help="extract maps for a manifest")
    add_common(sp)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--raw", action="store_true", help="skip magnification")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("degrade", help="apply one degradation to a dataset")
    add_common(sp)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--kind", choices=mio.DEGRADATION_KINDS, required=True)
    sp.add_argument("--degree", type=float, required=True)
    sp.set_defaults(func=cmd_degrade)

    sp = sub.add_parser("train", help="two-phase training on a manifest")
    add_common(sp)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    add_common(sp)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablation", help="train and evaluate the variant ladder")
    add_common(sp)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.set_defaults(func=cmd_ablation)

    sp = sub.add_parser("robustness", help="degradation sweep on the test split")
    add_common(sp)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--model", type=Path, required=True)
    sp.set_defaults(func=cmd_robustness)

    sp = sub.add_parser("report", help="re-render figures and tables from run CSVs")
    add_common(sp, out_required=False)
    sp.add_argument("--run", type=Path, required=True)
    sp.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except tr.TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, NotADirectoryError, mio.VideoRejected,
            ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
