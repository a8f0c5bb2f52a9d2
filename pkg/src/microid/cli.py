"""Command-line interface for the identification pipeline.

Subcommands: synth (generate the synthetic dataset), train (fit one model),
grid (hyperparameter sweep), eval (score a checkpoint or ensemble), and
gradcam (saliency overlays). Every command echoes its full configuration to
stderr so a run is reproducible from its log, writes machine-readable
results to files/stdout, and exits nonzero on any module error. A JSON file
passed via --config overrides flag defaults (explicit flags still win), and
relative data paths fall back to $MICROID_DATA_ROOT.
"""

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import data, ensemble, evaluation, gradcam, synth, training
from . import model as model_mod

DATA_ROOT_ENV = "MICROID_DATA_ROOT"


def _fraction(text):
    """Parse '1/8' or '0.125' into a float."""
    return float(Fraction(text))


def _int_tuple(text):
    return tuple(int(p) for p in text.split(","))


def resolve_data_path(path):
    """Resolve a path, falling back to $MICROID_DATA_ROOT for relative ones."""
    p = Path(path)
    if p.is_absolute() or p.exists():
        return p
    root = os.environ.get(DATA_ROOT_ENV)
    if root and (Path(root) / p).exists():
        return Path(root) / p
    return p


def _echo_config(args):
    printable = {k: v for k, v in vars(args).items() if k not in ("func",)}
    print("config: " + json.dumps(printable, sort_keys=True, default=str),
          file=sys.stderr)


def _channels(args):
    return None if args.channels == "auto" else int(args.channels)


def _labels(clips):
    # loaded manifests already carry compact labels in subject_id
    return np.array([c.subject_id for c in clips], dtype=np.int64)


def _load_split(args):
    manifest = data.load_manifest(resolve_data_path(args.manifest))
    if getattr(args, "split", "all") == "all":
        selected = manifest
    else:
        train_m, test_m = data.split_dataset(manifest, args.split_ratio,
                                             args.split_seed)
        selected = train_m if args.split == "train" else test_m
    clips = data.load_clips(selected, window=args.window, channels=_channels(args))
    return manifest, selected, clips, _labels(clips)


def cmd_synth(args):
    if args.subjects % 2 == 0:
        paths, paired = args.subjects // 2, True
    else:
        paths, paired = args.subjects, False
    config = synth.SynthConfig(
        num_paths=paths,
        paired_directions=paired,
        clips_per_subject=args.clips_per_subject,
        frame_size=(args.frame_size, args.frame_size),
        window=args.window,
        motion_span=args.motion_span,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    manifest = synth.generate_dataset(config, args.out_dir)
    print(f"subjects: {manifest.num_subjects}")
    print(f"clips: {len(manifest.entries)}")
    print(f"manifest: {Path(args.out_dir) / 'manifest.csv'}")
    return 0


def _model_and_solver(args, num_classes, input_shape):
    config = model_mod.ModelConfig(
        num_classes=num_classes,
        input_shape=input_shape,
        alpha=args.alpha,
        beta=args.beta,
        base_channels=args.base_channels,
        stage_depths=args.stage_depths,
        seed=training.derive_seed(args.seed, "init"),
    )
    solver = training.SolverConfig(
        solver=args.solver,
        learning_rate=args.lr,
        batch_size=args.batch,
        epochs=args.epochs,
        weight_decay=args.weight_decay,
        seed=training.derive_seed(args.seed, "solver"),
    )
    return config, solver


def cmd_train(args):
    manifest = data.load_manifest(resolve_data_path(args.manifest))
    train_m, test_m = data.split_dataset(manifest, args.split_ratio, args.split_seed)
    train_clips = data.load_clips(train_m, window=args.window, channels=_channels(args))
    test_clips = data.load_clips(test_m, window=args.window, channels=_channels(args))
    config, solver = _model_and_solver(args, manifest.num_subjects,
                                       train_clips[0].data.shape)
    net, report = training.train_model(
        config, solver, train_clips, _labels(train_clips),
        test_clips, _labels(test_clips))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "model.pt"
    model_mod.save_checkpoint(net, ckpt)
    with open(out_dir / "train_report.json", "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"train clips: {len(train_clips)}  test clips: {len(test_clips)}")
    print(f"test rank-1: {report.test_rank1:.2f}%")
    print(f"weights hash: {model_mod.weights_hash(net)}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_grid(args):
    manifest = data.load_manifest(resolve_data_path(args.manifest))
    train_m, val_m = data.split_dataset(manifest, args.split_ratio, args.split_seed)
    probe = data.load_clip(train_m.entries[0], train_m.target_size,
                           window=args.window, channels=_channels(args))
    space = training.default_grid(
        num_classes=manifest.num_subjects,
        input_shape=probe.data.shape,
        epochs=args.epochs,
        learning_rate=args.lr,
        base_channels=args.base_channels,
        stage_depths=args.stage_depths,
    )
    if args.dry_run:
        for i, (cfg, sol) in enumerate(space, start=1):
            cell = training.config_pair_hash(cfg, sol)
            print(f"{i:2d}. cell={cell} alpha={cfg.alpha} beta={cfg.beta:.4f} "
                  f"solver={sol.solver} batch={sol.batch_size}")
        print(f"cells: {len(space)}")
        return 0

    train_clips = data.load_clips(train_m, window=args.window, channels=_channels(args))
    val_clips = data.load_clips(val_m, window=args.window, channels=_channels(args))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = training.grid_search(
        space, train_clips, _labels(train_clips),
        val_clips, _labels(val_clips),
        root_seed=args.seed, out_dir=out_dir, jobs=args.jobs)
    for i, r in enumerate(results, start=1):
        status = f"acc={r.accuracy:.2f}%" if r.ok else f"FAILED ({r.error})"
        print(f"{i:2d}. cell={r.cell_hash} alpha={r.config.alpha} "
              f"beta={r.config.beta:.4f} solver={r.solver.solver} "
              f"batch={r.solver.batch_size} {status}")
    print(f"results: {out_dir / 'grid_results.json'}")
    return 0


def cmd_eval(args):
    if bool(args.checkpoint) == bool(args.ensemble):
        raise ValueError("pass exactly one of --checkpoint or --ensemble")
    manifest, _, clips, labels = _load_split(args)
    if args.checkpoint:
        net = model_mod.load_checkpoint(resolve_data_path(args.checkpoint))
        report, _ = evaluation.evaluate_model(net, clips, labels,
                                              batch_size=args.batch)
    else:
        spec = ensemble.load_spec(resolve_data_path(args.ensemble))
        report = ensemble.evaluate_ensemble(spec, clips, labels,
                                            batch_size=args.batch)
    names = {v: str(k) for k, v in manifest.label_map.items()}
    print(evaluation.format_report(report, label_names=names))
    if args.out:
        evaluation.save_report(report, args.out)
        print(f"report: {args.out}")
    return 0


def cmd_gradcam(args):
    net = model_mod.load_checkpoint(resolve_data_path(args.checkpoint))
    manifest = data.load_manifest(resolve_data_path(args.manifest))
    by_id = {e.clip_id: e for e in manifest.entries}
    clip_id = args.clip_id if args.clip_id is not None else manifest.entries[0].clip_id
    if clip_id not in by_id:
        raise ValueError(f"clip {clip_id!r} not in manifest")
    channels = net.config.input_shape[3]
    clip = data.load_clip(by_id[clip_id], manifest.target_size,
                          window=net.config.input_shape[0], channels=channels)
    if args.target_class is not None:
        target = args.target_class
    else:
        target = int(np.argmax(model_mod.predict_proba(net, clip)))
    smap = gradcam.compute_gradcam(net, clip, target, pathway=args.pathway)
    paths = gradcam.render_overlays(smap, clip, args.out_dir,
                                    max_alpha=args.max_alpha)
    print(f"clip: {clip_id}  target class: {target}  pathway: {args.pathway}")
    print(f"overlays: {len(paths)} files in {args.out_dir}")
    if args.dump_raw:
        raw_path = Path(args.out_dir) / "saliency_raw.bin"
        gradcam.dump_raw_map(smap, raw_path)
        print(f"raw map: {raw_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="microid",
        description="Micro-movement identification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON file overriding flag defaults")
        p.set_defaults(func=func)
        subparsers[name] = p
        return p

    p = add("synth", cmd_synth, "generate the synthetic motion dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--subjects", type=int, default=8,
                   help="even: paths x {forward, reverse}; odd: forward-only paths")
    p.add_argument("--clips-per-subject", type=int, default=20)
    p.add_argument("--frame-size", type=int, default=64)
    p.add_argument("--window", type=int, default=64)
    p.add_argument("--motion-span", type=int, default=15)
    p.add_argument("--noise-std", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=7)

    def add_split_flags(p):
        p.add_argument("--window", type=int, default=64)
        p.add_argument("--split-ratio", type=float, default=0.5)
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--channels", choices=("auto", "1", "3"), default="auto")

    def add_train_flags(p):
        p.add_argument("--lr", type=float, default=0.001)
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--weight-decay", type=float, default=0.01)
        p.add_argument("--base-channels", type=int, default=48)
        p.add_argument("--stage-depths", type=_int_tuple, default=(1, 1))
        p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, "train a single dual-pathway model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--alpha", type=int, default=4)
    p.add_argument("--beta", type=_fraction, default=0.125,
                   help="fast/slow channel ratio; accepts 1/8 or 0.125")
    p.add_argument("--solver", choices=training.SOLVERS, default="adam")
    p.add_argument("--batch", type=int, default=16)
    add_split_flags(p)
    add_train_flags(p)

    p = add("grid", cmd_grid, "run the default hyperparameter grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", default="grid-out")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    add_split_flags(p)
    add_train_flags(p)

    p = add("eval", cmd_eval, "evaluate a checkpoint or ensemble spec")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--ensemble", default=None)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--out", default=None, help="write the report as JSON here")
    add_split_flags(p)

    p = add("gradcam", cmd_gradcam, "render saliency overlays for one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--clip-id", default=None)
    p.add_argument("--target-class", type=int, default=None)
    p.add_argument("--pathway", choices=gradcam.PATHWAYS, default="fast")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--max-alpha", type=float, default=gradcam.DEFAULT_MAX_ALPHA)
    p.add_argument("--dump-raw", action="store_true")

    return parser, subparsers


def main(argv=None):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
        sub = subparsers[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            print(f"error: unknown config keys: {sorted(unknown)}", file=sys.stderr)
            return 2
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    _echo_config(args)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
