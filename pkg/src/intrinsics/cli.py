"""Command-line entry points: generate-data, train, decompose, evaluate.

Every command writes a run_manifest.json into its output directory with the
config snapshot, seed, artifact paths, tool version and wall-clock time, so
a run is reproducible from the manifest alone.
"""

import argparse
import csv
import dataclasses
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import FullConfig, SynthConfig, load_config
from .imaging import (compose_image, generate_synthetic_collections,
                      load_gt_triples, load_image, load_unpaired, save_dataset,
                      save_image)
from .losses import TERM_ORDER
from .metrics import evaluate, write_report
from .networks import decompose, load_bundle
from .trainer import fit, load_checkpoint


def _write_manifest(out_dir: Path, command: str, config: dict, seed,
                    artifacts, started: float):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": sorted(str(a) for a in artifacts),
        "tool_version": __version__,
        "started_at": datetime.now(timezone.utc).isoformat(),
        "wall_clock_seconds": time.monotonic() - started,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def cmd_generate_data(args):
    started = time.monotonic()
    cfg = SynthConfig(image_size=args.size, num_scenes=args.scenes, seed=args.seed,
                      shading_low_freq=args.shading_low_freq)
    triples, collections = generate_synthetic_collections(cfg)
    out = Path(args.out)
    save_dataset(out, triples, collections)
    artifacts = [p.relative_to(out) for p in out.rglob("*.png")]
    config = dataclasses.asdict(cfg)
    config["unpaired_split"] = {"inputs_scenes": f"0..{cfg.num_scenes // 2 - 1}",
                                "reflectance_shading_scenes":
                                    f"{cfg.num_scenes // 2}..{cfg.num_scenes - 1}"}
    _write_manifest(out, "generate-data", config, args.seed, artifacts, started)
    print(f"wrote {len(triples)} scenes to {out}")
    return 0


def _write_loss_outputs(history, out_dir: Path):
    columns = ["step", "total", "d_adversarial"] + list(TERM_ORDER)
    csv_path = out_dir / "loss_history.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for rec in history:
            writer.writerow([rec.get(c, "") for c in columns])
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(8, 5))
    steps = [rec["step"] for rec in history]
    for name in ("total", "d_adversarial", "image_recon", "physical"):
        vals = [rec[name] for rec in history if name in rec]
        if vals:
            ax.plot(steps[:len(vals)], vals, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    png_path = out_dir / "loss_curves.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return [csv_path, png_path]


def cmd_train(args):
    started = time.monotonic()
    cfg = load_config(args.config) if args.config else FullConfig()
    # flags override config-file values
    if args.steps is not None:
        cfg.train.steps = args.steps
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.mode is not None:
        cfg.train.mode = args.mode
    if args.max_samples is not None:
        cfg.data.max_samples = args.max_samples
    cfg.validate()
    collections = load_unpaired(args.data, cfg.data.max_samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    state = fit(cfg, collections, out_dir=ckpt_dir, resume_from=args.resume)
    artifacts = _write_loss_outputs(state.history, out)
    artifacts += list(ckpt_dir.glob("*"))
    _write_manifest(out, "train", state.config.to_dict(), state.config.train.seed,
                    artifacts, started)
    print(f"trained {state.step} steps; final checkpoint at {ckpt_dir / 'final'}")
    return 0


def _resolve_bundle(checkpoint: Path):
    if (checkpoint / "bundle" / "manifest.json").exists():
        return load_bundle(checkpoint / "bundle")
    return load_bundle(checkpoint)


def cmd_decompose(args):
    started = time.monotonic()
    bundle = _resolve_bundle(Path(args.checkpoint))
    image = load_image(args.input)
    r_hat, s_hat = decompose(bundle, image)
    out = Path(args.out)
    stem = Path(args.input).stem
    r_path = out / f"{stem}_reflectance.png"
    s_path = out / f"{stem}_shading.png"
    save_image(r_hat, r_path)
    save_image(s_hat, s_path)
    residual = float(np.abs(image - compose_image(r_hat, s_hat)).mean())
    config = {"checkpoint": str(args.checkpoint), "input": str(args.input),
              "composition_residual_mean": residual}
    _write_manifest(out, "decompose", config, None, [r_path, s_path], started)
    print(f"decomposed {args.input}; mean composition residual {residual:.5f}")
    return 0


def cmd_evaluate(args):
    started = time.monotonic()
    bundle = None
    if not args.gt_sanity:
        bundle = _resolve_bundle(Path(args.checkpoint))
    triples = load_gt_triples(args.data)
    if not triples:
        raise FileNotFoundError(f"no gt triples found under {args.data}/gt")
    report = evaluate(bundle, triples, n_pairs=args.judgment_pairs,
                      seed=args.seed, use_gt_as_prediction=args.gt_sanity)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    text_path = out / "report.txt"
    write_report(report, json_path, text_path)
    config = {"checkpoint": str(args.checkpoint), "data": str(args.data),
              "gt_sanity": args.gt_sanity, "judgment_pairs": args.judgment_pairs}
    _write_manifest(out, "evaluate", config, args.seed,
                    [json_path, text_path], started)
    with open(text_path) as fh:
        print(fh.read(), end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="intrinsics",
        description="Unsupervised intrinsic decomposition: data, training, "
                    "inference and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shading-low-freq", type=int, default=4)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train on an unpaired dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--mode", choices=["standard", "iiw_smoothness"], default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint dir to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decompose", help="split one image into reflectance+shading")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("evaluate", help="metric report against gt triples")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--judgment-pairs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gt-sanity", action="store_true",
                   help="score ground truth against itself (all-zero check)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
