"""Command-line interface.

Subcommands: ``make-toy-data``, ``train``, ``synthesize``, ``refine``,
``evaluate``. Exit code 0 on success; on failure the exit code identifies
the error class (1 generic, 2 configuration, 3 validation, 4 ingestion,
5 numerical, 6 checkpoint).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data, evaluation, synthesis, training
from .errors import FaceSynthError


def _add_make_toy_data(sub):
    p = sub.add_parser("make-toy-data", help="generate a procedural toy-face dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--num-samples", type=int, default=2000)
    p.add_argument("--num-attributes", type=int, default=4)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--refinement", action="store_true",
                   help="write gray synthetic/colored real pairs instead of landmarks")
    p.set_defaults(func=_cmd_make_toy_data)


def _cmd_make_toy_data(args):
    if args.refinement:
        manifest = data.generate_toy_refinement_dataset(
            args.out, args.num_samples, args.num_attributes, args.image_size, args.seed)
    else:
        manifest = data.generate_toy_dataset(
            args.out, args.num_samples, args.num_attributes, args.image_size, args.seed)
    print(f"wrote {len(manifest)} samples, {manifest.num_attributes} attributes -> {args.out}")


def _add_train(sub):
    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, help="JSON file mirroring TrainConfig")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p.add_argument("--image-size", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--decay-start", type=int)
    p.add_argument("--n-critic", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--refinement", action="store_true")
    p.set_defaults(func=_cmd_train)


def _cmd_train(args):
    manifest = data.load_manifest(args.data)
    if args.config:
        base = training.TrainConfig.from_json(args.config)
        raw = base.to_dict()
    else:
        raw = training.scaled_config(
            image_size=args.image_size or 128,
            num_attributes=manifest.num_attributes,
            base_channels=args.base_channels or 64,
        ).to_dict()
    overrides = {
        "batch_size": args.batch_size, "total_epochs": args.epochs,
        "decay_start_epoch": args.decay_start, "n_critic": args.n_critic,
        "seed": args.seed, "checkpoint_interval": args.checkpoint_interval,
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if args.refinement:
        raw["refinement"] = True
    cfg = training.TrainConfig.from_dict(raw)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.to_json(args.out / "config.json")
    state = training.fit(manifest, cfg, args.out, resume_from=args.resume)
    print(f"trained {state.g_steps} generator / {state.d_steps} critic steps "
          f"-> {args.out / 'checkpoints' / 'final.npz'}")


def _add_synthesize(sub):
    p = sub.add_parser("synthesize", help="write an attribute-transfer grid")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--landmarks", required=True, type=Path)
    p.add_argument("--attributes", default="all",
                   help='comma-separated attribute names, or "all"')
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_synthesize)


def _cmd_synthesize(args):
    attrs = "all" if args.attributes == "all" else [a for a in args.attributes.split(",") if a]
    path = synthesis.synthesize_grid(synthesis.SynthesisRequest(
        checkpoint_path=args.checkpoint, input_image_path=args.image,
        landmark_path=args.landmarks, output_path=args.out, target_attributes=attrs))
    print(f"wrote {path}")


def _add_refine(sub):
    p = sub.add_parser("refine", help="refine a synthetic frontal image with a real side image")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path, help="synthetic frontal input")
    p.add_argument("--side", required=True, type=Path, help="real image providing texture")
    p.add_argument("--attribute", help="optional target attribute name")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_refine)


def _cmd_refine(args):
    path, _ = synthesis.refine(synthesis.RefinementRequest(
        checkpoint_path=args.checkpoint, synthetic_frontal_path=args.image,
        real_side_image_path=args.side, target_attribute=args.attribute,
        output_path=args.out))
    print(f"wrote {path}")


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="oracle accuracy, fake-attribute accuracy, sweep")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--sweep", help="comma-separated per-class synthetic counts, e.g. 0,200,1000")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-epochs", type=int, default=evaluation.DEFAULT_ORACLE_EPOCHS)
    p.set_defaults(func=_cmd_evaluate)


def _cmd_evaluate(args):
    manifest = data.load_manifest(args.data)
    counts = [int(c) for c in args.sweep.split(",")] if args.sweep else None
    from .checkpoint import load_generator

    generator, _, _ = load_generator(args.checkpoint)
    params = {"image_size": generator.cfg.image_size, "epochs": args.oracle_epochs}
    report = evaluation.evaluate_model(manifest, args.checkpoint, args.out, seed=args.seed,
                                       sweep_counts=counts, classifier_params=params)
    print(f"real test accuracy:      {report.real_test_accuracy:.4f}")
    print(f"fake attribute accuracy: {report.fake_attribute_accuracy:.4f}")
    if report.augmentation_curve:
        for count, acc in report.augmentation_curve:
            print(f"sweep {count:>6} per class:  {acc:.4f}")
    print(f"report -> {Path(args.out) / 'report.json'}")


def build_parser():
    parser = argparse.ArgumentParser(prog="facesynth",
                                     description="attribute-guided face image translation")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_make_toy_data(sub)
    _add_train(sub)
    _add_synthesize(sub)
    _add_refine(sub)
    _add_evaluate(sub)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except FaceSynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
