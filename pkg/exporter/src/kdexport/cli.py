"""Command line for exporting model internals to the analysis exchange formats.

Three commands: export-features (activations plus class-score gradients per
tapped layer), export-embeddings (class-name table), and export-perturbed
(pooled features of heatmap-masked images). Exit codes: 0 on success, 2 on
bad input or an unavailable encoder; anything else propagates.
"""

import argparse
import sys

from . import embeddings, features, resnets


def _spec_from(args, layers=None):
    return features.ExportSpec(
        checkpoint=args.checkpoint,
        arch=args.arch,
        dataset=args.dataset,
        out_dir=args.out,
        layers=tuple(layers if layers is not None else args.layers),
        batch_size=args.batch_size,
        class_index=getattr(args, "class_index", None),
    )


def _cmd_features(args):
    manifests = features.export_features(_spec_from(args))
    for layer in sorted(manifests):
        print(manifests[layer])


def _cmd_embeddings(args):
    path = embeddings.export_embeddings(
        args.classes,
        model_id=args.model_id,
        out_dir=args.out,
        offline=args.offline,
        seed=args.seed,
        dim=args.dim,
    )
    print(path)


def _cmd_perturbed(args):
    print(features.export_perturbed_features(_spec_from(args, layers=resnets.LAYER_NAMES), args.heatmaps))


def _model_args(p):
    p.add_argument("--checkpoint", required=True, help="ResNet state-dict file (torch.save)")
    p.add_argument("--arch", required=True, choices=resnets.architectures())
    p.add_argument("--dataset", required=True, help="directory holding images.npy and labels.npy")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kdexport",
        description="export ResNet activations, gradients, and class embeddings as NPY + manifest files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-features", help="activations, class-score gradients, and labels per layer")
    _model_args(p)
    p.add_argument(
        "--layers",
        nargs="+",
        default=list(resnets.LAYER_NAMES),
        metavar="LAYER",
        help="tap points (last residual block per stage), default L1 L2 L3 L4",
    )
    p.add_argument(
        "--class-index",
        type=int,
        default=None,
        help="score this class for every sample instead of its own label",
    )
    p.set_defaults(fn=_cmd_features)

    p = sub.add_parser("export-embeddings", help="one text-embedding row per class name")
    p.add_argument("--classes", nargs="+", required=True, metavar="NAME")
    p.add_argument("--model-id", default=embeddings.DEFAULT_ENCODER)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--offline",
        action="store_true",
        help="skip the encoder and write a seeded orthonormal table (OFFLINE-flagged filename)",
    )
    p.add_argument("--seed", type=int, default=0, help="seed for the offline table")
    p.add_argument("--dim", type=int, default=768, help="row width of the offline table")
    p.set_defaults(fn=_cmd_embeddings)

    p = sub.add_parser("export-perturbed", help="pooled features of heatmap-masked images")
    _model_args(p)
    p.add_argument("--heatmaps", required=True, help="NPY (n, h, w) of masks in [0, 1]")
    p.set_defaults(fn=_cmd_perturbed)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, OSError, embeddings.EncoderUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
