"""Command-line front end.

Exit codes: 0 on success, 2 when inputs violate a contract (bad files,
shapes, flags), 1 on internal errors. All outputs are byte-deterministic:
reports embed input digests, never timestamps, unless --timestamp is given.
"""

import argparse
import hashlib
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import distcorr, metrics, saliency, testkit
from .jsonutil import canonical_dumps
from .tensorio import flatten_batch, load_manifest, load_tensor, write_tensor


def _digest(path):
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _threads(args):
    if args.threads < 1:
        raise ValueError(f"--threads must be >= 1, got {args.threads}")
    return args.threads


def _map_ordered(fn, items, threads):
    # parallel only across batches; results merged in submission order
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _emit_report(doc, out, timestamp):
    if timestamp:
        doc = dict(doc)
        doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    text = canonical_dumps(doc) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _as_samples(arr, origin):
    if arr.ndim == 1:
        return arr.reshape(-1, 1)
    if arr.ndim == 2:
        return arr
    return flatten_batch(arr)


def _write_pgm(map2d, path):
    """8-bit binary PGM; 0 -> 0, 1 -> 255, ties rounded away from zero."""
    h, w = map2d.shape
    quant = np.clip(np.floor(map2d * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quant.tobytes())


def _render_maps(maps, outdir, size, threads):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    heat = saliency.Heatmap(maps=maps, normalized=False)
    if size is None:
        size = maps.shape[1:]
    normalized = saliency.postprocess(heat, int(size[0]), int(size[1]))
    jobs = list(enumerate(normalized.maps))
    _map_ordered(lambda job: _write_pgm(job[1], out / f"map_{job[0]:04d}.pgm"), jobs, threads)
    return normalized


def _cmd_dcor(args):
    x = _as_samples(load_tensor(args.x), args.x)
    y = _as_samples(load_tensor(args.y), args.y)
    value = distcorr.dcor(x, y)
    doc = {"digests": [_digest(args.x), _digest(args.y)]}
    if args.sqrt:
        doc["dcor"] = float(np.sqrt(max(value, 0.0)))
    else:
        doc["dcor2"] = value
    _emit_report(doc, args.out, args.timestamp)
    return 0


def _cmd_pdcor(args):
    x = _as_samples(load_tensor(args.x), args.x)
    y = _as_samples(load_tensor(args.y), args.y)
    z = _as_samples(load_tensor(args.z), args.z)
    doc = {
        "pdcor2": distcorr.pdcor2(x, y, z),
        "digests": [_digest(args.x), _digest(args.y), _digest(args.z)],
    }
    _emit_report(doc, args.out, args.timestamp)
    return 0


def _manifest_digests(manifest):
    out = [_digest(manifest.path)]
    for e in manifest.entries:
        for p in (e.acts, e.grads, e.labels):
            if p is not None:
                out.append(_digest(p))
    return out


def _load_bundles(manifest):
    return [saliency.load_bundle(e, manifest.layer) for e in manifest.entries]


def _cam_command(args, mode):
    student = load_manifest(args.student) if mode else load_manifest(args.bundle)
    threads = _threads(args)
    if mode:
        base = load_manifest(args.base)
        if len(student.entries) != len(base.entries):
            raise ValueError(
                f"manifests disagree on batch count "
                f"({len(student.entries)} vs {len(base.entries)})"
            )
        pairs = list(zip(_load_bundles(student), _load_bundles(base)))

        def run(pair):
            sb, bb = pair
            mapped, other = (sb, bb) if mode == saliency.DISTILLED else (bb, sb)
            if mapped.grads is None:
                raise ValueError(f"{mode} mode needs class-score gradients on the mapped bundle")
            energy, _, g = saliency.unique_energy_with_grad(mapped.acts, other.acts, args.eps)
            heat = saliency.cam_assemble(mapped.acts, mapped.grads, saliency.channel_uniqueness(g))
            return heat.maps, energy

        results = _map_ordered(run, pairs, threads)
        digests = _manifest_digests(student) + _manifest_digests(base)
        extra = {"mode": mode, "eps": args.eps, "energy_per_batch": [e for _, e in results]}
    else:
        bundles = _load_bundles(student)
        results = _map_ordered(lambda b: (saliency.gradcam(b).maps, None), bundles, threads)
        digests = _manifest_digests(student)
        extra = {"mode": "gradcam"}
    maps = np.concatenate([m for m, _ in results], axis=0)
    write_tensor(maps, args.out)
    if args.render:
        _render_maps(maps, args.render, args.render_size, threads)
    if args.report:
        # basename only: reports must stay byte-identical across working directories
        doc = {"layer": student.layer, "maps": Path(args.out).name, "digests": digests}
        doc.update(extra)
        _emit_report(doc, args.report, args.timestamp)
    return 0


def _cmd_unicam(args):
    if args.eps <= 0:
        raise ValueError(f"--eps must be > 0, got {args.eps}")
    return _cam_command(args, args.mode)


def _cmd_gradcam(args):
    return _cam_command(args, None)


def _load_features(manifest):
    feats, ranks = [], set()
    for e in manifest.entries:
        arr = load_tensor(e.acts)
        if arr.ndim < 2:
            raise ValueError(f"{e.acts}: feature tensors need a batch axis plus features")
        ranks.add(arr.ndim)
        feats.append(arr if arr.ndim == 2 else flatten_batch(arr))
    source = "feature-vectors" if ranks == {2} else "flattened-activations"
    return feats, source


def _cmd_fss(args):
    student = load_manifest(args.student)
    base = load_manifest(args.base)
    threads = _threads(args)
    sfeats, source_s = _load_features(student)
    bfeats, source_b = _load_features(base)
    if len(sfeats) != len(bfeats):
        raise ValueError(f"manifests disagree on batch count ({len(sfeats)} vs {len(bfeats)})")
    pairs = list(zip(sfeats, bfeats))
    for j, (sj, bj) in enumerate(pairs):
        if sj.shape[0] != bj.shape[0]:
            raise ValueError(f"batch {j}: student n {sj.shape[0]} != base n {bj.shape[0]}")
    values = _map_ordered(lambda p: distcorr.dcor_checked(p[0], p[1]), pairs, threads)
    report = metrics.MetricReport(
        metric="FSS",
        layer=args.layer or student.layer,
        per_batch=tuple(v for v, _ in values),
        mean=float(sum(v for v, _ in values) / len(values)),
        degenerate_batches=tuple(i for i, (_, d) in enumerate(values) if d),
        manifest_digests=tuple(_manifest_digests(student) + _manifest_digests(base)),
        extra={"source": source_s if source_s == source_b else f"{source_s}+{source_b}"},
    )
    _emit_report(report.to_dict(), args.out, args.timestamp)
    return 0


def _cmd_rs(args):
    manifest = load_manifest(args.features)
    threads = _threads(args)
    feats, source = _load_features(manifest)
    labels = []
    for j, e in enumerate(manifest.entries):
        if e.labels is None:
            raise ValueError(f"{manifest.path} entry {j}: RS needs labels for every batch")
        labels.append(load_tensor(e.labels))
    table = metrics.EmbeddingTable.load(args.table)
    jobs = list(zip(feats, labels))
    values = _map_ordered(lambda p: distcorr.dcor_checked(p[0], table.gather(p[1])), jobs, threads)
    report = metrics.MetricReport(
        metric="RS",
        layer=args.layer or manifest.layer,
        per_batch=tuple(v for v, _ in values),
        mean=float(sum(v for v, _ in values) / len(values)),
        degenerate_batches=tuple(i for i, (_, d) in enumerate(values) if d),
        manifest_digests=tuple(_manifest_digests(manifest) + [_digest(args.table)]),
        extra={"source": source},
    )
    _emit_report(report.to_dict(), args.out, args.timestamp)
    return 0


def _cmd_perturb(args):
    images = load_tensor(args.images)
    maps = load_tensor(args.maps)
    if images.ndim != 4:
        raise ValueError(f"{args.images}: images must be (n, c, h, w)")
    if maps.ndim != 3:
        raise ValueError(f"{args.maps}: maps must be (n, H, W)")
    if args.normalized:
        if np.any(maps > 1.0):
            raise ValueError(f"{args.maps}: --normalized maps must lie in [0, 1]")
        heat = saliency.Heatmap(maps=maps, normalized=True)
    else:
        heat = saliency.postprocess(
            saliency.Heatmap(maps=maps, normalized=False), images.shape[2], images.shape[3]
        )
    write_tensor(metrics.perturb_batch(images, heat), args.out)
    return 0


def _cmd_render(args):
    maps = load_tensor(args.maps)
    if maps.ndim != 3:
        raise ValueError(f"{args.maps}: maps must be (n, H, W)")
    _render_maps(maps, args.out, args.size, _threads(args))
    return 0


def _cmd_fixtures_generate(args):
    fx = testkit.gen_fixtures(args.seed, args.n)
    paths = testkit.write_fixtures(fx, args.out)
    sys.stdout.write(paths["scenario"].read_text(encoding="utf-8"))
    return 0


def _add_common(sub, timestamp=True):
    sub.add_argument("--threads", type=int, default=1, help="worker threads across batches")
    if timestamp:
        sub.add_argument("--timestamp", action="store_true", help="embed a wall-clock timestamp")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kdlens",
        description="Saliency maps and similarity metrics for distilled-vs-base model analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dcor", help="squared distance correlation between two sample files")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--sqrt", action="store_true", help="report the unsquared value")
    p.add_argument("--out", help="also write the report here")
    _add_common(p)
    p.set_defaults(func=_cmd_dcor)

    p = sub.add_parser("pdcor", help="squared partial distance correlation of x, y given z")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--z", required=True)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=_cmd_pdcor)

    p = sub.add_parser("unicam", help="uniqueness-weighted class activation maps")
    p.add_argument("--student", required=True, help="student batch manifest")
    p.add_argument("--base", required=True, help="base batch manifest")
    p.add_argument("--mode", choices=[saliency.DISTILLED, saliency.RESIDUAL],
                   default=saliency.DISTILLED)
    p.add_argument("--eps", type=float, default=saliency.DEFAULT_EPS,
                   help="distance smoothing for the differentiable path")
    p.add_argument("--out", required=True, help="raw maps tensor file")
    p.add_argument("--render", help="directory for normalized PGM renders")
    p.add_argument("--render-size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--report", help="write a JSON report here")
    _add_common(p)
    p.set_defaults(func=_cmd_unicam)

    p = sub.add_parser("gradcam", help="class-gradient activation maps (uniform channel weights)")
    p.add_argument("--bundle", required=True, help="batch manifest with acts and grads")
    p.add_argument("--out", required=True)
    p.add_argument("--render")
    p.add_argument("--render-size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--report")
    _add_common(p)
    p.set_defaults(func=_cmd_gradcam)

    p = sub.add_parser("fss", help="mean squared distance correlation between feature batches")
    p.add_argument("--student", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--layer", help="override the layer recorded in the report")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=_cmd_fss)

    p = sub.add_parser("rs", help="mean squared distance correlation against label embeddings")
    p.add_argument("--features", required=True, help="feature manifest with labels per batch")
    p.add_argument("--table", required=True, help="class-embedding tensor file")
    p.add_argument("--layer")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=_cmd_rs)

    p = sub.add_parser("perturb", help="mask images with normalized saliency maps")
    p.add_argument("--images", required=True)
    p.add_argument("--maps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalized", action="store_true",
                   help="maps are already normalized; use them as-is instead of post-processing")
    _add_common(p, timestamp=False)
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("fixtures", help="synthetic verification fixtures")
    fsub = p.add_subparsers(dest="action", required=True)
    g = fsub.add_parser("generate", help="write a seeded fixture set and its measured scenario")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--out", required=True)
    _add_common(g, timestamp=False)
    g.set_defaults(func=_cmd_fixtures_generate)

    p = sub.add_parser("render", help="normalize maps and write 8-bit PGM images")
    p.add_argument("--maps", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    _add_common(p, timestamp=False)
    p.set_defaults(func=_cmd_render)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the exit contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
