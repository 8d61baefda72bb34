"""Command-line interface: ``nncompress <command> [flags]``.

Exit status is 0 on success, 1 on a domain error (bad container, bad config,
shape mismatch) and 2 on a usage error (unknown flag, missing file).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import zoo
from .analyze import fit_laplacian
from .config import load_plan, load_spec
from .errors import ConfigError, NNCompressError
from .model import Network, Role, load_model, param_accounting, save_model
from .netforward import NipConfig, descriptor, descriptor_drift, load_image, synthetic_image
from .pipeline import (CompressionConfig, compress, decompress, decompress_tied,
                       load_compressed, save_compressed)
from .quantize import QuantizationSpec, Scalar
from .retrieval import load_run, mean_average_precision, mean_recall_at_4, write_descriptors
from .transform import TiedNetwork, prune_at, shared_param_count, tie_blocks

TRADEOFF_COLUMNS = ("bits", "cut", "bytes", "log10_bytes", "cosine", "l2_gap")


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _load_any(path: str) -> Network:
    """An ``.nnw`` network or the decompressed contents of an ``.nnz`` container."""
    p = _existing(path)
    head = p.read_bytes()[:4]
    if head == b"NNZ1":
        return decompress(load_compressed(p))
    return load_model(p)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _nip_config(args) -> NipConfig:
    return NipConfig(rotations=tuple(args.rotations), scales=tuple(args.scales), rois_per_scale=args.rois)


def _images(args, channels: int = 3) -> list[np.ndarray]:
    if getattr(args, "image", None):
        return [load_image(_existing(p)) for p in args.image]
    return [synthetic_image(args.seed * 1000 + i, args.image_size, channels) for i in range(args.images)]


def _input_channels(net: Network) -> int:
    conv = net.conv_layers()[0]
    return conv.tensors[Role.CONV_WEIGHT].shape[1] * conv.hyperparams.get("groups", 1)


# ---------------------------------------------------------------------------
# trade-off grid


@dataclass
class TradeoffConfig:
    coding: str = "flc"
    seed: int = 0
    bn_exempt: bool = True
    nip: NipConfig = field(default_factory=NipConfig)
    images: list = field(default_factory=list)


def tradeoff_grid(net: Network, bits, cuts, cfg: TradeoffConfig, containers: dict | None = None) -> list[dict]:
    """One row per (bits, cut): container size and descriptor drift against the uncompressed prefix.

    ``containers``, when given, receives each container's bytes keyed by ``(bits, cut)``.
    """
    for cut in cuts:
        if cut not in net:
            raise ConfigError(f"unknown cut layer {cut!r}")
    if not cfg.images:
        raise ConfigError("trade-off grid needs at least one image")
    rows = []
    for b in bits:
        for cut in cuts:
            spec = QuantizationSpec(Scalar(b), bn_exempt=cfg.bn_exempt)
            cm = compress(net, CompressionConfig(spec, cfg.coding, prune_at=cut, seed=cfg.seed))
            blob = cm.tobytes()
            if containers is not None:
                containers[(b, cut)] = blob
            drift = descriptor_drift(prune_at(net, cut), decompress(cm), cfg.images, cfg.nip)
            rows.append({"bits": b, "cut": cut, "bytes": len(blob), "log10_bytes": math.log10(len(blob)),
                         "cosine": drift.cosine, "l2_gap": drift.l2_gap})
    return rows


def format_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRADEOFF_COLUMNS)
    for r in rows:
        w.writerow([r["bits"], r["cut"], r["bytes"], f"{r['log10_bytes']:.6f}", f"{r['cosine']:.9f}",
                    f"{r['l2_gap']:.9f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def cmd_compress(args, out):
    net = load_model(_existing(args.input))
    spec = load_spec(_existing(args.spec)) if args.spec else QuantizationSpec.uniform(args.mode)
    plan = load_plan(_existing(args.tying)) if args.tying else None
    cfg = CompressionConfig(spec, args.coding, prune_at=args.prune_at, tying=plan, seed=args.seed)
    cm = compress(net, cfg)
    save_compressed(cm, args.output)
    rep = cm.size_report()
    print(f"wrote {args.output}: {rep.total} bytes (index {rep.index_payload}, codebooks {rep.codebooks}, "
          f"huffman {rep.huffman_tables}, exempt {rep.exempt}, manifest {rep.manifest})", file=out)


def cmd_decompress(args, out):
    net = decompress(load_compressed(_existing(args.input)))
    save_model(net, args.output)
    print(f"wrote {args.output}: {len(net.layers)} layers", file=out)


def _inspect_network(net: Network, out):
    acct = {c.name: c for c in param_accounting(net).layers}
    print(f"arch {net.arch_tag or '-'}: {len(net.layers)} layers", file=out)
    print(f"{'layer':<24} {'kind':<10} {'conv':>10} {'bn':>8} {'mu':>11} {'b':>11}", file=out)
    for layer in net.layers:
        c = acct.get(layer.name)
        mu = b = "-"
        w = layer.tensors.get(Role.CONV_WEIGHT)
        if w is not None and w.has_payload:
            try:
                fit = fit_laplacian(w)
                mu, b = f"{fit.mu:.4e}", f"{fit.b:.4e}"
            except NNCompressError:
                mu, b = "degenerate", "-"
        print(f"{layer.name:<24} {layer.kind.value:<10} {c.conv if c else 0:>10} {c.bn if c else 0:>8} "
              f"{mu:>11} {b:>11}", file=out)
    total = param_accounting(net)
    print(f"total conv params {total.conv_total}, bn params {total.bn_total}", file=out)


def cmd_inspect(args, out):
    p = _existing(args.path)
    if p.read_bytes()[:4] == b"NNZ1":
        cm = load_compressed(p)
        rep = cm.size_report()
        print(f"container {p.name}: {rep.total} bytes, log10 {rep.log10_total:.4f}", file=out)
        print(f"  index {rep.index_payload}, codebooks {rep.codebooks}, huffman {rep.huffman_tables}, "
              f"exempt {rep.exempt}, manifest {rep.manifest}", file=out)
        stored = decompress_tied(cm)
        if isinstance(stored, TiedNetwork):
            sc = shared_param_count(stored)
            print(f"  tied: {sc.unique} unique / {sc.expanded} expanded conv params (x{sc.ratio:.2f})", file=out)
            stored = stored.unique_layers
        _inspect_network(stored, out)
    else:
        _inspect_network(load_model(p), out)


def cmd_prune(args, out):
    net = load_model(_existing(args.input))
    try:
        pruned = prune_at(net, args.at)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_model(pruned, args.output)
    print(f"wrote {args.output}: {len(pruned.layers)} of {len(net.layers)} layers, "
          f"{param_accounting(pruned).conv_total} conv params", file=out)


def cmd_tie(args, out):
    net = load_model(_existing(args.input))
    plan = load_plan(_existing(args.plan))
    tied = tie_blocks(net, plan)
    sc = shared_param_count(tied)
    print(f"unique {sc.unique}, expanded {sc.expanded}, ratio {sc.ratio:.4f}", file=out)
    if args.output:
        cfg = CompressionConfig(QuantizationSpec(), "flc", tying=plan, seed=args.seed)
        save_compressed(compress(net, cfg), args.output)
        print(f"wrote {args.output}", file=out)


def cmd_extract(args, out):
    net = _load_any(args.input)
    cfg = _nip_config(args)
    if args.image:
        named = {Path(p).stem: load_image(_existing(p)) for p in args.image}
    else:
        ch = _input_channels(net)
        named = {f"img{i:04d}": im for i, im in enumerate(_images(args, ch))}
    descs = {}
    for key, img in named.items():
        d = descriptor(net, img, cfg, args.upto)
        if d.zero:
            print(f"warning: {key}: all-zero descriptor", file=sys.stderr)
        descs[key] = d.vector
    write_descriptors(args.output, descs)
    print(f"wrote {len(descs)} descriptors of dimension {len(next(iter(descs.values())))} to {args.output}",
          file=out)


def cmd_evaluate(args, out):
    run = load_run(_existing(args.descriptors), _existing(args.relevance), args.metric,
                   _existing(args.queries) if args.queries else None)
    print(f"queries {len(run.queries)}", file=out)
    print(f"mAP {mean_average_precision(run):.6f}", file=out)
    print(f"4xRecall@4 {mean_recall_at_4(run):.4f}", file=out)


def cmd_tradeoff(args, out):
    net = load_model(_existing(args.input))
    cuts = args.cuts or [net.layers[-1].name]
    cfg = TradeoffConfig(args.coding, args.seed, not args.quantize_bn, _nip_config(args),
                         _images(args, _input_channels(net)))
    containers = {} if args.containers else None
    rows = tradeoff_grid(net, args.bits, cuts, cfg, containers)
    text = format_csv(rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    if containers is not None:
        d = Path(args.containers)
        d.mkdir(parents=True, exist_ok=True)
        for (b, cut), blob in containers.items():
            (d / f"{cut}_{b}bit.nnz").write_bytes(blob)


SYNTH = ("toy_resnet", "toy_plain", "alexnet_like", "shared_resnet")


def cmd_synth(args, out):
    if args.arch == "toy_resnet":
        net = zoo.toy_resnet(args.depth, args.channels, args.seed)
    elif args.arch == "toy_plain":
        net = zoo.toy_plain(args.depth, args.channels, args.seed)
    elif args.arch == "alexnet_like":
        net = zoo.alexnet_like(args.width, args.seed)
    else:
        c = args.channels
        net, plan = zoo.shared_resnet((c, 2 * c), (args.depth, args.depth), classifier=False, seed=args.seed,
                                      stem_kernel=3)
        if args.plan_out:
            from .config import format_plan
            Path(args.plan_out).write_text(format_plan(plan))
    save_model(net, args.output)
    print(f"wrote {args.output}: {args.arch}, {param_accounting(net).conv_total} conv params", file=out)


# ---------------------------------------------------------------------------
# argument parsing


def _add_nip(p):
    p.add_argument("--rotations", type=_int_list, default=[0, 90, 180, 270], help="degrees, multiples of 90")
    p.add_argument("--scales", type=_float_list, default=[1.0, 0.75, 0.5], help="ROI side as a fraction")
    p.add_argument("--rois", type=int, default=20, help="ROIs per scale")


def _add_images(p):
    p.add_argument("--image", action="append", help="image file (repeatable); default is synthetic images")
    p.add_argument("--images", type=int, default=4, help="number of synthetic images")
    p.add_argument("--image-size", type=int, default=32)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nncompress", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", parents=[common], help="quantize and entropy-code a network")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--spec", help="quantization config file")
    p.add_argument("--mode", default="scalar:4", help="uniform mode when --spec is absent")
    p.add_argument("--tying", help="tying plan file")
    p.add_argument("--prune-at", help="keep layers up to and including this one")
    p.add_argument("--coding", choices=("flc", "vlc"), default="flc")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", parents=[common], help="rebuild a network from a container")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("inspect", parents=[common], help="parameter counts, Laplacian fits and container sizes")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("prune", parents=[common], help="truncate a network after a layer")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--at", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("tie", parents=[common], help="share weights across repeated blocks")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", dest="output", help="write an unquantized tied container")
    p.set_defaults(func=cmd_tie)

    p = sub.add_parser("extract", parents=[common], help="NIP descriptors for images")
    p.add_argument("--in", dest="input", required=True, help=".nnw or .nnz")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--upto", help="layer whose feature maps are pooled (default: last)")
    _add_images(p)
    _add_nip(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", parents=[common], help="mAP and 4xRecall@4 of a descriptor set")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--relevance", required=True)
    p.add_argument("--queries", help="query descriptors (default: database entries)")
    p.add_argument("--metric", choices=("l2", "cosine"), default="l2")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tradeoff", parents=[common], help="CSV of size vs descriptor drift over bits and cuts")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--bits", type=_int_list, default=[3, 4, 5, 8])
    p.add_argument("--cuts", type=_str_list, help="comma-separated layer names (default: last layer)")
    p.add_argument("--coding", choices=("flc", "vlc"), default="flc")
    p.add_argument("--quantize-bn", action="store_true", help="quantize BN parameters too")
    p.add_argument("--out", dest="output", help="CSV path (default: stdout)")
    p.add_argument("--containers", help="directory receiving every container of the grid")
    _add_images(p)
    _add_nip(p)
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("synth", parents=[common], help="write a seeded toy network")
    p.add_argument("arch", choices=SYNTH)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--depth", type=int, default=4, help="blocks, conv layers or repeats")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--width", type=float, default=0.125, help="alexnet_like filter-count scale")
    p.add_argument("--plan-out", help="shared_resnet: also write its tying plan")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args, out)
    except UsageError as exc:
        print(f"nncompress {args.command}: {exc}", file=sys.stderr)
        return 2
    except (NNCompressError, ValueError, OSError) as exc:
        print(f"nncompress {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
