"""Command-line front end: ``c3m {encode,decode,schedule,stats,bench,weights}``."""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import codec, entropy, pnm
from .schedule import KINDS, make_schedule, schedule_stats
from .transforms import PROFILES, ModelWeights

SEED_ENV = "C3M_SEED"
COMPLEXITY = {"serial": "O(n^2)", "checkerboard": "two-pass", "c3m": "O(log n)"}


def _default_seed():
    value = os.environ.get(SEED_ENV, "0")
    try:
        return int(value)
    except ValueError:
        raise SystemExit(f"error: {SEED_ENV} must be an integer, got {value!r}") from None


def _emit(data, fmt, text):
    if fmt == "json":
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        print(text)


def _int_list(value):
    try:
        return [int(v) for v in value.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None


def _kind_list(value):
    kinds = [v for v in value.split(",") if v]
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown kinds {bad}; choose from {list(KINDS)}")
    return kinds


def _load_weights(path):
    return ModelWeights.load(path) if path else None


def cmd_encode(args):
    img = pnm.to_rgb(pnm.read_image(args.input))
    weights = _load_weights(args.weights)
    if weights is not None and weights.profile.name != args.profile:
        raise ValueError(f"weight file is for profile {weights.profile.name!r}")
    res, report = codec.encode_report(img, args.context, args.profile, args.seed, weights)
    with open(args.output, "wb") as f:
        f.write(res.container.to_bytes())
    _emit(report.to_dict(), args.format, report.to_text())


def cmd_decode(args):
    with open(args.input, "rb") as f:
        data = f.read()
    reference = pnm.read_image(args.reference) if args.reference else None
    x_hat, _, report = codec.decode_report(data, _load_weights(args.weights), reference)
    if args.output.lower().endswith(".pgm"):
        pnm.write_image(args.output, pnm.to_gray(x_hat))
    else:
        pnm.write_image(args.output, x_hat)
    _emit(report.to_dict(), args.format, report.to_text())


def cmd_schedule(args):
    sched = make_schedule(args.kind, args.h, args.w)
    stats = schedule_stats(sched)
    passes = []
    for p, st in zip(sched.passes, stats.passes):
        passes.append({"index": p.index, "backbone": p.backbone, "causal_size": p.causal_size,
                       "receptive_mean": st.receptive_mean, "positions": [list(q) for q in p.positions]})
    data = {"kind": args.kind, "h": args.h, "w": args.w, "pass_count": sched.pass_count,
            "passes": passes}
    lines = [f"kind: {args.kind}", f"grid: {args.h}x{args.w}", f"pass_count: {sched.pass_count}"]
    for p in passes:
        pos = " ".join(f"({r},{c})" for r, c in p["positions"])
        lines.append(f"pass {p['index']} [{p['backbone']}, causal={p['causal_size']}]: {pos}")
    _emit(data, args.format, "\n".join(lines))


def cmd_stats(args):
    stats = schedule_stats(make_schedule(args.kind, args.h, args.w))
    _emit(stats.to_dict(), args.format, stats.to_text())


def bench_latent_decode(n, kind, reps, weights, seed=0):
    """Mean wall-clock (ms) of decoding an n x n latent grid, plus the pass count."""
    rng = np.random.default_rng(seed)
    c = weights.profile.latent_channels
    y_hat = entropy.quantize(rng.normal(0.0, 4.0, (c, n, n)))
    psi = rng.normal(0.0, 2.5, (weights.profile.psi_channels, n, n))
    streams, _ = codec.encode_latents(y_hat, psi, kind, weights)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        out = codec.decode_latents(streams, psi, kind, weights, y_hat.shape)
        times.append(1000.0 * (time.perf_counter() - t0))
        if not np.array_equal(out, y_hat):
            raise RuntimeError(f"latent round trip failed for {kind} at {n}x{n}")
    return float(np.mean(times)), len(streams), sum(len(s) for s in streams)


def cmd_bench(args):
    weights = ModelWeights.seeded(args.profile, args.seed)
    rows = []
    for n in args.sizes:
        for kind in args.kinds:
            ms, passes, nbytes = bench_latent_decode(n, kind, args.reps, weights, args.seed)
            rows.append({"size": n, "kind": kind, "pass_count": passes,
                         "complexity": COMPLEXITY[kind], "decode_ms": round(ms, 3),
                         "payload_bytes": nbytes})
    header = f"{'size':>5} {'kind':>13} {'passes':>7} {'complexity':>10} {'decode_ms':>11}"
    lines = [header] + [f"{r['size']:>5} {r['kind']:>13} {r['pass_count']:>7} "
                        f"{r['complexity']:>10} {r['decode_ms']:>11.1f}" for r in rows]
    _emit({"profile": args.profile, "reps": args.reps, "rows": rows}, args.format, "\n".join(lines))


def cmd_weights(args):
    ModelWeights.seeded(args.profile, args.seed).save(args.output)
    print(f"wrote {args.profile} weights (seed {args.seed}) to {args.output}")


def build_parser():
    parser = argparse.ArgumentParser(prog="c3m", description="Corner-to-center learned image codec")
    sub = parser.add_subparsers(dest="command", required=True)

    def fmt(p):
        p.add_argument("--format", choices=("text", "json"), default="text")

    p = sub.add_parser("encode", help="compress a PPM/PGM image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--context", choices=KINDS, default="c3m")
    p.add_argument("--profile", choices=sorted(PROFILES), default="tiny")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--weights", help="weight file to use instead of seeded weights")
    fmt(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decompress a container to PPM/PGM")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--reference", help="original image for PSNR")
    p.add_argument("--weights")
    fmt(p)
    p.set_defaults(func=cmd_decode)

    for name, func, text in (("schedule", cmd_schedule, "dump a decode schedule"),
                             ("stats", cmd_stats, "causal-context statistics of a schedule")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--h", type=int, required=True)
        p.add_argument("--w", type=int, required=True)
        p.add_argument("--kind", choices=KINDS, required=True)
        fmt(p)
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="latent decode latency per schedule kind")
    p.add_argument("--sizes", type=_int_list, default=[8, 16, 32])
    p.add_argument("--kinds", type=_kind_list, default=list(KINDS))
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--profile", choices=sorted(PROFILES), default="tiny")
    p.add_argument("--seed", type=int, default=None)
    fmt(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("weights", help="write seeded weights to a weight file")
    p.add_argument("--profile", choices=sorted(PROFILES), default="tiny")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_weights)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", 0) is None:
        args.seed = _default_seed()
    for attr in ("h", "w", "reps"):
        if getattr(args, attr, 1) < 1:
            parser.error(f"--{attr} must be positive")
    if getattr(args, "sizes", [1]) and min(getattr(args, "sizes", [1])) < 1:
        parser.error("--sizes must be positive")
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
