"""``ccostream`` command line.

Exit codes: 0 success, 2 tolerance/invariant failure, 3 input error.
"""

from __future__ import annotations

import argparse
import itertools
import sys
import time
from pathlib import Path

import numpy as np

from . import accounting, dct
from .attention import (encoder_forward_offline, layer_backward, numerical_gradients,
                        random_stack, relative_error, init_context_slots)
from .config import CcoConfig, default_precision, parse_chunk_size, frames_to_ms
from .errors import CcoError, ConfigError
from .io import SyntheticSpec, gen_synthetic, load_frames, load_weights, save_weights, write_csv
from .masks import ExtendedLayout, MaskSpec, build_cco_mask, make_layout
from .streaming import TOLERANCE, compare_offline, open_session

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _lc(text: str):
    if text == "all":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"left context must be an integer or 'all', got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("left context must be >= 0")
    return value


def _chunk(text: str) -> int:
    try:
        return parse_chunk_size(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _add_chunking(p, chunk="8", lc="1", n_ctx=1):
    p.add_argument("--chunk-size", type=_chunk, default=_chunk(chunk),
                   help="chunk size in frames, or in ms with an 'ms' suffix (40 ms per frame)")
    p.add_argument("--lc", type=_lc, default=_lc(lc), help="left-context chunks, or 'all'")
    p.add_argument("--n-ctx", type=int, default=n_ctx, help="preceding context embeddings at inference")
    p.add_argument("--no-cco", action="store_true", help="baseline without context carry-over")


def _add_model(p):
    p.add_argument("--weights", type=Path, help="weights file (default: synthetic stack)")
    p.add_argument("--input", type=Path, help="frames as .npy or CSV (default: synthetic)")
    p.add_argument("--frames", type=int, default=64, help="synthetic frame count")
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("single", "double"), default=default_precision())
    p.add_argument("--out", type=Path, help="CSV output path")


def _config(args, d_model=None) -> CcoConfig:
    n_ctx = 0 if args.no_cco else args.n_ctx
    return CcoConfig(args.chunk_size, args.lc, n_ctx, getattr(args, "precision", "double"),
                     cco_enabled=not args.no_cco, d_model=d_model)


def _model(args):
    spec = SyntheticSpec(args.frames, args.d_model, args.heads, args.layers, seed=args.seed)
    frames, stack = gen_synthetic(spec)
    if args.weights:
        stack = load_weights(args.weights)
    if args.input:
        frames = load_frames(args.input)
    elif args.weights and frames.shape[1] != stack.d_model:
        frames = np.random.default_rng(args.seed).standard_normal((args.frames, stack.d_model))
    return frames, stack


def _echo(args) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# -- subcommands ---------------------------------------------------------------

def render_mask(mask: np.ndarray, is_slot: np.ndarray | None) -> str:
    """ASCII grid: '#' frame-to-frame, 'C' context slot involved, '.' blocked."""
    lines = []
    for r in range(mask.shape[0]):
        chars = []
        for c in range(mask.shape[1]):
            if not mask[r, c]:
                chars.append(".")
            elif is_slot is not None and (is_slot[r] or is_slot[c]):
                chars.append("C")
            else:
                chars.append("#")
        lines.append("".join(chars))
    return "\n".join(lines)


def cmd_mask_dump(args) -> int:
    layout = make_layout(args.frames, args.chunk_size)
    spec = MaskSpec(args.lc, 0 if args.no_cco else args.n_ctx, args.layer, not args.no_cco)
    ext = ExtendedLayout(layout)
    mask = build_cco_mask(ext, spec)
    grid = render_mask(mask, None if args.no_cco else ext.is_slot)
    print(grid)
    if args.out:
        Path(f"{args.out}.txt").write_text(grid + "\n")
        write_csv(f"{args.out}.csv", [f"k{i}" for i in range(mask.shape[1])],
                  mask.astype(int).tolist(), _echo(args))
    print(f"mask-dump: {mask.shape[0]}x{mask.shape[1]} mask, {int(mask.sum())} allowed entries")
    return EXIT_OK


def cmd_run_offline(args) -> int:
    frames, stack = _model(args)
    cfg = _config(args)
    t0 = time.perf_counter()
    out = encoder_forward_offline(frames, stack, cfg)
    elapsed = (time.perf_counter() - t0) * 1e3
    if args.out:
        write_csv(args.out, ["frame"] + [f"y{j}" for j in range(out.shape[1])],
                  ([i, *row] for i, row in enumerate(out)), _echo(args))
    print(f"run-offline: {out.shape[0]} frames x {out.shape[1]} dims in {elapsed:.2f} ms")
    return EXIT_OK


def cmd_run_stream(args) -> int:
    frames, stack = _model(args)
    cfg = _config(args)
    session = open_session(stack, cfg)
    step = args.push_size or cfg.chunk_size
    rows, latencies = [], []

    def record(outputs, elapsed):
        for out in outputs:
            b = len(latencies)
            latencies.append(elapsed / max(len(outputs), 1))
            start = b * cfg.chunk_size
            rows.extend([b + 1, start + i, latencies[-1], *row] for i, row in enumerate(out))

    for start in range(0, frames.shape[0], step):
        t0 = time.perf_counter()
        outputs = session.push_frames(frames[start:start + step])
        record(outputs, (time.perf_counter() - t0) * 1e3)
    t0 = time.perf_counter()
    tail = session.flush()
    if tail is not None:
        record([tail], (time.perf_counter() - t0) * 1e3)
    if args.out:
        write_csv(args.out, ["chunk", "frame", "chunk_ms"] + [f"y{j}" for j in range(stack.d_model)],
                  rows, _echo(args))
    print(f"run-stream: {session.frames_emitted} frames in {session.chunks_processed} chunks, "
          f"mean {np.mean(latencies):.3f} ms/chunk")
    if session.frames_emitted != frames.shape[0]:
        return EXIT_TOLERANCE
    return EXIT_OK


def cmd_compare(args) -> int:
    frames, stack = _model(args)
    cfg = _config(args)
    report = compare_offline(frames, stack, cfg)
    tol = TOLERANCE[cfg.precision]
    if args.out:
        write_csv(args.out, ["chunk", "max_abs_diff"],
                  ([b + 1, d] for b, d in enumerate(report.per_chunk_diffs)), _echo(args))
    ok = report.within(tol)
    print(f"compare: max_abs_diff={report.max_abs_diff:.3e} tol={tol:.0e} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    layout = make_layout(args.frames, args.chunk_size)
    frames = rng.standard_normal((args.frames, args.d_model))
    x = init_context_slots(frames, layout).values
    layer = random_stack(args.d_model, args.heads, 1, rng=rng).layers[0]
    mask = build_cco_mask(ExtendedLayout(layout), MaskSpec(args.lc, args.n_ctx, "later"))
    upstream = rng.standard_normal(x.shape)
    gx, gp = layer_backward(x, layer, mask, upstream)
    nx, np_ = numerical_gradients(x, layer, mask, upstream, h=args.h)
    results = [("input", float(relative_error(gx, nx).max()))]
    results += [(name, float(relative_error(gp[name], np_[name]).max())) for name in gp]
    if args.out:
        write_csv(args.out, ["tensor", "max_rel_err"], results, _echo(args))
    worst = max(results, key=lambda r: r[1])
    ok = worst[1] <= args.tol
    print(f"grad-check: worst {worst[0]} rel_err={worst[1]:.2e} tol={args.tol:.0e} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_sample_dct(args) -> int:
    sampler = dct.DctSampler(args.seed)
    draws = sampler.sample_many(args.draws)
    summary = dct.summarize(draws)
    if args.out:
        rows = ([i, d.mode, d.chunk_size_frames or "", d.chunk_size_ms or "",
                 "" if d.left_context_chunks is None else d.left_context_chunks]
                for i, d in enumerate(draws))
        write_csv(args.out, ["draw", "mode", "chunk_frames", "chunk_ms", "left_context"], rows,
                  {**_echo(args), **summary})
    print("sample-dct: " + " ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


GRID_KEYS = {
    "chunk_size": _chunk, "lc": _lc, "n_ctx": int, "cco": lambda s: s.lower() in ("1", "true", "yes"),
    "d_model": int, "heads": int, "layers": int, "chunks": int, "repetitions": int,
    "precision": str, "seed": int,
}
GRID_DEFAULTS = {"chunk_size": [16], "lc": [2], "n_ctx": [1], "cco": [True], "d_model": [64],
                 "heads": [4], "layers": [4], "chunks": [500], "repetitions": [3],
                 "precision": ["double"], "seed": [0]}


def parse_grid(text: str) -> list[dict]:
    """``key=value[,value...]`` lines; the cartesian product gives the configs."""
    grid = dict(GRID_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in GRID_KEYS:
            raise ConfigError(f"grid line {lineno}: expected one of {sorted(GRID_KEYS)} as key=value")
        try:
            grid[key] = [GRID_KEYS[key](v.strip()) for v in value.split(",")]
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"grid line {lineno}: {exc}") from None
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cmd_bench(args) -> int:
    points = parse_grid(args.grid.read_text() if args.grid else "")
    header = ["chunk_size", "chunk_ms", "lc", "n_ctx", "cco", "d_model", "layers", "precision",
              "samples", "mean_ms", "best_mean_ms", "p99_ms", "kv_first", "kv_later", "kv_baseline"]
    rows, ok = [], True
    for p in points:
        cco = p["cco"]
        cfg = CcoConfig(p["chunk_size"], p["lc"], p["n_ctx"] if cco else 0, p["precision"], cco_enabled=cco)
        stack = random_stack(p["d_model"], p["heads"], p["layers"], rng=p["seed"])
        rep = accounting.bench_stream(stack, cfg, p["chunks"], p["repetitions"], seed=p["seed"])
        mem = accounting.memory_report(cfg.chunk_size, cfg.lc, cfg.n_ctx, p["chunks"], p["layers"])
        last = p["chunks"]
        ok &= rep.p99_ms >= rep.mean_ms >= 0
        rows.append([cfg.chunk_size, frames_to_ms(cfg.chunk_size), "all" if cfg.lc is None else cfg.lc,
                     cfg.n_ctx, cco, p["d_model"], p["layers"], cfg.precision, rep.count,
                     rep.mean_ms, rep.best_mean_ms, rep.p99_ms,
                     mem.per_layer_kv[("first", last)] if cco else mem.baseline_kv[last],
                     mem.per_layer_kv[("later", last)] if cco else mem.baseline_kv[last],
                     mem.baseline_kv[last]])
        print(f"bench: C={cfg.chunk_size} lc={rows[-1][2]} n_ctx={cfg.n_ctx} cco={cco} "
              f"mean={rep.mean_ms:.3f} ms p99={rep.p99_ms:.3f} ms")
    if args.out:
        write_csv(args.out, header, rows, _echo(args))
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_gen(args) -> int:
    spec = SyntheticSpec(args.frames, args.d_model, args.heads, args.layers, seed=args.seed,
                         precision=args.precision)
    frames, stack = gen_synthetic(spec)
    save_weights(stack, args.weights_out)
    np.save(args.input_out, frames)
    print(f"gen: wrote {args.weights_out} ({stack.n_layers} layers) and {args.input_out} {frames.shape}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccostream", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mask-dump", help="print an attention mask as ASCII and CSV")
    p.add_argument("--frames", type=int, default=16)
    _add_chunking(p, chunk="4")
    p.add_argument("--layer", choices=("first", "later"), default="later")
    p.add_argument("--out", help="output prefix; writes PREFIX.txt and PREFIX.csv")
    p.set_defaults(func=cmd_mask_dump)

    for name, func, text in (("run-offline", cmd_run_offline, "whole-utterance masked forward"),
                             ("run-stream", cmd_run_stream, "chunk-by-chunk streaming forward"),
                             ("compare", cmd_compare, "diff streaming against offline")):
        p = sub.add_parser(name, help=text)
        _add_chunking(p)
        _add_model(p)
        if name == "run-stream":
            p.add_argument("--push-size", type=int, help="frames per push (default: one chunk)")
        p.set_defaults(func=func)

    p = sub.add_parser("grad-check", help="analytic vs finite-difference layer gradients")
    _add_chunking(p, chunk="4")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--d-model", type=int, default=8)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("sample-dct", help="draw dynamic-chunk-training configurations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_sample_dct)

    p = sub.add_parser("bench", help="per-chunk latency and KV accounting over a config grid")
    p.add_argument("--grid", type=Path, help="key=value lines; comma-separated values form a grid")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write a synthetic weights file and input frames")
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--d-model", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("single", "double"), default=default_precision())
    p.add_argument("--weights-out", type=Path, required=True)
    p.add_argument("--input-out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CcoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
