"""Command-line pipeline: init, train, calibrate, score, prune, eval,
bound-check, oracle, compare.

Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.
All tabular output is RFC-4180 CSV with LF line endings.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from .calib import CalibSpec, collect_stats, load_corpus, sample_calibration
from .container import (ContainerError, load_model, load_scores, load_stats,
                        save_model, save_scores, save_stats)
from .evaluate import (EvalReport, bound_check_trials, evaluate_pruning,
                       oracle_trials, perplexity)
from .model import ModelConfig, init_model
from .prune import SparsityTarget, apply_prune, select_masks
from .rng import derive_seed
from .score import METHODS, compute_scores
from .train import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockprune",
        description="Structured pruning of toy transformer LMs by block-wise "
                    "importance propagation, with baselines and verification tools.")
    parser.add_argument("--time", action="store_true", help="print elapsed wall time to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a random-weight model container")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--ffn-hidden", type=int, default=128)
    p.add_argument("--n-blocks", type=int, default=4)
    p.add_argument("--activation", choices=("relu", "gelu", "silu"), default="gelu")
    p.add_argument("--no-causal", action="store_true")
    p.add_argument("--prenorm", action="store_true")
    p.add_argument("--gated", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-std", type=float, default=0.02)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="train a model on a byte corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--lr", type=float, default=1.5e-3)
    p.add_argument("--grad-clip", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="CSV training log (step, loss, grad_norm)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="collect activation statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="compute importance scores from stats")
    p.add_argument("--model", required=True)
    p.add_argument("--stats", help="stats container (required for bip/wanda)")
    p.add_argument("--method", choices=METHODS, default="bip")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-constant-c", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("prune", help="end-to-end one-shot prune")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", help="calibration corpus (required for bip/wanda unless --scores)")
    p.add_argument("--scores", help="reuse a scores container instead of calibrating")
    p.add_argument("--method", choices=METHODS, default="bip")
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="evaluate one pruning against the dense model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--method", choices=METHODS, default="bip")
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--eval-sequences", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", help="write PREFIX.txt and PREFIX.csv reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bound-check", help="verify the block-output bound on random triples")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--activation", choices=("relu", "gelu", "silu"), default="relu")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tokens", type=int, default=8)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--ffn-hidden", type=int, default=32)
    p.add_argument("--ratios", default="0.25,0.5")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("oracle", help="compare the FFN score against exhaustive mask search")
    p.add_argument("--ffn-size", type=int, default=12)
    p.add_argument("--keep", type=int, default=6)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--tokens", type=int, default=64)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("compare", help="score+prune+eval every method over a ratio sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--ratios", default="0.2,0.5")
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--eval-sequences", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        code = args.func(args)
    except (ContainerError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = 1
    if args.time:
        print(f"elapsed: {time.perf_counter() - started:.3f}s", file=sys.stderr)
    return code


def cmd_init(args) -> int:
    if args.d % args.n_heads != 0:
        raise ValueError(f"--d {args.d} must be divisible by --n-heads {args.n_heads}")
    cfg = ModelConfig(d=args.d, n_heads=args.n_heads, head_dim=args.d // args.n_heads,
                      ffn_hidden=args.ffn_hidden, n_blocks=args.n_blocks,
                      activation=args.activation, causal=not args.no_causal,
                      prenorm=args.prenorm, gated=args.gated)
    model = init_model(cfg, args.seed, init_std=args.init_std)
    save_model(args.out, model)
    print(f"wrote {args.out}: d={cfg.d} heads={cfg.n_heads} ffn={cfg.ffn_hidden} "
          f"blocks={cfg.n_blocks} activation={cfg.activation}")
    return 0


def cmd_train(args) -> int:
    model = load_model(args.model)
    corpus = load_corpus(args.corpus)
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, seq_len=args.seq_len,
                      learning_rate=args.lr, seed=args.seed, grad_clip=args.grad_clip)
    trained = train(model, corpus, cfg, log_path=args.log)
    save_model(args.out, trained)
    print(f"trained {args.steps} steps; wrote {args.out}")
    return 0


def _calibrate(model, corpus, samples, seq_len, seed):
    spec = CalibSpec(n_samples=samples, seq_len=seq_len, seed=seed)
    return collect_stats(model, sample_calibration(corpus, spec))


def cmd_calibrate(args) -> int:
    model = load_model(args.model)
    corpus = load_corpus(args.corpus)
    stats = _calibrate(model, corpus, args.samples, args.seq_len, args.seed)
    save_stats(args.out, stats)
    print(f"collected stats over {stats.token_count} tokens; wrote {args.out}")
    return 0


def cmd_score(args) -> int:
    model = load_model(args.model)
    stats = load_stats(args.stats) if args.stats else None
    scores = compute_scores(model, args.method, stats=stats, seed=args.seed,
                            include_constant_c=args.include_constant_c)
    save_scores(args.out, scores)
    print(f"scored {len(scores.ffn)} blocks with method={args.method}; wrote {args.out}")
    return 0


def _compute_mask(model, corpus, method, ratio, samples, seq_len, seed, scores_path=None):
    if scores_path:
        scores = load_scores(scores_path)
    else:
        stats = None
        if method in ("bip", "wanda"):
            if corpus is None:
                raise ValueError(f"method {method!r} needs --corpus or --scores")
            stats = _calibrate(model, corpus, samples, seq_len, seed)
        scores = compute_scores(model, method, stats=stats, seed=seed)
    return select_masks(scores, SparsityTarget(ratio))


def cmd_prune(args) -> int:
    model = load_model(args.model)
    corpus = load_corpus(args.corpus) if args.corpus else None
    mask = _compute_mask(model, corpus, args.method, args.ratio,
                         args.samples, args.seq_len, args.seed, args.scores)
    pruned = apply_prune(model, mask)
    save_model(args.out, pruned)
    kept_h = [int(np.sum(k)) for k in mask.keep_heads]
    kept_f = [int(np.sum(k)) for k in mask.keep_ffn]
    print(f"pruned method={args.method} ratio={args.ratio}; kept heads {kept_h}, "
          f"ffn channels {kept_f}; wrote {args.out}")
    return 0


def _eval_batch(corpus, n_sequences, seq_len, seed):
    spec = CalibSpec(n_samples=n_sequences, seq_len=seq_len,
                     seed=derive_seed(seed, "eval-batch"))
    return sample_calibration(corpus, spec)


def cmd_eval(args) -> int:
    model = load_model(args.model)
    corpus = load_corpus(args.corpus)
    mask = _compute_mask(model, corpus, args.method, args.ratio,
                         args.samples, args.seq_len, args.seed)
    pruned = apply_prune(model, mask)
    batch = _eval_batch(corpus, args.eval_sequences, args.seq_len, args.seed)
    report = evaluate_pruning(model, pruned, mask, corpus, batch, args.seq_len,
                              method=args.method, ratio=args.ratio)
    _print_report(report)
    if args.out_prefix:
        _write_report_text(f"{args.out_prefix}.txt", report)
        with open(f"{args.out_prefix}.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            _write_report_rows(writer, report)
        print(f"wrote {args.out_prefix}.txt and {args.out_prefix}.csv")
    return 0


CSV_HEADER = ["method", "ratio", "block", "recon_error", "ppl", "kl", "params", "macs"]


def _fmt(x) -> str:
    return repr(float(x))


def _print_report(r: EvalReport) -> None:
    print(f"method={r.method} ratio={r.ratio}")
    print(f"  ppl dense {r.ppl_dense:.4f} -> pruned {r.ppl_pruned:.4f}   kl {r.kl_mean:.6f}")
    print(f"  params {r.params_dense} -> {r.params_pruned}   macs {r.macs_dense} -> {r.macs_pruned}")
    print("  block  recon_error    bound_slack_min")
    for l, (err, slack) in enumerate(zip(r.recon_error, r.bound_slack_min)):
        print(f"  {l:>5}  {err:<14.6g} {slack:.6g}")


def _write_report_text(path, r: EvalReport) -> None:
    lines = [
        f"method {r.method}", f"ratio {_fmt(r.ratio)}",
        f"ppl_dense {_fmt(r.ppl_dense)}", f"ppl_pruned {_fmt(r.ppl_pruned)}",
        f"kl_mean {_fmt(r.kl_mean)}",
        f"params_dense {r.params_dense}", f"params_pruned {r.params_pruned}",
        f"macs_dense {r.macs_dense}", f"macs_pruned {r.macs_pruned}",
    ]
    for l, err in enumerate(r.recon_error):
        lines.append(f"block{l}.recon_error {_fmt(err)}")
    for l, slack in enumerate(r.bound_slack_min):
        lines.append(f"block{l}.bound_slack_min {_fmt(slack)}")
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def _write_report_rows(writer, r: EvalReport) -> None:
    for l, err in enumerate(r.recon_error):
        writer.writerow([r.method, _fmt(r.ratio), l, _fmt(err), _fmt(r.ppl_pruned),
                         _fmt(r.kl_mean), r.params_pruned, r.macs_pruned])


def cmd_bound_check(args) -> int:
    ratios = tuple(float(x) for x in args.ratios.split(",") if x)
    res = bound_check_trials(args.activation, args.trials, args.seed, t=args.tokens,
                             d=args.d, ffn_hidden=args.ffn_hidden, ratios=ratios,
                             threads=args.threads)
    status = "OK" if res.ok else "VIOLATED"
    print(f"bound-check activation={res.activation} trials={res.trials}: "
          f"max relative violation {res.max_violation_rel:.3e} "
          f"(tolerance {res.tolerance:.0e}), min slack {res.min_slack:.6g} [{status}]")
    return 0 if res.ok else 1


def cmd_oracle(args) -> int:
    res = oracle_trials(ffn_size=args.ffn_size, keep=args.keep, trials=args.trials,
                        seed=args.seed, d=args.d, tokens=args.tokens, threads=args.threads)
    status = "OK" if res.ok else "BELOW-THRESHOLD"
    print(f"oracle ffn={args.ffn_size} keep={args.keep} trials={res.trials} "
          f"({res.n_masks} masks each): within best 20% in "
          f"{res.frac_within_best_20pct:.0%}, better than median in "
          f"{res.frac_better_than_median:.0%} [{status}]")
    return 0 if res.ok else 1


def cmd_compare(args) -> int:
    model = load_model(args.model)
    corpus = load_corpus(args.corpus)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r} in --methods")
    ratios = [float(x) for x in args.ratios.split(",") if x]
    for r in ratios:
        SparsityTarget(r)

    needs_stats = any(m in ("bip", "wanda") for m in methods)
    stats = _calibrate(model, corpus, args.samples, args.seq_len, args.seed) if needs_stats else None
    batch = _eval_batch(corpus, args.eval_sequences, args.seq_len, args.seed)
    ppl_dense = perplexity(model, corpus, args.seq_len)

    rows = []
    for method in methods:
        scores = compute_scores(model, method,
                                stats=stats if method in ("bip", "wanda") else None,
                                seed=args.seed)
        for ratio in ratios:
            mask = select_masks(scores, SparsityTarget(ratio))
            pruned = apply_prune(model, mask)
            report = evaluate_pruning(model, pruned, mask, corpus, batch,
                                      args.seq_len, method=method, ratio=ratio)
            rows.append(report)
            print(f"compare {method} r={ratio}: ppl {report.ppl_pruned:.4f} "
                  f"(dense {ppl_dense:.4f}), kl {report.kl_mean:.6f}, "
                  f"final recon {report.recon_error[-1]:.6g}")

    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for report in rows:
            _write_report_rows(writer, report)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
