"""Command line entry point: ``edgeflow {train,sample,eval,enumerate-check,grad-check}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 an acceptance threshold was not met.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import load_config
from .errors import (
    CheckpointFormatError,
    ConfigError,
    EdgeflowError,
    EnumerationTooLargeError,
    MaskViolationError,
    NumericError,
)
from .experiments import diversity_report
from .metrics import (
    db_residuals,
    empirical_terminal_distribution,
    target_distribution,
    tv_distance,
    write_metrics,
)
from .trainer import build_state, composite_grad_check, sample, sample_edge_sets, train, write_samples_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4
GRAD_CHECK_TOL = 1e-4


def _parse_edges(text: str) -> list[int]:
    if not text:
        return []
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--extra-edges expects comma-separated integers, got {text!r}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_state(args):
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    if args.config:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(train={"seed": args.seed})
        return build_state(cfg)
    raise ConfigError("pass --checkpoint or --config")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(train={"seed": args.seed})
    out = _out_dir(args)
    state = build_state(cfg)
    train(state, out_dir=out)
    seed = cfg.train.seed
    tail = state.history[-cfg.train.ma_window :] or [(0.0, 0.0, 0.0)]
    rows = [
        {"metric": name, "instance": "train", "seed": seed, "value": repr(float(np.mean([h[i] for h in tail])))}
        for i, name in enumerate(("l_gfn", "l_ldm", "l_total"))
    ]
    write_metrics(rows, out / "metrics.csv", out / "metrics.json")
    print(f"trained {state.step} steps -> {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    state = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    result = sample(state, rng, num_trajectories=args.samples, extra_edges=_parse_edges(args.extra_edges))
    out = _out_dir(args)
    write_samples_csv(result, out / "samples.csv")
    print(f"wrote {len(result.sequences)} samples -> {out / 'samples.csv'}")
    return EXIT_OK


def _proportionality(state, args, seed):
    cfg = state.config
    g = cfg.graph_config
    if state.oracle is None or not cfg.set_mode:
        return [{"metric": "tv_distance", "instance": "proportionality", "seed": seed, "value": "skipped"}], True
    try:
        target = target_distribution(state.set_log_rewards, g.num_edges, g.num_steps, cfg.eval.enumeration_cap)
    except EnumerationTooLargeError:
        return [{"metric": "tv_distance", "instance": "proportionality", "seed": seed, "value": "skipped"}], True
    rollouts = args.samples or cfg.eval.samples
    emp = empirical_terminal_distribution(sample_edge_sets(state, rollouts, np.random.default_rng(seed)))
    tv = tv_distance(target, emp)
    ok = tv < cfg.eval.tv_threshold
    return [
        {"metric": "tv_distance", "instance": "proportionality", "seed": seed, "value": repr(tv)},
        {"metric": "tv_threshold", "instance": "proportionality", "seed": seed, "value": repr(cfg.eval.tv_threshold)},
    ], ok


def _residuals(state, args, seed):
    cfg = state.config
    g = cfg.graph_config
    if state.oracle is None:
        return [{"metric": "db_mean_square", "instance": "residuals", "seed": seed, "value": "skipped"}], True
    try:
        rep = db_residuals(state.flow_model(), state.set_log_rewards, g.num_edges, g.num_steps, cfg.eval.enumeration_cap)
    except EnumerationTooLargeError:
        return [{"metric": "db_mean_square", "instance": "residuals", "seed": seed, "value": "skipped"}], True
    ok = rep.mean_square < cfg.eval.residual_threshold
    return [
        {"metric": "db_max_abs", "instance": "residuals", "seed": seed, "value": repr(rep.max_abs)},
        {"metric": "db_mean_square", "instance": "residuals", "seed": seed, "value": repr(rep.mean_square)},
    ], ok


def _diversity(state, args, seed):
    report = diversity_report(state, state.config.eval.diversity_calls, np.random.default_rng(seed))
    return [
        {"metric": "vendi_mean", "instance": "diversity", "seed": seed, "value": repr(report.mean_vendi)},
        {"metric": "mode_coverage_mean", "instance": "diversity", "seed": seed, "value": repr(report.mean_coverage)},
    ], report.mean_vendi >= 1.0


SUITES = {"proportionality": _proportionality, "residuals": _residuals, "diversity": _diversity}


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    suites = list(SUITES) if args.suite == "all" else [args.suite]
    rows, passed = [], True
    for name in suites:
        r, ok = SUITES[name](state, args, seed)
        rows.extend(r)
        passed &= ok
        print(f"{name}: {'PASS' if ok else 'FAIL'}")
    out = _out_dir(args)
    write_metrics(rows, out / "metrics.csv", out / "metrics.json")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def cmd_enumerate_check(args) -> int:
    state = _load_state(args)
    cfg = state.config
    g = cfg.graph_config
    seed = args.seed if args.seed is not None else cfg.train.seed
    count = math.comb(g.num_edges, g.num_steps)
    rows = [{"metric": "terminal_sets", "instance": "enumerate", "seed": seed, "value": str(count)}]
    passed = True
    if count > cfg.eval.enumeration_cap:
        rows.append({"metric": "target_sum", "instance": "enumerate", "seed": seed, "value": "skipped"})
        print(f"{count} terminal sets exceed the enumeration cap; skipped")
    elif state.oracle is not None:
        target = target_distribution(state.set_log_rewards, g.num_edges, g.num_steps, cfg.eval.enumeration_cap)
        total = float(target.probs.sum())
        rows.append({"metric": "target_sum", "instance": "enumerate", "seed": seed, "value": repr(total)})
        lr = state.set_log_rewards(list(target.support))
        rows.append({"metric": "reward_ratio", "instance": "enumerate", "seed": seed, "value": repr(float(np.exp(lr.max() - lr.min())))})
        for support, p in zip(target.support, target.probs):
            print(f"{' '.join(map(str, support)):>12}  {p:.6f}")
        passed = abs(total - 1.0) <= 1e-12
    out = _out_dir(args)
    write_metrics(rows, out / "metrics.csv", out / "metrics.json")
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def cmd_grad_check(args) -> int:
    state = _load_state(args)
    err = composite_grad_check(state, seed=args.seed or 0)
    ok = err < GRAD_CHECK_TOL
    print(f"max relative error {err:.3e} ({'PASS' if ok else 'FAIL'} at {GRAD_CHECK_TOL:g})")
    out = _out_dir(args)
    write_metrics(
        [{"metric": "grad_check_max_rel_err", "instance": "composite", "seed": args.seed or 0, "value": repr(err)}],
        out / "metrics.csv",
        out / "metrics.json",
    )
    return EXIT_OK if ok else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgeflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False, checkpoint=False):
        if config:
            p.add_argument("--config", required=not checkpoint)
        if checkpoint:
            p.add_argument("--checkpoint", required=not config)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=".")
        return p

    p = common(sub.add_parser("train", help="train from a config file"), config=True)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("sample", help="draw trajectories and samples"), checkpoint=True)
    p.add_argument("--samples", type=int, default=None, help="number of trajectories (overrides M)")
    p.add_argument("--extra-edges", default="", help="comma-separated edges appended before decoding")
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("eval", help="run an evaluation suite"), checkpoint=True)
    p.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    p.add_argument("--samples", type=int, default=None, help="pure-policy rollouts for proportionality")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("enumerate-check", help="enumerate terminal sets and the target distribution"),
               config=True, checkpoint=True)
    p.set_defaults(func=cmd_enumerate_check)

    p = common(sub.add_parser("grad-check", help="finite-difference check of the composite loss"),
               config=True, checkpoint=True)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointFormatError, MaskViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EdgeflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
