"""Command-line entry point: ``safexec <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 acceptance-check
failure, 4 audit rejection.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from typing import Optional, Sequence

from .audit import AuditArtifact, MalformedArtifact, Transcript, verify
from .config import ConfigError, ScenarioConfig, dump_config, load_config
from .env import DailyResult
from .experiments import (
    RL_SAFE,
    RL_STRATEGIES,
    STRATEGIES,
    STRESS_VARIANTS,
    MissingCheckpoint,
    UnknownStrategy,
    run_eval,
    run_stress,
    run_sweep,
)
from .market import Market
from .ppo import CheckpointError, curve_csv, load_checkpoint, save_checkpoint, train
from .stats import StatsError, aggregate_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ACCEPTANCE = 3
EXIT_AUDIT = 4


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="scenario file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="master seed (overrides [experiment] seed)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides [experiment] out_dir)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safexec", description="Shielded execution experiments on a simulated market.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run background-only market days and summarise them")
    _common(p)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--fills", action="store_true", help="write per-venue fill logs")

    p = sub.add_parser("train", help="train the shielded PPO policy")
    _common(p)
    p.add_argument("--epochs", type=int, help="override [ppo] n_epochs")

    for name, helptext in (("evaluate", "paired evaluation of strategies"),
                           ("sweep", "re-evaluate the shielded policy over alpha values"),
                           ("stress", "run a stress variant against the baseline scenario")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--days", type=int)
        p.add_argument("--checkpoint", metavar="PATH")
        p.add_argument("--parallel", type=int, help="worker processes")
        if name != "sweep":
            p.add_argument("--strategy", help=f"comma-separated subset of {','.join(STRATEGIES)}")
        if name == "evaluate":
            p.add_argument("--alpha", type=float, help="override the participation cap")
            p.add_argument("--check", action="store_true",
                           help="exit 3 unless shielded runs show zero violations and verified artifacts")
        if name == "sweep":
            p.add_argument("--alpha", type=float, action="append", help="alpha value (repeatable)")
        if name == "stress":
            p.add_argument("--variant", required=True, choices=[v for v in STRESS_VARIANTS if v != "alpha_sweep"])

    p = sub.add_parser("audit-verify", help="verify an audit artifact")
    p.add_argument("artifact", metavar="PATH")
    p.add_argument("--mode", choices=("auto", "open", "mock"), default="auto",
                   help="expected artifact mode (auto accepts either)")
    p.add_argument("--public-inputs", metavar="TRANSCRIPT",
                   help="transcript whose public inputs the artifact must commit to")

    p = sub.add_parser("report", help="aggregate a per-day CSV into the summary table")
    p.add_argument("daily_csv", metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    return ap


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.experiment.seed = args.seed
    if getattr(args, "out", None):
        cfg.experiment.out_dir = args.out
    return cfg


def _strategies(args, cfg: ScenarioConfig) -> list[str]:
    raw = getattr(args, "strategy", None)
    names = [s.strip().upper() for s in raw.split(",")] if raw else list(cfg.experiment.strategies)
    for n in names:
        if n not in STRATEGIES:
            raise UsageError(f"unknown strategy {n!r}; choose from {', '.join(STRATEGIES)}")
    return names


def _policy(args, cfg: ScenarioConfig, names: Sequence[str]):
    path = getattr(args, "checkpoint", None) or cfg.experiment.checkpoint
    if not any(n in RL_STRATEGIES for n in names):
        return None
    if not path:
        raise MissingCheckpoint("RL strategies need --checkpoint (or [experiment] checkpoint)")
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise MissingCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = cfg.experiment.out_dir
    lines = ["seed,volume,venue0_mid_open,venue0_mid_close,events,background_digest"]
    for i in range(args.days):
        seed = cfg.experiment.seed + i
        m = Market(cfg.market, seed, keep_fills=args.fills)
        events = m.run_day()
        lines.append(f"{seed},{m.total_volume()},{m.mid(0, m.open_ns)},{m.mid(0, m.end_ns)},{events},"
                     f"{m.background_digest()}")
        if args.fills:
            for ex in m.exchanges:
                _write(os.path.join(out, f"fills_{seed}_venue{ex.venue_id}.csv"), ex.fill_log_csv())
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    _write(os.path.join(out, "simulate.csv"), text)
    return EXIT_OK


def cmd_train(args) -> int:
    from .experiments import make_env

    cfg = _load(args)
    if args.epochs is not None:
        cfg.ppo.n_epochs = args.epochs
    out = cfg.experiment.out_dir
    seed = cfg.experiment.train_seed if args.seed is None else args.seed
    t0 = time.time()

    def log(p):
        print(f"epoch {p.epoch}: mean_reward={p.mean_reward:.2f} mean_is_bps={p.mean_is_bps:.3f} "
              f"raw_violations={p.violations:.1f} ({time.time() - t0:.0f}s)", flush=True)

    res = train(lambda: make_env(cfg), cfg.ppo, seed, log=log)
    os.makedirs(out, exist_ok=True)
    save_checkpoint(res.policy, os.path.join(out, "policy.ckpt"))
    save_checkpoint(res.best, os.path.join(out, "policy_best.ckpt"))
    _write(os.path.join(out, "learning_curve.csv"), curve_csv(res.curve))
    _write(os.path.join(out, "scenario.ini"), dump_config(cfg, include_run_keys=False))
    print(f"wrote {os.path.join(out, 'policy.ckpt')} (best epoch {res.best_epoch})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    names = _strategies(args, cfg)
    policy = _policy(args, cfg, names)
    days = args.days or cfg.experiment.days
    res = run_eval(cfg, names, days, policy, parallel=args.parallel or cfg.experiment.parallel,
                   out_dir=cfg.experiment.out_dir, alpha=args.alpha)
    _write(os.path.join(cfg.experiment.out_dir, "scenario.ini"), dump_config(cfg, include_run_keys=False))
    if res.report is not None:
        sys.stdout.write(res.report.to_text())
    else:
        sys.stdout.write(res.daily_csv())
    if args.check:
        bad = [d for d in res.days if d.result.strategy == RL_SAFE and (d.result.violations or d.bit != 1)]
        if bad or not res.digests_paired:
            print(f"check failed: {len(bad)} shielded day(s) with violations or a zero circuit bit"
                  + ("" if res.digests_paired else "; background streams differ across strategies"))
            return EXIT_ACCEPTANCE
        print("check passed")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    policy = _policy(args, cfg, [RL_SAFE])
    alphas = args.alpha or list(cfg.experiment.sweep_alphas)
    res = run_sweep(cfg, alphas, args.days or cfg.experiment.days, policy,
                    parallel=args.parallel or cfg.experiment.parallel)
    text = res.csv()
    sys.stdout.write(text)
    _write(os.path.join(cfg.experiment.out_dir, "alpha_sweep.csv"), text)
    return EXIT_OK


def cmd_stress(args) -> int:
    cfg = _load(args)
    names = _strategies(args, cfg)
    policy = _policy(args, cfg, names)
    res = run_stress(cfg, args.variant, names, args.days or cfg.experiment.days, policy,
                     parallel=args.parallel or cfg.experiment.parallel)
    text = res.csv()
    sys.stdout.write(text)
    if args.variant == "shield_toggle":
        print(f"shielded violations before toggle: {res.violations_before_toggle}, "
              f"after: {res.violations_after_toggle}")
    _write(os.path.join(cfg.experiment.out_dir, f"stress_{args.variant}.csv"), text)
    return EXIT_OK


def cmd_audit_verify(args) -> int:
    try:
        with open(args.artifact, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read artifact: {exc}") from exc
    try:
        art = AuditArtifact.from_bytes(data)
    except MalformedArtifact as exc:
        print(f"reject (malformed artifact: {exc})")
        return EXIT_AUDIT
    if args.mode != "auto" and art.mode.lower() != args.mode:
        print(f"reject (expected a {args.mode.upper()} artifact, got {art.mode})")
        return EXIT_AUDIT
    public = None
    if args.public_inputs:
        with open(args.public_inputs, encoding="utf-8") as fh:
            public = Transcript.from_text(fh.read()).public_inputs()
    verdict = verify(art, public)
    if verdict.accept:
        print(verdict.reason)
        return EXIT_OK
    print(f"reject ({verdict.reason})")
    return EXIT_AUDIT


def cmd_report(args) -> int:
    with open(args.daily_csv, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != DailyResult.CSV_HEADER:
        raise UsageError("not a per-day results CSV")
    results = [DailyResult.from_csv_row(ln) for ln in lines[1:]]
    order = list(dict.fromkeys(r.strategy for r in results))
    rep = aggregate_report(results, order)
    sys.stdout.write(rep.to_text())
    if args.out:
        _write(os.path.join(args.out, "aggregate.csv"), rep.to_csv())
        _write(os.path.join(args.out, "pairs.csv"), rep.pairs_csv())
        _write(os.path.join(args.out, "report.txt"), rep.to_text())
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "stress": cmd_stress,
    "audit-verify": cmd_audit_verify,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, UnknownStrategy, MissingCheckpoint, CheckpointError, StatsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
