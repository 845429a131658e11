"""Experiment orchestration: paired evaluation days, alpha sweeps, stress variants."""

from __future__ import annotations

import copy
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .audit import MOCK, OPEN, AuditArtifact, Transcript, prove, record_compliant, verify
from .config import ScenarioConfig
from .env import DailyResult, ExecutionEnv
from .ppo import Policy, load_checkpoint, save_checkpoint
from .shield import ConstraintSet, PPM
from .stats import AggregateReport, ci95, mean, paired_t, aggregate_report
from .strategies import (
    GREEDY,
    RANDOM,
    RL_SAFE,
    RL_UNCONSTRAINED,
    TWAP,
    VWAP,
    Greedy,
    PolicyStrategy,
    RandomStrategy,
    Strategy,
    run_episode,
    twap,
    vwap,
    vwap_profile,
)

STRATEGIES = (TWAP, VWAP, GREEDY, RANDOM, RL_SAFE, RL_UNCONSTRAINED)
RL_STRATEGIES = (RL_SAFE, RL_UNCONSTRAINED)


class MissingCheckpoint(RuntimeError):
    pass


class UnknownStrategy(ValueError):
    pass


def eval_seeds(base: int, n_days: int) -> list[int]:
    return [base + i for i in range(n_days)]


def make_strategy(name: str, cfg: ScenarioConfig, policy: Optional[Policy] = None) -> Strategy:
    ep = cfg.episode
    if name == TWAP:
        return twap()
    if name == VWAP:
        return vwap(vwap_profile(ep.horizon, cfg.market.noise.profile), ep.horizon)
    if name == GREEDY:
        return Greedy()
    if name == RANDOM:
        return RandomStrategy(cfg.experiment.seed)
    if name in RL_STRATEGIES:
        if policy is None:
            raise MissingCheckpoint(f"{name} needs a trained checkpoint")
        strat = PolicyStrategy(policy, constrained=(name == RL_SAFE))
        if name == RL_SAFE:
            strat.shield_mode = cfg.shield.mode
        return strat
    raise UnknownStrategy(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")


def make_env(cfg: ScenarioConfig, alpha: Optional[float] = None, record_transcript: bool = True) -> ExecutionEnv:
    return ExecutionEnv(cfg.market, copy.deepcopy(cfg.episode), cfg.shield.constraints(alpha),
                        cfg.shield.mode, record_transcript=record_transcript)


@dataclass
class DayOutput:
    result: DailyResult
    background_digest: str
    transcript: Optional[str] = None
    artifact: Optional[bytes] = None
    bit: Optional[int] = None


def run_day(cfg: ScenarioConfig, strategy: str, seed: int, policy: Optional[Policy] = None,
            alpha: Optional[float] = None, shield_off_at: Optional[int] = None) -> DayOutput:
    strat = make_strategy(strategy, cfg, policy)
    env = make_env(cfg, alpha, record_transcript=strategy in RL_STRATEGIES)
    env.shield_off_at = shield_off_at
    res = run_episode(env, strat, seed)
    # digests are compared across strategies, so every day must cover the whole session
    env.finish_day()
    out = DayOutput(res, env.market.background_digest())
    if strategy in RL_STRATEGIES:
        art = prove(env.transcript, env.constraints, OPEN)
        out.transcript = env.transcript.to_text()
        out.artifact = art.to_bytes()
        out.bit = art.bit
    return out


def _work(args) -> DayOutput:
    cfg, strategy, seed, ckpt, alpha, off = args
    policy = load_checkpoint(ckpt) if ckpt is not None else None
    return run_day(cfg, strategy, seed, policy, alpha, off)


def run_days(cfg: ScenarioConfig, jobs: Sequence[tuple[str, int]], policy: Optional[Policy] = None,
             alpha: Optional[float] = None, parallel: int = 1, shield_off_at: Optional[int] = None
             ) -> list[DayOutput]:
    """Run ``(strategy, seed)`` jobs; output order follows ``jobs`` regardless of ``parallel``."""
    for name, _ in jobs:
        make_strategy(name, cfg, policy)  # fail fast on unknown names / missing checkpoints
    if parallel <= 1:
        return [run_day(cfg, s, seed, policy, alpha, shield_off_at) for s, seed in jobs]
    ckpt = save_checkpoint(policy, None) if policy is not None else None
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(_work, [(cfg, s, seed, ckpt, alpha, shield_off_at) for s, seed in jobs]))


@dataclass
class EvalOutput:
    results: list[DailyResult]
    report: AggregateReport
    days: list[DayOutput]
    digests_paired: bool

    def daily_csv(self) -> str:
        return "\n".join([DailyResult.CSV_HEADER] + [r.csv_row() for r in self.results]) + "\n"


def run_eval(cfg: ScenarioConfig, strategies: Sequence[str], n_days: int, policy: Optional[Policy] = None,
             seed: Optional[int] = None, parallel: int = 1, out_dir: Optional[str] = None,
             alpha: Optional[float] = None) -> EvalOutput:
    base = cfg.experiment.seed if seed is None else seed
    seeds = eval_seeds(base, n_days)
    jobs = [(s, d) for d in seeds for s in strategies]
    days = run_days(cfg, jobs, policy, alpha, parallel)
    results = [d.result for d in days]
    by_seed: dict[int, set[str]] = {}
    for d in days:
        by_seed.setdefault(d.result.seed, set()).add(d.background_digest)
    paired = all(len(v) == 1 for v in by_seed.values())
    report = aggregate_report(results, order=list(strategies)) if n_days >= 2 else None
    out = EvalOutput(results, report, days, paired)
    if out_dir is not None:
        write_eval(out, out_dir)
    return out


def write_eval(out: EvalOutput, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "daily.csv"), "w", newline="\n") as fh:
        fh.write(out.daily_csv())
    if out.report is not None:
        with open(os.path.join(out_dir, "aggregate.csv"), "w", newline="\n") as fh:
            fh.write(out.report.to_csv())
        with open(os.path.join(out_dir, "pairs.csv"), "w", newline="\n") as fh:
            fh.write(out.report.pairs_csv())
        with open(os.path.join(out_dir, "report.txt"), "w", newline="\n") as fh:
            fh.write(out.report.to_text())
    tdir = os.path.join(out_dir, "transcripts")
    adir = os.path.join(out_dir, "artifacts")
    for d in out.days:
        if d.transcript is None:
            continue
        os.makedirs(tdir, exist_ok=True)
        os.makedirs(adir, exist_ok=True)
        stem = f"{d.result.strategy}_{d.result.seed}"
        with open(os.path.join(tdir, stem + ".txt"), "w", newline="\n") as fh:
            fh.write(d.transcript)
        with open(os.path.join(adir, stem + ".zkca"), "wb") as fh:
            fh.write(d.artifact)
        tr = Transcript.from_text(d.transcript)
        with open(os.path.join(adir, stem + ".mock.zkca"), "wb") as fh:
            fh.write(prove(tr, None, MOCK).to_bytes())


# -- alpha sweep ------------------------------------------------------------------------

def transcript_violation_steps(transcript_text: str, alpha: float, beta: Optional[float] = None) -> list[int]:
    """Steps whose executed orders break the caps at ``alpha`` (and ``beta``)."""
    tr = Transcript.from_text(transcript_text)
    a_ppm = round(alpha * PPM)
    b_ppm = tr.header.beta_ppm if beta is None else round(beta * PPM)
    return sorted({r.step for r in tr.records if not record_compliant(r, a_ppm, b_ppm)})


@dataclass
class SweepRow:
    alpha: float
    mean_is: float
    ci95: float
    violation_rate_unconstrained: float
    is_bps: list[float] = field(default_factory=list)

    def csv_row(self) -> str:
        return f"{self.alpha:g},{self.mean_is:.6f},{self.ci95:.6f},{self.violation_rate_unconstrained:.6f}"


SWEEP_CSV_HEADER = "alpha,mean_is_bps,ci95,violation_rate_unconstrained"


@dataclass
class SweepOutput:
    rows: list[SweepRow]
    seeds: list[int]

    def csv(self) -> str:
        return "\n".join([SWEEP_CSV_HEADER] + [r.csv_row() for r in self.rows]) + "\n"

    def row(self, alpha: float) -> SweepRow:
        for r in self.rows:
            if abs(r.alpha - alpha) < 1e-12:
                return r
        raise KeyError(alpha)

    def compare(self, a: float, b: float):
        return paired_t(self.row(a).is_bps, self.row(b).is_bps)


def run_sweep(cfg: ScenarioConfig, alphas: Sequence[float], n_days: int, policy: Policy,
              seed: Optional[int] = None, parallel: int = 1,
              unconstrained_policy: Optional[Policy] = None) -> SweepOutput:
    """Shielded policy re-evaluated at each alpha over paired seeds.

    The unconstrained policy's executed actions do not depend on alpha (the
    shield only checks), so it runs once per seed and its transcript is
    re-checked against every cap. A day counts as violating if any step does.
    """
    if not alphas:
        raise ValueError("need at least one alpha")
    base = cfg.experiment.seed if seed is None else seed
    seeds = eval_seeds(base, n_days)
    unc = run_days(cfg, [(RL_UNCONSTRAINED, s) for s in seeds], unconstrained_policy or policy, None, parallel)
    rows = []
    for a in alphas:
        days = run_days(cfg, [(RL_SAFE, s) for s in seeds], policy, a, parallel)
        isv = [d.result.is_bps for d in days]
        m, half = ci95(isv) if len(isv) >= 2 else (isv[0], 0.0)
        rate = mean([1.0 if transcript_violation_steps(d.transcript, a) else 0.0 for d in unc])
        rows.append(SweepRow(a, m, half, rate, isv))
    return SweepOutput(rows, seeds)


# -- stress variants -----------------------------------------------------------------------

STRESS_VARIANTS = ("latency_500ms", "liquidity_half", "shield_toggle", "alpha_sweep")


def stressed_config(cfg: ScenarioConfig, variant: str) -> ScenarioConfig:
    out = copy.deepcopy(cfg)
    ex = cfg.experiment
    if variant == "latency_500ms":
        out.market.latency_ms = ex.stress_latency_ms
        out.market.exec_latency_ms = ex.stress_latency_ms
    elif variant == "liquidity_half":
        f = ex.stress_liquidity_factor
        # fewer random traders, each keeping its own order rate
        out.market.population.n_noise = int(round(cfg.market.population.n_noise * f))
        out.market.noise.daily_volume = cfg.market.noise.daily_volume * f
    elif variant in ("shield_toggle", "alpha_sweep"):
        pass
    else:
        raise ValueError(f"unknown stress variant {variant!r}; choose from {', '.join(STRESS_VARIANTS)}")
    return out


@dataclass
class StressRow:
    strategy: str
    base_is: float
    stress_is: float
    delta_is: float
    base_violations: float
    stress_violations: float

    def csv_row(self) -> str:
        return (f"{self.strategy},{self.base_is:.6f},{self.stress_is:.6f},{self.delta_is:.6f},"
                f"{self.base_violations:.4f},{self.stress_violations:.4f}")


STRESS_CSV_HEADER = "strategy,base_is_bps,stress_is_bps,delta_is_bps,base_violations,stress_violations"


@dataclass
class StressOutput:
    variant: str
    rows: list[StressRow]
    base: EvalOutput
    stressed: EvalOutput
    violations_before_toggle: int = 0
    violations_after_toggle: int = 0

    def csv(self) -> str:
        return "\n".join([STRESS_CSV_HEADER] + [r.csv_row() for r in self.rows]) + "\n"


def run_stress(cfg: ScenarioConfig, variant: str, strategies: Sequence[str], n_days: int,
               policy: Optional[Policy] = None, seed: Optional[int] = None, parallel: int = 1,
               base: Optional[EvalOutput] = None) -> StressOutput:
    base_seed = cfg.experiment.seed if seed is None else seed
    if variant == "alpha_sweep":
        raise ValueError("use run_sweep for the alpha sweep")
    if base is None:
        base = run_eval(cfg, strategies, n_days, policy, base_seed, parallel)
    scfg = stressed_config(cfg, variant)
    before = after = 0
    if variant == "shield_toggle":
        t_off = cfg.experiment.stress_toggle_step
        seeds = eval_seeds(base_seed, n_days)
        jobs = [(s, d) for d in seeds for s in strategies]
        days = []
        for name, d in jobs:
            off = t_off if name == RL_SAFE else None
            days += run_days(scfg, [(name, d)], policy, None, 1, shield_off_at=off)
        for d in days:
            if d.result.strategy == RL_SAFE:
                steps = transcript_violation_steps(d.transcript, cfg.shield.alpha, cfg.shield.beta)
                before += sum(1 for s in steps if s < t_off)
                after += sum(1 for s in steps if s >= t_off)
        results = [d.result for d in days]
        stressed = EvalOutput(results, aggregate_report(results, order=list(strategies)), days, True)
    else:
        stressed = run_eval(scfg, strategies, n_days, policy, base_seed, parallel)
    rows = []
    for name in strategies:
        b = [r for r in base.results if r.strategy == name]
        s = [r for r in stressed.results if r.strategy == name]
        bm, sm = mean([r.is_bps for r in b]), mean([r.is_bps for r in s])
        rows.append(StressRow(name, bm, sm, sm - bm, mean([float(r.violations) for r in b]),
                              mean([float(r.violations) for r in s])))
    return StressOutput(variant, rows, base, stressed, before, after)


def audit_verify_bytes(data: bytes):
    return verify(AuditArtifact.from_bytes(data))
