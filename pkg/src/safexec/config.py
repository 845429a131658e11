"""Scenario configuration: flat typed ``key = value`` entries grouped in sections.

Every key is declared in :data:`SCHEMA`; unknown sections or keys are errors.
See ``docs/scenario.md`` for the meaning of each entry.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .agents import (
    FundamentalOU,
    IntradayProfile,
    MarketMakerParams,
    MomentumParams,
    NoiseParams,
    PopulationConfig,
    ValueParams,
)
from .env import EpisodeConfig
from .market import MarketConfig
from .ppo import PPOConfig
from .shield import ConstraintSet


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(x for x in s.replace(",", " ").split())


def _opt_int(s: str) -> Optional[int]:
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


def _opt_floats(s: str) -> Optional[tuple[float, ...]]:
    return None if s.strip().lower() in ("", "none", "equal") else _floats(s)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return parse


@dataclass
class ShieldConfig:
    alpha: float = 0.10
    beta: float = 0.005
    self_trade_guard: bool = True
    mode: str = "project"

    def constraints(self, alpha: Optional[float] = None) -> ConstraintSet:
        return ConstraintSet(self.alpha if alpha is None else alpha, self.beta, self.self_trade_guard)


@dataclass
class ExperimentConfig:
    seed: int = 0
    days: int = 100
    strategies: tuple[str, ...] = ("TWAP", "VWAP", "GREEDY", "RL_SAFE", "RL_UNCONSTRAINED")
    out_dir: str = "out"
    checkpoint: str = ""
    parallel: int = 1
    train_seed: int = 0
    sweep_alphas: tuple[float, ...] = (0.05, 0.10, 0.20, 0.30, 0.50)
    stress_latency_ms: float = 500.0
    stress_liquidity_factor: float = 0.5
    stress_toggle_step: int = 195


@dataclass
class ScenarioConfig:
    market: MarketConfig = field(default_factory=MarketConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    shield: ShieldConfig = field(default_factory=ShieldConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def sync(self) -> "ScenarioConfig":
        """Propagate shared values (venue count, interval) from market to episode."""
        m, e = self.market, self.episode
        e.n_venues = m.n_venues
        e.interval_s = m.interval_s
        steps = m.session_minutes * 60 / m.interval_s
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("session length must be a whole number of decision intervals")
        e.horizon = int(round(steps))
        if e.liquidity_weights is not None and len(e.liquidity_weights) != m.n_venues:
            raise ConfigError("liquidity_weights needs one weight per venue")
        if e.q0 <= 0:
            raise ConfigError("q0 must be positive")
        return self


# section -> key -> (parser, path under ScenarioConfig)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "market": {
        "n_venues": (int, "market.n_venues"),
        "session_minutes": (int, "market.session_minutes"),
        "interval_s": (float, "market.interval_s"),
        "warmup_s": (float, "market.warmup_s"),
        "latency_ms": (float, "market.latency_ms"),
        "exec_latency_ms": (float, "market.exec_latency_ms"),
    },
    "fundamental": {
        "kappa": (float, "market.ou.kappa"),
        "mu": (float, "market.ou.mu"),
        "sigma": (float, "market.ou.sigma"),
        "x0": (float, "market.ou.x0"),
    },
    "population": {
        "n_market_makers": (int, "market.population.n_market_makers"),
        "n_noise": (int, "market.population.n_noise"),
        "n_momentum": (int, "market.population.n_momentum"),
        "n_value": (int, "market.population.n_value"),
    },
    "market_maker": {
        "half_spread": (int, "market.mm.half_spread"),
        "skew": (float, "market.mm.skew"),
        "size": (int, "market.mm.size"),
        "period_s": (float, "market.mm.period_s"),
        "replenish_frac": (float, "market.mm.replenish_frac"),
    },
    "noise": {
        "daily_volume": (float, "market.noise.daily_volume"),
        "p_market": (float, "market.noise.p_market"),
        "limit_levels": (int, "market.noise.limit_levels"),
        "max_size": (int, "market.noise.max_size"),
        "profile_amplitude": (float, "market.noise.profile.amplitude"),
    },
    "momentum": {
        "period_s": (float, "market.momentum.period_s"),
        "short_window_s": (float, "market.momentum.short_window_s"),
        "long_window_s": (float, "market.momentum.long_window_s"),
        "threshold": (float, "market.momentum.threshold"),
        "max_size": (int, "market.momentum.max_size"),
    },
    "value": {
        "mean_period_s": (float, "market.value.mean_period_s"),
        "obs_noise": (float, "market.value.obs_noise"),
        "band": (float, "market.value.band"),
        "max_size": (int, "market.value.max_size"),
    },
    "episode": {
        "q0": (int, "episode.q0"),
        "liquidity_weights": (_opt_floats, "episode.liquidity_weights"),
        "tick_value": (float, "episode.tick_value"),
        "time_penalty": (float, "episode.time_penalty"),
        "terminal_penalty": (float, "episode.terminal_penalty"),
        "violation_coef": (float, "episode.violation_coef"),
        "self_trade_penalty": (float, "episode.self_trade_penalty"),
        "vhat_prior": (_opt_int, "episode.vhat_prior"),
        "depth_scale": (float, "episode.depth_scale"),
        "volume_scale": (float, "episode.volume_scale"),
    },
    "shield": {
        "alpha": (float, "shield.alpha"),
        "beta": (float, "shield.beta"),
        "self_trade_guard": (_bool, "shield.self_trade_guard"),
        "mode": (_choice("project", "check", "off"), "shield.mode"),
    },
    "ppo": {
        "gamma": (float, "ppo.gamma"),
        "clip": (float, "ppo.clip"),
        "vf_coef": (float, "ppo.vf_coef"),
        "lr": (float, "ppo.lr"),
        "gae_lambda": (float, "ppo.gae_lambda"),
        "entropy_coef": (float, "ppo.entropy_coef"),
        "epochs_per_update": (int, "ppo.epochs_per_update"),
        "minibatch_size": (int, "ppo.minibatch_size"),
        "episodes_per_update": (int, "ppo.episodes_per_update"),
        "n_epochs": (int, "ppo.n_epochs"),
        "hidden": (_ints, "ppo.hidden"),
        "init_log_std": (float, "ppo.init_log_std"),
        "reward_scale": (float, "ppo.reward_scale"),
        "max_grad_norm": (float, "ppo.max_grad_norm"),
    },
    "experiment": {
        "seed": (int, "experiment.seed"),
        "days": (int, "experiment.days"),
        "strategies": (_strs, "experiment.strategies"),
        "out_dir": (str, "experiment.out_dir"),
        "checkpoint": (str, "experiment.checkpoint"),
        "parallel": (int, "experiment.parallel"),
        "train_seed": (int, "experiment.train_seed"),
        "sweep_alphas": (_floats, "experiment.sweep_alphas"),
        "stress_latency_ms": (float, "experiment.stress_latency_ms"),
        "stress_liquidity_factor": (float, "experiment.stress_liquidity_factor"),
        "stress_toggle_step": (int, "experiment.stress_toggle_step"),
    },
}


def _resolve(root: Any, path: str) -> tuple[Any, str]:
    parts = path.split(".")
    obj = root
    for p in parts[:-1]:
        obj = getattr(obj, p)
    return obj, parts[-1]


def get_value(cfg: ScenarioConfig, path: str) -> Any:
    obj, attr = _resolve(cfg, path)
    return getattr(obj, attr)


def set_value(cfg: ScenarioConfig, path: str, value: Any) -> None:
    obj, attr = _resolve(cfg, path)
    setattr(obj, attr, value)


def parse_config(text: str, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = base or ScenarioConfig()
    for section in parser.sections():
        keys = SCHEMA.get(section)
        if keys is None:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            conv, path = keys[key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
            set_value(cfg, path, value)
    try:
        # re-run dataclass validation on the pieces that carry it
        PPOConfig(**vars(cfg.ppo))
        PopulationConfig(**vars(cfg.market.population))
        cfg.shield.constraints()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.sync()


def load_config(path: Optional[str]) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig().sync()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# where and how a run executes; results do not depend on these
RUN_KEYS = ("experiment.out_dir", "experiment.parallel")


def dump_config(cfg: ScenarioConfig, include_run_keys: bool = True) -> str:
    """Full, explicit config text; parsing it back reproduces ``cfg``.

    With ``include_run_keys=False`` the :data:`RUN_KEYS` are left out, so runs
    that differ only in output directory or worker count write identical text.
    """
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for key, (_, path) in keys.items():
            if not include_run_keys and path in RUN_KEYS:
                continue
            out.append(f"{key} = {_fmt(get_value(cfg, path))}")
        out.append("")
    return "\n".join(out)


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ScenarioConfig",
    "ShieldConfig",
    "SCHEMA",
    "dump_config",
    "load_config",
    "parse_config",
    "FundamentalOU",
    "IntradayProfile",
    "MarketMakerParams",
    "MomentumParams",
    "NoiseParams",
    "ValueParams",
]
