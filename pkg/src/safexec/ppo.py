"""Proximal policy optimisation with clipped surrogate and GAE, in plain numpy.

Action parameterisation, per venue: a Gaussian over pre-squash ``(u_m, u_d)``;
the executed controls are ``m = 1 + tanh(u_m)`` in [0, 2] (multiplier on the
planner target) and ``d = 20 * tanh(u_d)`` ticks from the best bid.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .env import NoFills, feature_length
from .nn import MLP, Adam, ShapeMismatch
from .shield import ExecAction
from .strategies import D_MAX, scaled_action

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = b"SXPPO\x00\x00\x01"
CHECKPOINT_VERSION = 1


class LengthMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class PPOConfig:
    gamma: float = 0.999
    clip: float = 0.2
    vf_coef: float = 0.5
    lr: float = 3e-4
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    epochs_per_update: int = 4
    minibatch_size: int = 256
    episodes_per_update: int = 5
    n_epochs: int = 20
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5
    reward_scale: float = 1e-3
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.minibatch_size < 1 or self.epochs_per_update < 1 or self.episodes_per_update < 1:
            raise ValueError("batch settings must be positive")


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)^2)`` without cancellation for large |u|."""
    a = np.abs(u)
    return 2.0 * (math.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


def squash(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=np.float64)
    return 1.0 + np.tanh(u[0::2]), D_MAX * np.tanh(u[1::2])


def squash_log_det(u: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    n_d = len(u[1::2])
    return float(_log1m_tanh2(u).sum() + n_d * math.log(D_MAX))


def gaussian_logp(u: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (u - mu) * np.exp(-log_std)
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * u.shape[-1] * LOG_2PI


class Policy:
    def __init__(self, n_obs: int, n_venues: int, hidden: Sequence[int] = (64, 64), seed: int = 0,
                 init_log_std: float = -0.5):
        self.n_obs = n_obs
        self.n_venues = n_venues
        self.n_act = 2 * n_venues
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        self.pi = MLP([n_obs, *self.hidden, self.n_act], rng, out_scale=0.01)
        self.vf = MLP([n_obs, *self.hidden, 1], rng, out_scale=1.0)
        self.log_std = np.full(self.n_act, float(init_log_std))

    # flat parameter vector: [pi | log_std | vf]
    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.pi.theta, self.log_std, self.vf.theta])

    @theta.setter
    def theta(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        a, b = self.pi.n_params, self.pi.n_params + self.n_act
        if len(value) != b + self.vf.n_params:
            raise ShapeMismatch("parameter vector has the wrong length")
        self.pi.theta = value[:a].copy()
        self.log_std = value[a:b].copy()
        self.vf.theta = value[b:].copy()

    @property
    def n_params(self) -> int:
        return self.pi.n_params + self.n_act + self.vf.n_params

    def _features(self, state) -> np.ndarray:
        x = np.asarray(state.vector if hasattr(state, "vector") else state, dtype=np.float64)
        if x.shape[-1] != self.n_obs:
            raise ShapeMismatch(f"policy expects {self.n_obs} features, got {x.shape[-1]}")
        return x

    def mean_value(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        mu, _ = self.pi.forward(x)
        v, _ = self.vf.forward(x)
        return mu[0], float(v[0, 0])

    def sample(self, state, rng: Optional[np.random.Generator] = None, deterministic: bool = False):
        """Pre-squash action, its Gaussian log-density and the value estimate."""
        x = self._features(state)
        mu, v = self.mean_value(x)
        if deterministic:
            u = mu.copy()
        else:
            if rng is None:
                raise ValueError("stochastic sampling needs an rng")
            u = mu + np.exp(self.log_std) * rng.standard_normal(self.n_act)
        return u, float(gaussian_logp(u, mu, self.log_std)), v

    def logprob(self, state, u: np.ndarray) -> float:
        """Density of the squashed controls ``(m, d)`` implied by ``u``."""
        mu, _ = self.mean_value(self._features(state))
        return float(gaussian_logp(np.asarray(u, float), mu, self.log_std)) - squash_log_det(u)

    def act(self, state, p0: int, rng: Optional[np.random.Generator] = None, deterministic: bool = False):
        """Return ``(ExecAction, logprob, value, u)``; logprob is of the squashed controls."""
        u, logp_u, v = self.sample(state, rng, deterministic)
        m, d = squash(u)
        action = scaled_action(state, m, d, p0)
        return action, logp_u - squash_log_det(u), v, u

    def copy(self) -> "Policy":
        p = Policy(self.n_obs, self.n_venues, self.hidden, 0)
        p.theta = self.theta
        return p


# -- advantage estimation -------------------------------------------------------

def gae(rewards: Sequence[float], values: Sequence[float], dones: Sequence[bool], gamma: float,
        lam: float) -> tuple[np.ndarray, np.ndarray]:
    """``values`` carries one extra trailing entry: the bootstrap value."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if len(v) != len(r) + 1 or len(d) != len(r):
        raise LengthMismatch(f"rewards={len(r)} values={len(v)} dones={len(d)}")
    adv = np.zeros_like(r)
    nxt = 0.0
    for t in reversed(range(len(r))):
        nonterm = 1.0 - d[t]
        delta = r[t] + gamma * v[t + 1] * nonterm - v[t]
        nxt = delta + gamma * lam * nonterm * nxt
        adv[t] = nxt
    return adv, adv + v[:-1]


@dataclass
class Trajectory:
    obs: list[np.ndarray] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)
    logp: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)

    def check(self) -> None:
        n = len(self.rewards)
        if not (len(self.obs) == len(self.u) == len(self.logp) == len(self.values) == len(self.dones) == n):
            raise LengthMismatch("trajectory fields differ in length")
        if not np.all(np.isfinite(self.logp)):
            raise NonFiniteLoss("non-finite log-probability in trajectory")


@dataclass
class Batch:
    obs: np.ndarray
    u: np.ndarray
    logp: np.ndarray
    adv: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.adv)

    def subset(self, idx: np.ndarray) -> "Batch":
        return Batch(self.obs[idx], self.u[idx], self.logp[idx], self.adv[idx], self.returns[idx])


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    sd = adv.std()
    if not np.isfinite(sd) or sd < 1e-8:
        return adv - adv.mean()
    return (adv - adv.mean()) / sd


def build_batch(trajs: Sequence[Trajectory], gamma: float, lam: float, reward_scale: float = 1.0) -> Batch:
    obs, us, logps, advs, rets = [], [], [], [], []
    for tr in trajs:
        tr.check()
        # episodes always run to termination, so the bootstrap is zero
        a, r = gae(np.asarray(tr.rewards) * reward_scale, list(tr.values) + [0.0], tr.dones, gamma, lam)
        obs += tr.obs
        us += tr.u
        logps += tr.logp
        advs.append(a)
        rets.append(r)
    return Batch(np.asarray(obs), np.asarray(us), np.asarray(logps),
                 normalize_advantages(np.concatenate(advs)), np.concatenate(rets))


# -- loss and gradient ------------------------------------------------------------

@dataclass
class LossReport:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_frac: float


def surrogates(ratio: np.ndarray, adv: np.ndarray, clip: float) -> tuple[float, float]:
    """(clipped, unclipped) mean surrogate objectives."""
    unclipped = ratio * adv
    clipped = np.minimum(unclipped, np.clip(ratio, 1 - clip, 1 + clip) * adv)
    return float(clipped.mean()), float(unclipped.mean())


def loss_and_grad(policy: Policy, batch: Batch, cfg: PPOConfig, theta: Optional[np.ndarray] = None,
                  need_grad: bool = True):
    if theta is not None:
        policy.theta = theta
    n = len(batch)
    mu, pcache = policy.pi.forward(batch.obs)
    val, vcache = policy.vf.forward(batch.obs)
    val = val[:, 0]
    ls = policy.log_std
    inv_var = np.exp(-2.0 * ls)
    diff = batch.u - mu
    logp = -0.5 * (diff * diff * inv_var).sum(axis=1) - ls.sum() - 0.5 * policy.n_act * LOG_2PI
    ratio = np.exp(logp - batch.logp)
    s1 = ratio * batch.adv
    s2 = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * batch.adv
    obj = np.minimum(s1, s2)
    policy_loss = -float(obj.mean())
    value_loss = float(np.mean((val - batch.returns) ** 2))
    entropy = float(ls.sum() + 0.5 * policy.n_act * (1.0 + LOG_2PI))
    loss = policy_loss + cfg.vf_coef * value_loss - cfg.entropy_coef * entropy
    report = LossReport(loss, policy_loss, value_loss, entropy,
                        float(np.mean(batch.logp - logp)), float(np.mean(np.abs(ratio - 1) > cfg.clip)))
    if not np.isfinite([loss, report.approx_kl]).all():
        raise NonFiniteLoss(f"loss={loss}")
    if not need_grad:
        return report, None
    # the min picks s1 (gradient flows through ratio) unless the clipped branch is strictly smaller
    active = (s1 <= s2).astype(np.float64)
    g_logp = -active * batch.adv * ratio / n
    g_mu = g_logp[:, None] * diff * inv_var
    g_ls = (g_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - cfg.entropy_coef
    g_pi = policy.pi.backward(pcache, g_mu)
    g_v = policy.vf.backward(vcache, (cfg.vf_coef * 2.0 * (val - batch.returns) / n)[:, None])
    grad = np.concatenate([g_pi, g_ls, g_v])
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLoss("non-finite gradient")
    return report, grad


def ppo_update(policy: Policy, batch: Batch, cfg: PPOConfig, opt: Adam, rng: np.random.Generator
               ) -> LossReport:
    """In-place update of ``policy``; returns the report of the final minibatch pass."""
    n = len(batch)
    theta0 = policy.theta
    report = None
    for _ in range(cfg.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            mb = batch.subset(perm[start:start + cfg.minibatch_size])
            try:
                report, grad = loss_and_grad(policy, mb, cfg)
            except NonFiniteLoss:
                policy.theta = theta0
                raise
            gn = float(np.linalg.norm(grad))
            if cfg.max_grad_norm and gn > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / gn)
            policy.theta = opt.step(policy.theta, grad)
    return report


# -- training ----------------------------------------------------------------------

@dataclass
class CurvePoint:
    epoch: int
    mean_reward: float
    mean_is_bps: float
    violations: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.mean_reward:.6f},{self.mean_is_bps:.6f},{self.violations:.4f}"


CURVE_CSV_HEADER = "epoch,mean_reward,mean_is_bps,violations"


def curve_csv(points: Sequence[CurvePoint]) -> str:
    return "\n".join([CURVE_CSV_HEADER] + [p.csv_row() for p in points]) + "\n"


@dataclass
class TrainResult:
    policy: Policy
    best: Policy
    curve: list[CurvePoint]
    best_epoch: int


def collect_episode(env, policy: Policy, seed: int, rng: np.random.Generator) -> tuple[Trajectory, float, float, int]:
    state = env.reset(seed)
    tr = Trajectory()
    total = 0.0
    done = env.done
    while not done:
        action, _, value, u = policy.act(state, env.p0, rng=rng)
        mu, _ = policy.mean_value(policy._features(state))
        tr.obs.append(np.asarray(state.vector, dtype=np.float64))
        tr.u.append(u)
        tr.logp.append(float(gaussian_logp(u, mu, policy.log_std)))
        tr.values.append(value)
        state, reward, _, done = env.step(action)
        r = reward.total if hasattr(reward, "total") else float(reward)
        tr.rewards.append(r)
        tr.dones.append(bool(done))
        total += r
    try:
        isb = env.is_bps()
    except NoFills:
        isb = 0.0
    return tr, total, isb, int(getattr(env, "raw_violations", 0))


def evaluate_deterministic(env, policy: Policy, seed: int) -> tuple[float, float, int]:
    state = env.reset(seed)
    total, done = 0.0, env.done
    while not done:
        action, _, _, _ = policy.act(state, env.p0, deterministic=True)
        state, reward, _, done = env.step(action)
        total += reward.total if hasattr(reward, "total") else float(reward)
    try:
        isb = env.is_bps()
    except NoFills:
        isb = 0.0
    return total, isb, int(getattr(env, "raw_violations", 0))


def train(env_factory: Callable[[], object], cfg: PPOConfig, seed: int, n_obs: Optional[int] = None,
          n_venues: Optional[int] = None, seed_stream: Optional[Callable[[int, int], int]] = None,
          log: Optional[Callable[[CurvePoint], None]] = None, curve_mode: str = "sampled") -> TrainResult:
    """Collect ``episodes_per_update`` days per epoch, then update; keep the best epoch's params.

    ``curve_mode="deterministic"`` scores each epoch by a greedy (mean-action)
    rollout on the epoch's first seed instead of the sampled training episodes,
    which removes exploration noise from the curve on deterministic environments.
    """
    if curve_mode not in ("sampled", "deterministic"):
        raise ValueError(f"unknown curve mode {curve_mode!r}")
    env = env_factory()
    if n_venues is None:
        n_venues = env.episode.n_venues
    if n_obs is None:
        n_obs = feature_length(n_venues)
    policy = Policy(n_obs, n_venues, cfg.hidden, seed, cfg.init_log_std)
    opt = Adam(policy.n_params, cfg.lr)
    rng = np.random.default_rng([seed, 0x5EED])
    stream = seed_stream or (lambda e, j: 1_000_000 + seed * 100_000 + e * cfg.episodes_per_update + j)
    curve: list[CurvePoint] = []
    best, best_epoch, best_reward = policy.copy(), -1, -math.inf
    for epoch in range(cfg.n_epochs):
        trajs, rewards, iss, vios = [], [], [], []
        for j in range(cfg.episodes_per_update):
            tr, total, isb, vio = collect_episode(env, policy, stream(epoch, j), rng)
            trajs.append(tr)
            rewards.append(total)
            iss.append(isb)
            vios.append(vio)
        if curve_mode == "deterministic":
            total, isb, vio = evaluate_deterministic(env, policy, stream(epoch, 0))
            point = CurvePoint(epoch, total, isb, float(vio))
        else:
            point = CurvePoint(epoch, float(np.mean(rewards)), float(np.mean(iss)), float(np.mean(vios)))
        curve.append(point)
        if log is not None:
            log(point)
        # params that generated this epoch's data are the ones being scored
        if point.mean_reward > best_reward:
            best, best_epoch, best_reward = policy.copy(), epoch, point.mean_reward
        batch = build_batch(trajs, cfg.gamma, cfg.gae_lambda, cfg.reward_scale)
        ppo_update(policy, batch, cfg, opt, rng)
    return TrainResult(policy, best, curve, best_epoch)


# -- checkpoint ---------------------------------------------------------------------

def save_checkpoint(policy: Policy, path_or_buf) -> bytes:
    """Versioned binary: magic, u32 version, u32 n_obs, u32 n_venues, u32 n_hidden,
    u32 hidden sizes, then pi / log_std / vf parameters as little-endian float64."""
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<4I", CHECKPOINT_VERSION, policy.n_obs, policy.n_venues, len(policy.hidden)))
    out.write(struct.pack(f"<{len(policy.hidden)}I", *policy.hidden))
    out.write(policy.theta.astype("<f8").tobytes())
    data = out.getvalue()
    if path_or_buf is not None:
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(data)
        else:
            with open(path_or_buf, "wb") as fh:
                fh.write(data)
    return data


def load_checkpoint(path_or_bytes) -> Policy:
    if isinstance(path_or_bytes, (bytes, bytearray)):
        data = bytes(path_or_bytes)
    else:
        with open(path_or_bytes, "rb") as fh:
            data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a policy checkpoint")
    off = len(CHECKPOINT_MAGIC)
    try:
        version, n_obs, n_venues, n_hidden = struct.unpack_from("<4I", data, off)
        off += 16
        hidden = struct.unpack_from(f"<{n_hidden}I", data, off)
        off += 4 * n_hidden
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint header") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    policy = Policy(n_obs, n_venues, hidden, 0)
    body = data[off:]
    if len(body) != 8 * policy.n_params:
        raise CheckpointError("checkpoint body has the wrong size")
    policy.theta = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return policy


# -- deterministic toy environment ----------------------------------------------------

@dataclass
class ToySnapshot:
    best_bid: int
    best_ask: int


@dataclass
class ToyState:
    step: int
    remaining: int
    snapshots: tuple
    planner_targets: tuple
    vector: np.ndarray


@dataclass
class ToyEpisode:
    n_venues: int = 1


class ToyExecEnv:
    """One venue, constant quotes, deterministic fills.

    A sell of ``v`` at ``bid + k`` ticks fills ``v`` at the bid when ``k <= 0``
    and ``floor(v * (1 - k / 20))`` at the limit otherwise. ``p0`` sits one tick
    above the bid, so resting around ten ticks up is worth the most per share.
    """

    def __init__(self, q0: int = 1000, horizon: int = 10, bid: int = 10_000, terminal_penalty: float = 0.001):
        self.q0, self.horizon, self.bid = q0, horizon, bid
        self.p0 = bid + 1
        self.terminal_penalty = terminal_penalty
        self.episode = ToyEpisode(1)
        self.raw_violations = 0

    def _state(self) -> ToyState:
        target = self.q0 // self.horizon
        vec = np.array([self.remaining / self.q0, self.k / self.horizon], dtype=np.float64)
        return ToyState(self.k, self.remaining, (ToySnapshot(self.bid, self.bid + 2),), (target,), vec)

    def reset(self, seed: int = 0) -> ToyState:
        self.k, self.remaining, self.done = 0, self.q0, False
        self.fills: list[tuple[int, int]] = []
        return self._state()

    def step(self, action: ExecAction):
        v, p = action.volumes[0], action.prices[0]
        k = p - self.bid
        if k <= 0:
            q, px = v, self.bid
        else:
            q, px = int(v * max(0.0, 1.0 - k / 20.0)), p
        q = min(q, self.remaining)
        self.remaining -= q
        if q:
            self.fills.append((q, px))
        reward = q * (px - self.p0) * 0.01
        self.k += 1
        self.done = self.k >= self.horizon or self.remaining == 0
        if self.done:
            reward -= self.terminal_penalty * self.remaining
        return self._state(), reward, [], self.done

    def is_bps(self) -> float:
        from .env import implementation_shortfall_bps

        return implementation_shortfall_bps(self.fills, self.p0)
