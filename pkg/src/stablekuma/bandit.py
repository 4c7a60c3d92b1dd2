"""Contextual Bernoulli bandit and the Variational Bandit Encoder (VBE).

A shared MLP encodes each arm's context into Kumaraswamy log-parameters.
Arms are chosen by Thompson sampling from those posteriors, and the
encoder is trained by one gradient-ascent step per round on

    sum over replay records of log p(r | z~_a)  +  beta_kl * sum over pulled arms of H[q_k]

with ``z~_a`` a fresh reparameterized draw for every record.  All
likelihood gradients are assembled in log space from the inverse-CDF
terms, so they stay finite when samples sit against 0 or 1.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from . import _fpmath as fp
from . import mlp
from .kumaraswamy import (
    BetaParams,
    LogParams,
    UnitValue,
    _icdf_terms,
    _interior,
    _log1mexp,
    entropy,
    entropy_grads,
    icdf,
    kl_to_beta,
    kl_to_beta_grads,
    open_uniform,
)
from .scalar import DomainError

__all__ = [
    "BanditInstance",
    "ReplayRecord",
    "ReplayBuffer",
    "VbeConfig",
    "RunTrace",
    "VbeState",
    "NonFiniteError",
    "POLICIES",
    "generate_instance",
    "bernoulli_log_lik",
    "elbo",
    "init_state",
    "vbe_step",
    "run",
    "evidence_stress",
    "StressReport",
]

log = logging.getLogger(__name__)

POLICIES = ("vbe-ks", "random", "greedy-no-entropy", "oracle")
INVERSE_PULLED = "inverse-pulled-arms"


class NonFiniteError(FloatingPointError):
    """A loss, gradient or sample became nan or inf during training."""

    def __init__(self, step, what):
        super().__init__(f"step {step}: non-finite {what}")
        self.step = step
        self.what = what


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BanditInstance:
    contexts: np.ndarray  # (K, d)
    weights: np.ndarray  # (d,)
    true_probs: np.ndarray  # (K,)
    power: int

    @property
    def n_arms(self) -> int:
        return len(self.true_probs)

    @property
    def best_prob(self) -> float:
        return float(self.true_probs.max())

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.contexts, self.weights, self.true_probs):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(str(self.power).encode())
        return h.hexdigest()[:16]


def generate_instance(K: int, d: int, power: int = 5, rng: Optional[np.random.Generator] = None) -> BanditInstance:
    """Draw ``w`` and the contexts from ``N(0, I_d)``; probabilities are the
    min-max normalized scores ``w . x_k`` raised to ``power``."""
    if K < 2 or d < 1:
        raise ValueError("generate_instance: need K >= 2 and d >= 1")
    if int(power) != power or power < 1:
        raise ValueError("generate_instance: power must be a positive integer")
    rng = np.random.default_rng() if rng is None else rng
    w = rng.standard_normal(d)
    X = rng.standard_normal((K, d))
    score = X @ w
    lo, hi = score.min(), score.max()
    if hi == lo:
        raise ValueError("generate_instance: degenerate scores, all arms equal")
    probs = ((score - lo) / (hi - lo)) ** int(power)
    return BanditInstance(X, w, probs, int(power))


@dataclass(frozen=True)
class ReplayRecord:
    context: np.ndarray
    arm: int  # 0-based
    reward: int


class ReplayBuffer:
    """Append-only store of :class:`ReplayRecord` with array views."""

    def __init__(self):
        self._contexts: List[np.ndarray] = []
        self._arms: List[int] = []
        self._rewards: List[int] = []

    def append(self, rec: ReplayRecord):
        if rec.reward not in (0, 1):
            raise ValueError("ReplayBuffer: reward must be 0 or 1")
        self._contexts.append(np.asarray(rec.context))
        self._arms.append(int(rec.arm))
        self._rewards.append(int(rec.reward))

    def __len__(self):
        return len(self._arms)

    def __getitem__(self, i) -> ReplayRecord:
        return ReplayRecord(self._contexts[i], self._arms[i], self._rewards[i])

    @property
    def arms(self) -> np.ndarray:
        return np.asarray(self._arms, dtype=np.int64)

    @property
    def rewards(self) -> np.ndarray:
        return np.asarray(self._rewards, dtype=np.int64)

    def pulled_arms(self) -> np.ndarray:
        return np.unique(self.arms)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def bernoulli_log_lik(r, z: UnitValue):
    """``r log z + (1 - r) log(1 - z)`` with ``log(1 - z) = log1mexp(log z)``."""
    r = np.asarray(r)
    if not np.all((r == 0) | (r == 1)):
        raise DomainError("bernoulli_log_lik: reward must be 0 or 1")
    lz = np.asarray(z.log_value)
    out = np.where(r == 1, lz, z.log1m)
    return out[()] if out.ndim == 0 else out


def _lik_and_grads(rewards, log_u, p: LogParams):
    """Per-record log-likelihood at ``z = icdf(u)`` and its gradient in ``(log a, log b)``.

    With ``dlogz/dlog a = -w/a`` and ``dlogz/dlog b = s exp(s - w)/a``
    (``s = log u / b``, ``w = log(1 - e^s)``), the ``r = 0`` branch
    ``-(z/(1-z)) dlogz`` is combined into one exponential so that the huge
    odds ratio and the tiny derivative never meet in linear space.
    """
    u = UnitValue(log_u)
    lu, la, lb, inv_a, s, w = _icdf_terms(u, p)
    lz = _interior(inv_a * w)
    l1mz = _log1mexp(lz)
    with np.errstate(divide="ignore"):
        log_ga = -la + fp.log(-w)  # dlogz/dlog a > 0
        log_gb = -la + fp.log(-s) + s - w  # |dlogz/dlog b|, sign negative
    log_odds = lz - l1mz
    one = rewards == 1
    lik = np.where(one, lz, l1mz)
    sign = np.where(one, 1, -1).astype(lz.dtype)
    d_la = sign * fp.exp(np.where(one, log_ga, log_odds + log_ga))
    d_lb = -sign * fp.exp(np.where(one, log_gb, log_odds + log_gb))
    return lik, d_la, d_lb


def elbo(params: mlp.MlpParams, contexts, arms, rewards, log_u, pulled, beta_kl: float,
         lik_scale: float = 1.0, prior: Optional[BetaParams] = None, dtype=np.float64, encoded=None):
    """Sampled ELBO and its gradient w.r.t. the flat encoder parameters.

    ``contexts`` holds one row per arm; ``arms``/``rewards``/``log_u`` describe
    the likelihood records (one base uniform per record) and ``pulled`` the
    arms whose entropy (or negative KL to ``prior``) enters with weight
    ``beta_kl``.  ``encoded`` may pass in an unused ``forward(params,
    contexts)`` result to save recomputing it.  Returns
    ``(value, grad, outputs)``.
    """
    outputs, tape = mlp.forward(params, contexts) if encoded is None else encoded
    arms = np.asarray(arms, dtype=np.int64)
    rewards = np.asarray(rewards)
    out_grads = np.zeros_like(outputs)
    value = 0.0

    if len(arms):
        p = LogParams(outputs[arms, 0].astype(dtype), outputs[arms, 1].astype(dtype))
        lik, d_la, d_lb = _lik_and_grads(rewards, np.asarray(log_u, dtype=dtype), p)
        value += lik_scale * float(np.sum(lik, dtype=np.float64))
        np.add.at(out_grads[:, 0], arms, lik_scale * d_la.astype(np.float64))
        np.add.at(out_grads[:, 1], arms, lik_scale * d_lb.astype(np.float64))

    pulled = np.asarray(pulled, dtype=np.int64)
    if beta_kl != 0 and len(pulled):
        q = LogParams(outputs[pulled, 0], outputs[pulled, 1])
        if prior is None:
            reg = entropy(q)
            g = entropy_grads(q)
            sign = 1.0
        else:
            reg = kl_to_beta(q, prior)
            g = kl_to_beta_grads(q, prior)
            sign = -1.0
        value += sign * beta_kl * float(np.sum(reg))
        out_grads[pulled, 0] += sign * beta_kl * np.asarray(g.d_log_a)
        out_grads[pulled, 1] += sign * beta_kl * np.asarray(g.d_log_b)

    return value, mlp.backward(params, tape, out_grads), outputs


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VbeConfig:
    T: int = 2000
    beta_kl: Union[str, float] = INVERSE_PULLED
    learning_rate: float = 1e-2
    minibatch: Union[int, str] = 256
    seed: int = 0
    hidden_widths: tuple = (32, 32, 32)
    prior: Optional[BetaParams] = None
    precision: str = "double"
    clip_norm: Optional[float] = 1.0

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError("VbeConfig: T must be a positive integer")
        if not self.learning_rate > 0:
            raise ValueError("VbeConfig: learning_rate must be positive")
        if self.beta_kl != INVERSE_PULLED and not (isinstance(self.beta_kl, (int, float)) and self.beta_kl >= 0):
            raise ValueError(f"VbeConfig: beta_kl must be {INVERSE_PULLED!r} or a non-negative number")
        if self.minibatch != "full" and not (int(self.minibatch) == self.minibatch and self.minibatch >= 1):
            raise ValueError("VbeConfig: minibatch must be a positive integer or 'full'")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("VbeConfig: clip_norm must be positive")
        if self.precision not in ("double", "single"):
            raise ValueError("VbeConfig: precision must be 'double' or 'single'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    def beta_at(self, n_pulled: int) -> float:
        if self.beta_kl == INVERSE_PULLED:
            return 1.0 / n_pulled if n_pulled else 0.0
        return float(self.beta_kl)


@dataclass
class RunTrace:
    policy: str
    seed: int
    arms: List[int] = field(default_factory=list)
    rewards: List[int] = field(default_factory=list)
    inst_regret: List[float] = field(default_factory=list)
    cum_regret: List[float] = field(default_factory=list)
    wall_clock: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    aborted_step: Optional[int] = None
    error: Optional[str] = None

    def record(self, arm, reward, regret, elapsed, loss=float("nan")):
        prev = self.cum_regret[-1] if self.cum_regret else 0.0
        self.arms.append(int(arm))
        self.rewards.append(int(reward))
        self.inst_regret.append(float(regret))
        self.cum_regret.append(prev + float(regret))
        self.wall_clock.append(float(elapsed))
        self.losses.append(float(loss))

    @property
    def total_regret(self) -> float:
        return self.cum_regret[-1] if self.cum_regret else 0.0

    def __len__(self):
        return len(self.arms)


@dataclass
class VbeState:
    params: mlp.MlpParams
    buffer: ReplayBuffer
    instance: BanditInstance
    config: VbeConfig
    beta_override: Optional[float] = None


def init_state(instance: BanditInstance, config: VbeConfig, rng: np.random.Generator, beta_override=None) -> VbeState:
    cfg = mlp.MlpConfig(instance.contexts.shape[1], tuple(config.hidden_widths), 2)
    return VbeState(mlp.init(cfg, rng), ReplayBuffer(), instance, config, beta_override)


def _thompson(outputs, rng, dtype):
    p = LogParams(outputs[:, 0].astype(dtype), outputs[:, 1].astype(dtype))
    u = open_uniform(rng, len(outputs), dtype=dtype)
    lu = fp.log(np.asarray(u))
    _, _, _, inv_a, _, w = _icdf_terms(UnitValue(lu), p)
    # argmax of log z is the argmax of z; np.argmax breaks ties toward index 0
    return int(np.argmax(inv_a * w)), inv_a * w


def vbe_step(state: VbeState, t: int, rng: np.random.Generator):
    """One round: encode, Thompson-sample, pull, store, one ascent step.

    Returns ``(state, (arm, reward, regret, loss))``.  Raises
    :class:`NonFiniteError` with the step number if anything non-finite
    appears.
    """
    cfg, inst = state.config, state.instance
    if t > cfg.T:
        raise ValueError(f"vbe_step: step {t} beyond T = {cfg.T}")
    dtype = cfg.dtype
    outputs, tape = mlp.forward(state.params, inst.contexts)
    if not np.all(np.isfinite(outputs)):
        raise NonFiniteError(t, "encoder output")
    arm, log_z = _thompson(outputs, rng, dtype)
    if not np.all(np.isfinite(log_z)):
        raise NonFiniteError(t, "Thompson sample")
    reward = int(rng.random() < inst.true_probs[arm])
    state.buffer.append(ReplayRecord(inst.contexts[arm], arm, reward))

    n = len(state.buffer)
    if cfg.minibatch == "full" or n <= cfg.minibatch:
        idx = np.arange(n)
    else:
        idx = np.sort(rng.choice(n, size=int(cfg.minibatch), replace=False))
    scale = n / len(idx)
    arms = state.buffer.arms[idx]
    rewards = state.buffer.rewards[idx]
    log_u = fp.log(np.asarray(open_uniform(rng, len(idx), dtype=dtype)).reshape(-1))
    pulled = state.buffer.pulled_arms()
    beta = state.beta_override if state.beta_override is not None else cfg.beta_at(len(pulled))

    with np.errstate(over="raise", invalid="raise"):
        try:
            loss, grad, _ = elbo(state.params, inst.contexts, arms, rewards, log_u, pulled, beta,
                                 lik_scale=scale, prior=cfg.prior, dtype=dtype, encoded=(outputs, tape))
        except FloatingPointError as exc:
            raise NonFiniteError(t, f"objective ({exc})") from exc
    if not np.isfinite(loss):
        raise NonFiniteError(t, "loss")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(t, "gradient")
    if cfg.clip_norm is not None:
        norm = float(np.linalg.norm(grad))
        if norm > cfg.clip_norm:
            grad = grad * (cfg.clip_norm / norm)
    state.params = mlp.sgd_step(state.params, grad, cfg.learning_rate)
    regret = inst.best_prob - inst.true_probs[arm]
    return state, (arm, reward, regret, loss)


def run(instance: BanditInstance, config: VbeConfig, policy: str = "vbe-ks", rng: Optional[np.random.Generator] = None) -> RunTrace:
    """Run ``config.T`` rounds of ``policy`` and return the trace.

    ``random`` picks arms uniformly, ``greedy-no-entropy`` is VBE with
    ``beta_kl = 0`` and ``oracle`` always pulls the best arm (for tests).
    Regret per round is the expected gap ``max_k z_k - z_a``.  A
    :class:`NonFiniteError` is re-raised with the partial trace attached
    as ``exc.trace``.
    """
    if policy not in POLICIES:
        raise ValueError(f"run: unknown policy {policy!r}; expected one of {POLICIES}")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    trace = RunTrace(policy, config.seed)
    start = time.perf_counter()
    best = instance.best_prob

    if policy in ("random", "oracle"):
        best_arm = int(np.argmax(instance.true_probs))
        for t in range(1, config.T + 1):
            arm = int(rng.integers(instance.n_arms)) if policy == "random" else best_arm
            reward = int(rng.random() < instance.true_probs[arm])
            trace.record(arm, reward, best - instance.true_probs[arm], time.perf_counter() - start)
        return trace

    beta = 0.0 if policy == "greedy-no-entropy" else None
    state = init_state(instance, config, rng, beta_override=beta)
    for t in range(1, config.T + 1):
        try:
            state, (arm, reward, regret, loss) = vbe_step(state, t, rng)
        except NonFiniteError as exc:
            trace.aborted_step = exc.step
            trace.error = str(exc)
            exc.trace = trace
            log.error("run aborted: %s", exc)
            raise
        trace.record(arm, reward, regret, time.perf_counter() - start, loss)
    return trace


# ---------------------------------------------------------------------------
# evidence stress
# ---------------------------------------------------------------------------


@dataclass
class StressReport:
    steps: int
    reached_step: Optional[int]
    final_log_a: float
    final_log_b: float
    max_log_b: float
    n_records: int

    @property
    def max_log2_b(self) -> float:
        return self.max_log_b / np.log(2.0)


def evidence_stress(target_log2_b: float = 20.0, max_evidence_log2: int = 12, steps_per_doubling: int = 200,
                    learning_rate: float = 5e-2, clip_norm: float = 1.0, extra_steps: int = 500,
                    max_steps: int = 30000, precision: str = "single", seed: int = 0, minibatch: int = 64) -> StressReport:
    """Single arm whose evidence grows until the posterior has ``b >= 2**target_log2_b``.

    The encoder has no hidden layer and a constant input, so it is just the
    pair ``(log a, log b)``.  The buffer holds ``N`` records with rewards
    alternating 0/1, ``N`` doubling every ``steps_per_doubling`` rounds up
    to ``2**max_evidence_log2``.  A posterior concentrated around 1/2 needs
    ``b`` near ``2**a``, so sharpening drives ``b`` up exponentially in ``a``.
    Likelihood terms are a minibatch scaled by ``N / minibatch`` and
    ``beta_kl = 1``.  Steps are the SGD update with the gradient rescaled
    to norm at most ``clip_norm``: the objective's curvature in
    ``(log a, log b)`` grows like ``a**2``, so a fixed plain step overshoots
    once the posterior is sharp.  After the target is first reached the run
    continues for ``extra_steps`` rounds.  Loss, gradient and the sampled
    values are checked every round; anything non-finite raises
    :class:`NonFiniteError`.
    """
    rng = np.random.default_rng(seed)
    dtype = np.float32 if precision == "single" else np.float64
    params = mlp.MlpParams(mlp.MlpConfig(1, (), 2), np.zeros(4))
    context = np.ones((1, 1))
    arms = np.zeros(minibatch, dtype=np.int64)
    rewards = np.arange(minibatch) % 2
    target = target_log2_b * np.log(2.0)
    max_lb = -np.inf
    reached = None
    n_records = 1
    t = 0
    while t < max_steps and (reached is None or t < reached + extra_steps):
        t += 1
        n_records = 2 ** min(max_evidence_log2, t // steps_per_doubling)
        log_u = fp.log(np.asarray(open_uniform(rng, minibatch, dtype=dtype)).reshape(-1))
        with np.errstate(over="raise", invalid="raise"):
            try:
                loss, grad, out = elbo(params, context, arms, rewards, log_u, [0], 1.0,
                                       lik_scale=n_records / minibatch, dtype=dtype)
                z = icdf(UnitValue(log_u), LogParams(out[0, 0].astype(dtype), out[0, 1].astype(dtype)))
            except (FloatingPointError, DomainError) as exc:
                raise NonFiniteError(t, f"objective ({exc})") from exc
        if not np.isfinite(loss):
            raise NonFiniteError(t, "loss")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(t, "gradient")
        if not np.all(np.isfinite(z.log_value)):
            raise NonFiniteError(t, "sample")
        norm = float(np.linalg.norm(grad))
        if norm > clip_norm:
            grad = grad * (clip_norm / norm)
        params = mlp.sgd_step(params, grad, learning_rate)
        max_lb = max(max_lb, float(out[0, 1]))
        if reached is None and max_lb >= target:
            reached = t
    out, _ = mlp.forward(params, context)
    return StressReport(t, reached, float(out[0, 0]), float(out[0, 1]), max(max_lb, float(out[0, 1])), n_records)
