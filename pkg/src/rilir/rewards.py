"""Imitative rewards: OT trajectory matching plus an adversarial critic.

A finished behavior episode is scored in two ways.  First, its embedded
states are aligned to the nearest expert trajectory with entropically
regularized optimal transport, and each step is paid the negative
transported cost of its row.  Second, a small classifier trained to
separate expert from agent (embedding, action) pairs scores each step.
The streams are combined as r1 + eta * r2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericalError, Tape, Tensor, clip, log, mean, scale, sigmoid
from .nn import Mlp, ParameterSet
from .errors import AggregationError

COSINE_NORM_GUARD = 1e-12
LOGIT_CLIP = 30.0


def cost_matrix(behavior_emb, expert_emb, kind="cosine"):
    """Pairwise step costs between two equally long embedding sequences.

    Cosine cost is 1 - <x,y>/(|x||y|), in [0, 2]; rows or columns with a
    vanishing norm fall back to cost 1 (the orthogonal default).  Euclidean
    is the plain pairwise distance.
    """
    x = np.asarray(behavior_emb, dtype=np.float64)
    y = np.asarray(expert_emb, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[1] != y.shape[1]:
        raise AggregationError(f"embedding sequences disagree: {x.shape} vs {y.shape}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NumericalError("non-finite embeddings in cost matrix")
    if kind == "euclidean":
        diff = x[:, None, :] - y[None, :, :]
        return np.sqrt((diff * diff).sum(axis=2))
    if kind != "cosine":
        raise AggregationError(f"unknown cost kind {kind!r}")
    xn = np.linalg.norm(x, axis=1)
    yn = np.linalg.norm(y, axis=1)
    denom = np.outer(xn, yn)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = (x @ y.T) / denom
    cost = 1.0 - cos
    degenerate = (xn[:, None] < COSINE_NORM_GUARD) | (yn[None, :] < COSINE_NORM_GUARD)
    cost[degenerate] = 1.0
    return np.clip(cost, 0.0, 2.0)


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.05
    max_iterations: int = 200
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise AggregationError("epsilon must be > 0")
        if self.max_iterations < 1:
            raise AggregationError("max_iterations must be >= 1")


@dataclass
class CouplingPlan:
    """Transport plan with uniform 1/T marginals (within tolerance)."""

    matrix: np.ndarray

    @property
    def size(self):
        return self.matrix.shape[0]

    def marginal_error(self):
        t = self.size
        row = np.abs(self.matrix.sum(axis=1) - 1.0 / t).max()
        col = np.abs(self.matrix.sum(axis=0) - 1.0 / t).max()
        return max(row, col)

    def transport_cost(self, cost):
        return float((cost * self.matrix).sum())


@dataclass
class SinkhornResult:
    plan: CouplingPlan
    cost: float
    iterations: int
    converged: bool
    marginal_error: float

    @property
    def status(self):
        return "converged" if self.converged else "max_iterations"


def _logsumexp(m, axis):
    peak = m.max(axis=axis, keepdims=True)
    return (peak + np.log(np.exp(m - peak).sum(axis=axis, keepdims=True))).squeeze(axis)


def _round_to_feasible(plan, marginal):
    """Project an almost-feasible plan onto exact uniform marginals.

    Rows and columns are scaled down where they overshoot, then the missing
    mass is restored by a non-negative rank-one correction.  The change to
    any entry is on the order of the incoming marginal error.
    """
    scaled = plan * np.minimum(1.0, marginal / plan.sum(axis=1))[:, None]
    scaled = scaled * np.minimum(1.0, marginal / scaled.sum(axis=0))[None, :]
    missing_r = np.maximum(0.0, marginal - scaled.sum(axis=1))
    missing_c = np.maximum(0.0, marginal - scaled.sum(axis=0))
    total = missing_r.sum()
    if total > 0:
        scaled = scaled + np.outer(missing_r, missing_c) / total
    return scaled


def sinkhorn(cost, cfg=SinkhornConfig()):
    """Log-domain scaling iterations for entropic OT with uniform marginals.

    The potentials are warm-started by annealing the entropic weight down
    from the cost scale, then iterated at the target weight with a
    safeguarded overrelaxation (the fixed point is unchanged; relaxation
    falls back to plain updates if the marginal error stops improving).
    The iteration stops once the plan marginals deviate from 1/T by at
    most the tolerance; the returned plan is additionally rounded to exact
    feasibility, so its row and column sums match 1/T to float precision
    regardless of where the dual solve stopped.  Hitting the iteration cap
    is not an error: the result carries the achieved pre-rounding marginal
    error and a non-converged status.  NaN in the potentials aborts, since
    that signals the cost scale overwhelming the entropic weight.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
        raise AggregationError(f"cost matrix must be square and non-empty, got {c.shape}")
    if not np.isfinite(c).all() or c.min() < 0:
        raise NumericalError("cost matrix must be finite and non-negative")
    t = c.shape[0]
    eps = cfg.epsilon
    log_marginal = -np.log(t)
    f = np.zeros(t)
    g = np.zeros(t)

    # annealing stages from the cost scale down to the target weight; each
    # stage only improves the warm start and costs a fixed 30 iterations
    stage = float(c.max())
    ladder = []
    while stage > 2.0 * eps:
        ladder.append(stage)
        stage /= 2.0
    for e in ladder:
        for _ in range(30):
            f = e * log_marginal - e * _logsumexp((g[None, :] - c) / e, axis=1)
            g = e * log_marginal - e * _logsumexp((f[:, None] - c) / e, axis=0)

    omega = 1.8
    best_err = np.inf
    stalls = 0
    iterations = 0
    converged = False
    err = np.inf
    for iterations in range(1, cfg.max_iterations + 1):
        f_new = eps * log_marginal - eps * _logsumexp((g[None, :] - c) / eps, axis=1)
        f = (1.0 - omega) * f + omega * f_new
        g_new = eps * log_marginal - eps * _logsumexp((f[:, None] - c) / eps, axis=0)
        g = (1.0 - omega) * g + omega * g_new
        if not (np.isfinite(f).all() and np.isfinite(g).all()):
            raise NumericalError("sinkhorn potentials diverged; raise epsilon")
        plan = np.exp((f[:, None] + g[None, :] - c) / eps)
        err = max(np.abs(plan.sum(axis=1) - 1.0 / t).max(), np.abs(plan.sum(axis=0) - 1.0 / t).max())
        if err <= cfg.marginal_tol:
            converged = True
            break
        if err < best_err:
            best_err = err
            stalls = 0
        else:
            stalls += 1
            if stalls >= 20 and omega != 1.0:
                omega = 1.0  # relaxation not contracting here; plain updates always do
                stalls = 0
    plan = CouplingPlan(_round_to_feasible(np.exp((f[:, None] + g[None, :] - c) / eps), 1.0 / t))
    return SinkhornResult(
        plan=plan,
        cost=plan.transport_cost(c),
        iterations=iterations,
        converged=converged,
        marginal_error=float(err),
    )


def ot_rewards(behavior_emb, expert_emb, kind="cosine", cfg=SinkhornConfig()):
    """Per-step matching rewards: row t earns minus its transported cost.

    The rewards are never positive and their negated sum equals the plan's
    transport cost by construction.
    """
    c = cost_matrix(behavior_emb, expert_emb, kind)
    result = sinkhorn(c, cfg)
    rewards = -(c * result.plan.matrix).sum(axis=1)
    return rewards, result


def nearest_expert(behavior_emb, expert_embs, kind="cosine", cfg=SinkhornConfig()):
    """Score against every expert trajectory, keep the cheapest alignment.

    Ties resolve to the lowest index.  Returns (index, rewards, result).
    """
    if len(expert_embs) == 0:
        raise AggregationError("expert embedding list is empty")
    best = None
    for i, emb in enumerate(expert_embs):
        rewards, result = ot_rewards(behavior_emb, emb, kind, cfg)
        if best is None or result.cost < best[2].cost:
            best = (i, rewards, result)
    return best


class Discriminator:
    """Classifier over (embedding, action) pairs, trained to mark experts 1.

    Logits are clipped to +-30 before the sigmoid so the output stays
    strictly inside (0, 1) in double precision, keeping both log D and
    log(1 - D) finite.
    """

    def __init__(self, rng, embed_dim, action_dim, hidden=(64, 64), lr=3e-4, updates_per_episode=1):
        self.params = ParameterSet()
        self.net = Mlp(
            self.params,
            "disc",
            [embed_dim + action_dim, *hidden, 1],
            hidden_activation="relu",
            head_activation="linear",
            rng=rng,
        )
        self.lr = lr
        self.updates_per_episode = updates_per_episode

    def _logits(self, tape, emb, act):
        joint = np.concatenate([np.atleast_2d(emb), np.atleast_2d(act)], axis=1)
        return clip(self.net.forward(tape, joint), -LOGIT_CLIP, LOGIT_CLIP)

    def probability(self, emb, act):
        """D(embedding, action) without recording a tape."""
        logits = self._logits(None, emb, act)
        return sigmoid(logits).data.ravel()

    def loss(self, tape, expert_emb, expert_act, agent_emb, agent_act):
        d_expert = sigmoid(self._logits(tape, expert_emb, expert_act))
        d_agent = sigmoid(self._logits(tape, agent_emb, agent_act))
        one = Tensor(np.ones_like(d_agent.data))
        return scale(mean(log(d_expert)), -1.0) + scale(mean(log(one - d_agent)), -1.0)

    def update(self, expert_emb, expert_act, agent_emb, agent_act):
        """One Adam step separating the two batches; returns the prior loss."""
        if len(np.atleast_2d(expert_emb)) == 0 or len(np.atleast_2d(agent_emb)) == 0:
            raise AggregationError("discriminator batches must be non-empty")
        tape = Tape()
        loss = self.loss(tape, expert_emb, expert_act, agent_emb, agent_act)
        tape.backward(loss)
        self.params.adam_step(self.lr)
        return loss.item()


@dataclass(frozen=True)
class RewardConfig:
    eta: float = 0.5
    variant: str = "expert_likeness"
    cost_kind: str = "cosine"
    r2_max: float = 10.0
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta < 0:
            raise AggregationError("eta must be finite and >= 0")
        if self.variant not in ("paper_literal", "expert_likeness"):
            raise AggregationError(f"unknown reward variant {self.variant!r}")


def discriminator_reward(discriminator, emb, act, variant="expert_likeness", r2_max=10.0):
    """Per-step adversarial reward from D, clipped to +-r2_max.

    ``paper_literal`` pays -log D; ``expert_likeness`` pays -log(1 - D),
    which grows as D approaches 1 (samples the classifier mistakes for
    expert data).
    """
    d = discriminator.probability(emb, act)
    if variant == "paper_literal":
        r = -np.log(d)
    else:
        r = -np.log(1.0 - d)
    return np.clip(r, -r2_max, r2_max)


def combine(r1, r2, cfg=RewardConfig()):
    """Elementwise r1 + eta * r2."""
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    if r1.shape != r2.shape:
        raise AggregationError(f"reward streams disagree: {r1.shape} vs {r2.shape}")
    return r1 + cfg.eta * r2


class RunningScale:
    """Scale-only standardizer: divide by a running root-mean-square.

    Centered standardization would destroy the zero-means-matched semantics
    of the OT rewards, so only the magnitude is normalized.  Values are
    scaled with the statistics from before the batch, then the statistics
    absorb the raw batch (apply-then-update); the first batch passes
    through unchanged.
    """

    def __init__(self, floor=1e-6):
        self.count = 0
        self.sum_sq = 0.0
        self.floor = floor

    @property
    def scale(self):
        if self.count == 0:
            return 1.0
        return max(np.sqrt(self.sum_sq / self.count), self.floor)

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        out = values / self.scale
        self.sum_sq += float((values * values).sum())
        self.count += values.size
        return out


@dataclass
class EpisodeRewards:
    r1: np.ndarray
    r2: np.ndarray
    combined: np.ndarray
    expert_index: int
    sinkhorn_iterations: int
    sinkhorn_status: str
    marginal_error: float


def episode_rewards(trajectory, target_encoder, discriminator, cfg, expert_embs):
    """Score one finished episode; purely functional given its inputs.

    Embeds the behavior observations with the frozen target encoder,
    aligns them to the nearest of the pre-embedded expert trajectories for
    the matching stream, and queries the discriminator for the adversarial
    stream.  No standardization happens here; the training pipeline owns
    the running scales.
    """
    behavior_emb = target_encoder.encode(trajectory.obs)
    actions = np.asarray(trajectory.actions, dtype=np.float64)
    index, r1, result = nearest_expert(behavior_emb, expert_embs, cfg.cost_kind, cfg.sinkhorn)
    r2 = discriminator_reward(discriminator, behavior_emb, actions, cfg.variant, cfg.r2_max)
    return EpisodeRewards(
        r1=r1,
        r2=r2,
        combined=combine(r1, r2, cfg),
        expert_index=index,
        sinkhorn_iterations=result.iterations,
        sinkhorn_status=result.status,
        marginal_error=result.marginal_error,
    )


BREAKDOWN_COLUMNS = (
    "episode",
    "expert_index",
    "sinkhorn_iterations",
    "sinkhorn_status",
    "r1_mean",
    "r2_mean",
    "combined_mean",
)


class BreakdownLog:
    """Appends one CSV row of reward diagnostics per finished episode."""

    def __init__(self, path):
        self.path = path
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(BREAKDOWN_COLUMNS)

    def append(self, episode, ep_rewards):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(
                [
                    episode,
                    ep_rewards.expert_index,
                    ep_rewards.sinkhorn_iterations,
                    ep_rewards.sinkhorn_status,
                    f"{ep_rewards.r1.mean():.10g}",
                    f"{ep_rewards.r2.mean():.10g}",
                    f"{ep_rewards.combined.mean():.10g}",
                ]
            )
