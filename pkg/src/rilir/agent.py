"""TD3 learner over learned embeddings, with behavior-cloned warm start.

The policy and critics never see raw pixels: every network input passes
through the encoder.  Critic and inverse-dynamics gradients shape the
encoder jointly in one backward pass per step; the actor's gradients are
stopped before the encoder.  Rewards are imitative (trajectory matching
plus discriminator) and are attached to transitions when their episode
finishes, using the frozen target encoder of the moment.
"""

from __future__ import annotations

import csv
import os
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import ContractError, Tape, Tensor, concat, mean, scale, square
from .config import save_config
from .envsim import OBS_DIM, PerturbationSpec, PixelEnv, Trajectory, load_expert_dataset
from .errors import ConfigError
from .nn import Mlp, ParameterSet, load_parameter_set, mlp_from_params
from .representation import build_representation, inverse_dynamics_loss
from .rewards import (
    Discriminator,
    RewardConfig,
    RunningScale,
    SinkhornConfig,
    episode_rewards,
)
from .seeding import stream

ACTOR_HIDDEN = (64, 64)
CRITIC_HIDDEN = (64, 64)

LOG_COLUMNS = (
    "step",
    "episode",
    "eval_return_mean",
    "eval_return_std",
    "L_inv",
    "L_critic",
    "L_actor",
    "L_D",
    "mean_R1",
    "mean_R2",
    "sinkhorn_iters_mean",
)


@dataclass(frozen=True)
class ExplorationSpec:
    """Gaussian action noise settings for acting and for TD targets."""

    sigma_explore: float = 0.1
    sigma_target: float = 0.2
    clip_bound: float = 0.5

    def __post_init__(self):
        if self.sigma_explore < 0 or self.sigma_target < 0:
            raise ConfigError("sigma", "noise scales must be >= 0")
        if self.clip_bound <= 0:
            raise ConfigError("clip_bound", "noise clip bound must be > 0")


class _Episode:
    __slots__ = ("episode_id", "observations", "actions", "rewards", "expert")

    def __init__(self, episode_id, observations, actions, rewards, expert):
        self.episode_id = episode_id
        self.observations = observations  # (T+1, obs_dim)
        self.actions = actions  # (T, action_dim)
        self.rewards = rewards  # (T,) or None for expert episodes
        self.expert = expert

    def __len__(self):
        return self.actions.shape[0]


class ReplayBuffer:
    """Episode-granular replay store with a protected expert section.

    Agent episodes are evicted whole, oldest first, once the transition
    count exceeds capacity.  Expert episodes live in a separate list that
    never shrinks and carries no stored rewards; they feed the inverse
    dynamics and discriminator batches only, never the TD batches.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ConfigError("capacity", "replay capacity must be >= 1")
        self.capacity = capacity
        self._agent = deque()
        self._expert = []
        self._agent_index = []  # (episode, t) pairs, oldest episode first
        self._expert_index = []
        self._next_id = 0

    @property
    def agent_transitions(self):
        return len(self._agent_index)

    @property
    def expert_transitions(self):
        return len(self._expert_index)

    def add_episode(self, trajectory, rewards=None, expert=False):
        obs = np.asarray(trajectory.observations, dtype=np.float64)
        actions = np.asarray(trajectory.actions, dtype=np.float64)
        if expert:
            if rewards is not None:
                raise ContractError("expert episodes must not carry stored rewards")
        else:
            rewards = np.asarray(rewards, dtype=np.float64)
            if rewards.shape != (actions.shape[0],):
                raise ContractError(f"rewards shaped {rewards.shape} for {actions.shape[0]} transitions")
        episode = _Episode(self._next_id, obs, actions, rewards, expert)
        self._next_id += 1
        if expert:
            self._expert.append(episode)
            self._expert_index.extend((episode, t) for t in range(len(episode)))
            return episode.episode_id
        self._agent.append(episode)
        self._agent_index.extend((episode, t) for t in range(len(episode)))
        # a lone over-long episode stays; otherwise drop oldest-first
        while self.agent_transitions > self.capacity and len(self._agent) > 1:
            dropped = self._agent.popleft()
            del self._agent_index[: len(dropped)]
        return episode.episode_id

    def episode(self, episode_id):
        """Reconstruct one stored episode as a Trajectory."""
        for ep in list(self._agent) + self._expert:
            if ep.episode_id == episode_id:
                return Trajectory(ep.observations.copy(), ep.actions.copy())
        raise ContractError(f"episode {episode_id} not in buffer")

    def sample_td(self, rng, batch_size):
        """Agent-only transition batch for the critics."""
        if not self._agent_index:
            raise ContractError("TD sampling from a buffer holding no agent episodes")
        picks = rng.integers(0, len(self._agent_index), size=batch_size)
        obs = np.empty((batch_size, self._agent_index[0][0].observations.shape[1]))
        next_obs = np.empty_like(obs)
        actions = np.empty((batch_size, self._agent_index[0][0].actions.shape[1]))
        rewards = np.empty(batch_size)
        done = np.empty(batch_size)
        for row, pick in enumerate(picks):
            ep, t = self._agent_index[pick]
            obs[row] = ep.observations[t]
            next_obs[row] = ep.observations[t + 1]
            actions[row] = ep.actions[t]
            rewards[row] = ep.rewards[t]
            done[row] = 1.0 if t == len(ep) - 1 else 0.0
        return {"obs": obs, "actions": actions, "next_obs": next_obs, "rewards": rewards, "done": done}

    def _gather(self, index, rng, count):
        picks = rng.integers(0, len(index), size=count)
        obs = np.stack([index[p][0].observations[index[p][1]] for p in picks])
        act = np.stack([index[p][0].actions[index[p][1]] for p in picks])
        nxt = np.stack([index[p][0].observations[index[p][1] + 1] for p in picks])
        return obs, act, nxt

    def sample_inverse(self, rng, batch_size):
        """Transition batch mixing agent and expert halves when both exist."""
        if not self._agent_index and not self._expert_index:
            raise ContractError("inverse sampling from an empty buffer")
        if not self._expert_index:
            n_expert = 0
        elif not self._agent_index:
            n_expert = batch_size
        else:
            n_expert = batch_size // 2
        parts = []
        if n_expert:
            parts.append(self._gather(self._expert_index, rng, n_expert))
        if batch_size - n_expert:
            parts.append(self._gather(self._agent_index, rng, batch_size - n_expert))
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))

    def sample_pairs(self, rng, batch_size, expert):
        """(observation, action) pairs from one side, for the discriminator."""
        index = self._expert_index if expert else self._agent_index
        if not index:
            raise ContractError(f"no {'expert' if expert else 'agent'} transitions to sample")
        obs, act, _ = self._gather(index, rng, batch_size)
        return obs, act


class ActorCritic:
    """Deterministic actor, twin critics, and their Polyak-averaged targets."""

    def __init__(self, rng, embed_dim, action_dim, polyak=0.005, policy_delay=2):
        if not 0.0 < polyak <= 1.0:
            raise ConfigError("polyak", f"must lie in (0, 1], got {polyak}")
        if policy_delay < 1:
            raise ConfigError("policy_delay", f"must be >= 1, got {policy_delay}")
        self.polyak = polyak
        self.policy_delay = policy_delay
        self.actor_params = ParameterSet()
        self.actor = Mlp(
            self.actor_params,
            "actor",
            [embed_dim, *ACTOR_HIDDEN, action_dim],
            hidden_activation="relu",
            head_activation="tanh",
            rng=rng,
        )
        self.q1_params = ParameterSet()
        self.q1 = Mlp(self.q1_params, "q1", [embed_dim + action_dim, *CRITIC_HIDDEN, 1], rng=rng)
        self.q2_params = ParameterSet()
        self.q2 = Mlp(self.q2_params, "q2", [embed_dim + action_dim, *CRITIC_HIDDEN, 1], rng=rng)
        self.actor_target = self.actor_params.clone()
        self.q1_target = self.q1_params.clone()
        self.q2_target = self.q2_params.clone()

    def act(self, z):
        return self.actor.forward_array(z)

    def target_q_min(self, z_next, a_next):
        """Elementwise min of the target critics; TD backup value."""
        joint = np.concatenate([z_next, a_next], axis=1)
        q1 = self.q1.forward_array(joint, params=self.q1_target)
        q2 = self.q2.forward_array(joint, params=self.q2_target)
        return np.minimum(q1, q2)

    def polyak_update(self):
        self.actor_target.polyak_from(self.actor_params, self.polyak)
        self.q1_target.polyak_from(self.q1_params, self.polyak)
        self.q2_target.polyak_from(self.q2_params, self.polyak)

    def seed_targets(self):
        """Hard copy after pretraining; a rate-1 Polyak step."""
        self.actor_target.polyak_from(self.actor_params, 1.0)
        self.q1_target.polyak_from(self.q1_params, 1.0)
        self.q2_target.polyak_from(self.q2_params, 1.0)


class _RawObservationSpace:
    """Stand-in embedder for the raw-pixel reward diagnostic."""

    version = 0

    def encode(self, obs):
        return np.atleast_2d(np.asarray(obs, dtype=np.float64))


def save_checkpoint(path, tagged_sets):
    """Write several ParameterSets into one file, names prefixed by tag."""
    union = ParameterSet()
    for tag in sorted(tagged_sets):
        pset = tagged_sets[tag]
        for name in pset.names():
            union.add(f"{tag}/{name}", pset[name].value)
    union.save(path)


def load_checkpoint(path):
    union = load_parameter_set(path)
    out = {}
    for name in union.names():
        tag, _, rest = name.partition("/")
        out.setdefault(tag, ParameterSet()).add(rest, union[name].value)
    return out


def policy_from_checkpoint(path):
    """Greedy pixel-to-action policy from a saved checkpoint."""
    sets = load_checkpoint(path)
    encoder = mlp_from_params(sets["encoder"], "encoder", "relu", "tanh")
    actor = mlp_from_params(sets["actor"], "actor", "relu", "tanh")

    def policy(obs_values):
        z = encoder.forward_array(np.atleast_2d(np.asarray(obs_values, dtype=np.float64)))
        return actor.forward_array(z).ravel()

    return policy


def evaluate_policy(policy, env_id, perturbation, episodes, horizon, seed):
    """Mean/std/list of diagnostic returns over fixed-seed greedy episodes.

    Episode seeds depend only on (seed, index), so repeated evaluations of
    the same policy match exactly and learning curves stay comparable.
    """
    env = PixelEnv(env_id, perturbation, horizon)
    returns = []
    for i in range(episodes):
        ep_seed = int(stream(seed, "eval-episode", i).integers(0, 2**31 - 1))
        obs = env.reset(ep_seed)
        total = 0.0
        done = False
        while not done:
            obs, done, diag = env.step(policy(obs.values))
            total += diag
        returns.append(total)
    returns = np.array(returns)
    return float(returns.mean()), float(returns.std()), returns


class Trainer:
    """Owns all networks, the buffer, and the sequential training loop."""

    def __init__(self, cfg, dataset=None):
        self.cfg = cfg
        if dataset is None:
            if not cfg.expert_path:
                raise ConfigError("expert_path", "training requires an expert dataset")
            dataset = load_expert_dataset(cfg.expert_path)
        if len(dataset) == 0:
            raise ConfigError("expert_path", "expert dataset is empty")
        if dataset.env_id != cfg.env_id:
            raise ConfigError("env_id", f"dataset is for {dataset.env_id!r}, config says {cfg.env_id!r}")
        if dataset.horizon != cfg.horizon:
            # trajectory matching assumes equal lengths (uniform weights on both sides)
            raise ConfigError("horizon", f"dataset horizon {dataset.horizon} != configured {cfg.horizon}")
        self.dataset = dataset
        self.action_dim = dataset.action_dim
        self.perturbation = PerturbationSpec.parse(cfg.perturbation)
        self.env = PixelEnv(cfg.env_id, self.perturbation, cfg.horizon)

        self.encoder, self.inverse_model, self.target_encoder = build_representation(
            stream(cfg.seed, "net", "representation"),
            self.action_dim,
            embed_dim=cfg.embed_dim,
            sync_interval=cfg.target_sync_interval,
        )
        self.rep_params = self.encoder.params
        self.ac = ActorCritic(
            stream(cfg.seed, "net", "actor-critic"),
            cfg.embed_dim,
            self.action_dim,
            polyak=cfg.polyak,
            policy_delay=cfg.policy_delay,
        )
        self.exploration = ExplorationSpec(cfg.sigma_explore, cfg.sigma_target, cfg.noise_clip)

        reward_dim = OBS_DIM if cfg.reward_space == "pixel" else cfg.embed_dim
        self.reward_embedder = _RawObservationSpace() if cfg.reward_space == "pixel" else self.target_encoder
        self.discriminator = Discriminator(
            stream(cfg.seed, "net", "discriminator"), reward_dim, self.action_dim, lr=cfg.learning_rate
        )
        self.reward_cfg = RewardConfig(
            eta=0.0 if cfg.no_discriminator else cfg.eta,
            variant=cfg.reward_variant,
            cost_kind=cfg.cost_kind,
            r2_max=cfg.r2_max,
            sinkhorn=SinkhornConfig(
                epsilon=cfg.sinkhorn_epsilon,
                max_iterations=cfg.sinkhorn_max_iterations,
                marginal_tol=cfg.sinkhorn_marginal_tol,
            ),
        )
        self.scale_r1 = RunningScale()
        self.scale_r2 = RunningScale()
        self.inverse_weight = 0.0 if cfg.no_representation else cfg.inverse_weight

        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        for tr in dataset.trajectories:
            self.buffer.add_episode(tr, expert=True)

        self._explore_rng = stream(cfg.seed, "explore-noise")
        self._smooth_rng = stream(cfg.seed, "target-noise")
        self._batch_rng = stream(cfg.seed, "batch")
        self._disc_rng = stream(cfg.seed, "disc-batch")
        self._bc_rng = stream(cfg.seed, "bc-shuffle")

        self._expert_embs = None
        self._expert_embs_version = None
        self._critic_updates = 0
        self.bc_losses = []

    # -- embeddings for the reward machinery ------------------------------

    def expert_embeddings(self):
        """Expert trajectories under the current reward embedder, cached."""
        version = self.reward_embedder.version
        if self._expert_embs is None or version != self._expert_embs_version:
            self._expert_embs = [self.reward_embedder.encode(tr.obs) for tr in self.dataset.trajectories]
            self._expert_embs_version = version
        return self._expert_embs

    # -- acting ------------------------------------------------------------

    def select_action(self, obs_values, mode="greedy"):
        if mode not in ("greedy", "explore"):
            raise ConfigError("mode", f"must be greedy or explore, got {mode!r}")
        z = self.encoder.encode(np.atleast_2d(np.asarray(obs_values, dtype=np.float64)))
        action = self.ac.act(z).ravel()
        if mode == "explore":
            spec = self.exploration
            noise = self._explore_rng.normal(0.0, spec.sigma_explore, size=action.shape)
            action = action + np.clip(noise, -spec.clip_bound, spec.clip_bound)
        return np.clip(action, -1.0, 1.0)

    # -- pretraining ---------------------------------------------------------

    def bc_pretrain(self, epochs=None):
        """Joint actor+encoder regression onto expert actions.

        Returns the per-epoch mean losses.  The target actor and target
        encoder are re-seeded from the trained copies afterwards so the
        first TD backups and rewards see the pretrained representation.
        """
        epochs = self.cfg.bc_epochs if epochs is None else epochs
        obs = np.concatenate([tr.obs for tr in self.dataset.trajectories])
        actions = np.concatenate([tr.actions for tr in self.dataset.trajectories])
        losses = []
        for _ in range(epochs):
            order = self._bc_rng.permutation(len(obs))
            batch_losses = []
            for start in range(0, len(obs), self.cfg.batch_size):
                rows = order[start : start + self.cfg.batch_size]
                tape = Tape()
                z = self.encoder.forward(tape, obs[rows])
                pred = self.ac.actor.forward(tape, z)
                loss = mean(square(pred - Tensor(actions[rows])))
                tape.backward(loss)
                self.rep_params.adam_step(self.cfg.learning_rate)
                self.ac.actor_params.adam_step(self.cfg.learning_rate)
                batch_losses.append(loss.item())
            losses.append(float(np.mean(batch_losses)))
        self.ac.seed_targets()
        self.target_encoder.params.copy_from(self.rep_params)
        self.bc_losses = losses
        return losses

    # -- updates ---------------------------------------------------------

    def _td_targets(self, batch):
        """TD backup values; everything here is off-tape."""
        spec = self.exploration
        z_next = self.target_encoder.encode(batch["next_obs"])
        a_next = self.ac.actor.forward_array(z_next, params=self.ac.actor_target)
        noise = self._smooth_rng.normal(0.0, spec.sigma_target, size=a_next.shape)
        a_next = np.clip(a_next + np.clip(noise, -spec.clip_bound, spec.clip_bound), -1.0, 1.0)
        q_min = self.ac.target_q_min(z_next, a_next)
        backup = batch["rewards"][:, None] + self.cfg.gamma * (1.0 - batch["done"][:, None]) * q_min
        return backup

    def critic_losses(self, tape, batch):
        """Both TD losses on one tape; gradients reach the live encoder."""
        y = Tensor(self._td_targets(batch))
        z = self.encoder.forward(tape, batch["obs"])
        joint = concat(z, Tensor(batch["actions"]), axis=1)
        q1 = self.ac.q1.forward(tape, joint)
        q2 = self.ac.q2.forward(tape, joint)
        return mean(square(q1 - y)), mean(square(q2 - y))

    def critic_update(self, batch):
        """Critic-only step (the no-representation reduction of the joint one)."""
        tape = Tape()
        l1, l2 = self.critic_losses(tape, batch)
        tape.backward(l1 + l2)
        self.rep_params.adam_step(self.cfg.learning_rate)
        self.ac.q1_params.adam_step(self.cfg.learning_rate)
        self.ac.q2_params.adam_step(self.cfg.learning_rate)
        self._critic_updates += 1
        return l1.item(), l2.item()

    def joint_update(self, batch_rl=None, batch_inv=None):
        """One backward pass over critic TD losses plus the inverse term.

        Returns (critic loss sum, inverse loss or nan).  With inverse
        weight 0 the inverse branch is skipped entirely.
        """
        if batch_rl is None:
            batch_rl = self.buffer.sample_td(self._batch_rng, self.cfg.batch_size)
        tape = Tape()
        l1, l2 = self.critic_losses(tape, batch_rl)
        total = l1 + l2
        l_inv_val = float("nan")
        if self.inverse_weight > 0.0:
            if batch_inv is None:
                batch_inv = self.buffer.sample_inverse(self._batch_rng, self.cfg.batch_size)
            obs_t, act, obs_next = batch_inv
            l_inv = inverse_dynamics_loss(tape, self.encoder, self.inverse_model, obs_t, act, obs_next)
            total = total + scale(l_inv, self.inverse_weight)
            l_inv_val = l_inv.item()
        tape.backward(total)
        self.rep_params.adam_step(self.cfg.learning_rate)
        self.ac.q1_params.adam_step(self.cfg.learning_rate)
        self.ac.q2_params.adam_step(self.cfg.learning_rate)
        self._critic_updates += 1
        return l1.item() + l2.item(), l_inv_val

    def actor_update(self, batch=None):
        """Deterministic policy gradient step plus Polyak target refresh.

        The embedding is computed off-tape, so no gradient reaches the
        encoder; the critic is entered frozen, so only actor parameters
        move.
        """
        if batch is None:
            batch = self.buffer.sample_td(self._batch_rng, self.cfg.batch_size)
        z = self.encoder.encode(batch["obs"])
        tape = Tape()
        zt = Tensor(z)
        a = self.ac.actor.forward(tape, zt)
        q = self.ac.q1.forward(tape, concat(zt, a, axis=1), frozen=True)
        loss = scale(mean(q), -1.0)
        tape.backward(loss)
        self.ac.actor_params.adam_step(self.cfg.learning_rate)
        self.ac.polyak_update()
        return loss.item()

    def discriminator_update(self):
        half = max(1, self.cfg.batch_size // 2)
        expert_obs, expert_act = self.buffer.sample_pairs(self._disc_rng, half, expert=True)
        agent_obs, agent_act = self.buffer.sample_pairs(self._disc_rng, half, expert=False)
        return self.discriminator.update(
            self.reward_embedder.encode(expert_obs),
            expert_act,
            self.reward_embedder.encode(agent_obs),
            agent_act,
        )

    # -- episode scoring ---------------------------------------------------

    def score_episode(self, trajectory):
        """Imitative rewards for one finished episode, ready for storage.

        Each stream is standardized by its own running scale before the
        eta-weighted combination, so neither dominates purely by units.
        """
        ep = episode_rewards(
            trajectory, self.reward_embedder, self.discriminator, self.reward_cfg, self.expert_embeddings()
        )
        r1 = self.scale_r1.apply(ep.r1)
        r2 = self.scale_r2.apply(ep.r2)
        stored = r1 + self.reward_cfg.eta * r2
        return stored, ep

    def evaluate(self):
        def policy(obs_values):
            return self.select_action(obs_values, mode="greedy")

        return evaluate_policy(
            policy,
            self.cfg.env_id,
            self.perturbation,
            self.cfg.eval_episodes,
            self.cfg.horizon,
            self.cfg.seed,
        )

    def checkpoint(self, path):
        save_checkpoint(
            path,
            {
                "encoder": self.rep_params,
                "actor": self.ac.actor_params,
                "critic1": self.ac.q1_params,
                "critic2": self.ac.q2_params,
                "discriminator": self.discriminator.params,
                "target_encoder": self.target_encoder.params,
                "target_actor": self.ac.actor_target,
                "target_critic1": self.ac.q1_target,
                "target_critic2": self.ac.q2_target,
            },
        )

    # -- the loop ----------------------------------------------------------

    def run(self, out_dir=None):
        """Full training run; returns a summary of artifact paths and finals."""
        cfg = self.cfg
        out_dir = out_dir or cfg.out_dir or "."
        os.makedirs(out_dir, exist_ok=True)
        # snapshot records where the artifacts actually went
        save_config(replace(cfg, out_dir=out_dir), os.path.join(out_dir, "config.txt"))
        csv_path = os.path.join(out_dir, "training_log.csv")
        bc_ckpt = os.path.join(out_dir, "checkpoint_bc.bin")
        final_ckpt = os.path.join(out_dir, "checkpoint_final.bin")

        if cfg.bc_epochs > 0:
            self.bc_pretrain(cfg.bc_epochs)
        self.target_encoder.sync(0)
        self.checkpoint(bc_ckpt)

        log = open(csv_path, "w", newline="")
        writer = csv.writer(log)
        writer.writerow(LOG_COLUMNS)
        acc = {key: [] for key in ("l_inv", "l_critic", "l_actor", "l_d", "r1", "r2", "iters")}
        eval_history = []
        episode_idx = 0

        def write_row(step):
            mean_of = lambda xs: float(np.mean(xs)) if xs else float("nan")
            ev_mean, ev_std, _ = self.evaluate()
            eval_history.append((step, ev_mean, ev_std))
            writer.writerow(
                [
                    step,
                    episode_idx,
                    f"{ev_mean:.10g}",
                    f"{ev_std:.10g}",
                    f"{mean_of(acc['l_inv']):.10g}",
                    f"{mean_of(acc['l_critic']):.10g}",
                    f"{mean_of(acc['l_actor']):.10g}",
                    f"{mean_of(acc['l_d']):.10g}",
                    f"{mean_of(acc['r1']):.10g}",
                    f"{mean_of(acc['r2']):.10g}",
                    f"{mean_of(acc['iters']):.10g}",
                ]
            )
            log.flush()
            for xs in acc.values():
                xs.clear()

        step = 0
        try:
            if cfg.total_steps > 0:
                write_row(0)
                obs = self.env.reset(self._episode_seed(episode_idx))
                ep_obs, ep_act = [obs.values], []
                while step < cfg.total_steps:
                    action = self.select_action(obs.values, mode="explore")
                    obs, done, _ = self.env.step(action)
                    ep_obs.append(obs.values)
                    ep_act.append(action)
                    step += 1

                    if done:
                        trajectory = Trajectory(np.array(ep_obs), np.array(ep_act))
                        stored, ep_info = self.score_episode(trajectory)
                        self.buffer.add_episode(trajectory, rewards=stored)
                        acc["r1"].append(float(ep_info.r1.mean()))
                        acc["r2"].append(float(ep_info.r2.mean()))
                        acc["iters"].append(float(ep_info.sinkhorn_iterations))
                        episode_idx += 1
                        obs = self.env.reset(self._episode_seed(episode_idx))
                        ep_obs, ep_act = [obs.values], []

                    if self.buffer.agent_transitions >= cfg.batch_size and step % cfg.update_every == 0:
                        l_critic, l_inv = self.joint_update()
                        acc["l_critic"].append(l_critic)
                        if np.isfinite(l_inv):
                            acc["l_inv"].append(l_inv)
                        if not cfg.no_discriminator:
                            acc["l_d"].append(self.discriminator_update())
                        if self._critic_updates % self.ac.policy_delay == 0:
                            acc["l_actor"].append(self.actor_update())

                    self.target_encoder.sync(step)
                    if step % cfg.eval_interval == 0 or step == cfg.total_steps:
                        write_row(step)
        except Exception:
            # leave enough on disk to debug a dead run
            self.checkpoint(os.path.join(out_dir, "checkpoint_abort.bin"))
            log.close()
            raise

        log.close()
        self.checkpoint(final_ckpt)
        return {
            "csv": csv_path,
            "checkpoint_bc": bc_ckpt,
            "checkpoint_final": final_ckpt,
            "eval_history": eval_history,
            "final_eval_mean": eval_history[-1][1] if eval_history else float("nan"),
            "final_eval_std": eval_history[-1][2] if eval_history else float("nan"),
            "episodes": episode_idx,
            "steps": step,
        }

    def _episode_seed(self, index):
        return int(stream(self.cfg.seed, "train-episode", index).integers(0, 2**31 - 1))


def train(cfg, dataset=None, out_dir=None):
    """Build a Trainer from the config and run it to completion."""
    trainer = Trainer(cfg, dataset)
    return trainer.run(out_dir)
