"""Actor-critic policy over a shared encoder and the PPO training loop.

The policy runs one of the three encoders into a shared latent, then two
independent 3-way categorical heads (move, rotate) and a scalar value head.
Rollouts are collected from W playground instances stepped in lockstep so
encoder forwards batch across workers; updates use the clipped-surrogate
objective with GAE advantages.

Within the RL loop all encoders run deterministically (slot attention uses
its eval-mode initialization) so importance ratios are exact: on the first
minibatch pass of an update, new log-probs equal stored ones bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import PPOConfig, RunConfig, save_config
from .encoders import CNNStripEncoder, GATEncoder, SlotAttentionEncoder
from .nn import Adam, ParamDict, clip_grad_norm, linear_params, load_checkpoint, save_checkpoint
from .playground import Action, Playground, ScenarioSpec
from .render import save_frame
from .sensors import GraphObs, build_graph, sense_entities, sense_visual

MAX_GRAD_NORM = 0.5
METRICS_COLUMNS = ("env_steps", "mean_episode_reward", "policy_loss",
                   "value_loss", "entropy", "clip_fraction", "approx_kl")


class TrainAbort(RuntimeError):
    """Raised when an update produces a non-finite loss."""


def observation_dim(cfg: RunConfig, spec: ScenarioSpec) -> int:
    """Feature width the configured encoder will see."""
    base = len(spec.kinds) + 3 + (1 if cfg.sensor.include_walls else 0)
    if cfg.encoder == "slot":
        return base
    if cfg.encoder == "gnn":
        return base + (1 if cfg.graph.agent_node else 0)
    return 4  # cnn channels


def observe(pg: Playground, cfg: RunConfig):
    """Produce the modality observation the configured encoder consumes."""
    if cfg.encoder == "cnn":
        return sense_visual(pg, cfg.sensor.rays, cfg.sensor.range).as_channels()
    entity_set = sense_entities(pg, cfg.sensor.range, cfg.sensor.occlusion,
                                cfg.sensor.include_walls)
    if cfg.encoder == "slot":
        return entity_set.features
    return build_graph(entity_set, cfg.graph.mode, cfg.graph.k,
                       cfg.graph.agent_node, cfg.graph.self_loops)


def make_encoder(cfg: RunConfig, rng: np.random.Generator, in_dim: int):
    from .config import parse_int_list

    if cfg.encoder == "cnn":
        return CNNStripEncoder(
            rng, in_channels=4, length=cfg.sensor.rays,
            channels=parse_int_list(cfg.cnn.channels, "cnn.channels"),
            kernels=parse_int_list(cfg.cnn.kernels, "cnn.kernels"),
            strides=parse_int_list(cfg.cnn.strides, "cnn.strides"),
            fc=cfg.cnn.fc, latent_dim=cfg.latent_dim)
    if cfg.encoder == "slot":
        return SlotAttentionEncoder(rng, in_dim, slots=cfg.slots.k, iters=cfg.slots.t,
                                    dim=cfg.slots.dim, mlp_hidden=cfg.slots.mlp_hidden,
                                    latent_dim=cfg.latent_dim)
    if cfg.encoder == "gnn":
        return GATEncoder(rng, in_dim, layers=cfg.gat.layers, heads=cfg.gat.heads,
                          hidden=cfg.gat.hidden, latent_dim=cfg.latent_dim,
                          edge_kinds=cfg.gat.edge_kinds)
    raise ValueError(f"unknown encoder {cfg.encoder!r}")


class PolicyNet:
    """Shared-latent actor-critic with two 3-way heads plus a value head."""

    def __init__(self, encoder, rng: np.random.Generator, latent_dim: int | None = None):
        self.encoder = encoder
        self.latent_dim = latent_dim or encoder.latent_dim
        self.params = ParamDict()
        for name, p in encoder.params.items():
            self.params.add(name, p)
        for head in ("move", "rotate"):
            w, b = linear_params(rng, self.latent_dim, 3)
            self.params.add(f"head.{head}.w", w)
            self.params.add(f"head.{head}.b", b)
        w, b = linear_params(rng, self.latent_dim, 1)
        self.params.add("head.value.w", w)
        self.params.add("head.value.b", b)

    def _check_modality(self, obs) -> None:
        kind = self.encoder.kind
        if kind == "gnn" and not isinstance(obs, GraphObs):
            raise TypeError(f"gnn policy expects GraphObs, got {type(obs).__name__}")
        if kind in ("slot", "cnn") and isinstance(obs, GraphObs):
            raise TypeError(f"{kind} policy expects arrays, got GraphObs")

    def forward_batch(self, obs_list) -> tuple[T.Categorical, T.Categorical, T.Tensor]:
        self._check_modality(obs_list[0])
        latent = self.encoder.encode_batch(obs_list)
        move = T.Categorical(T.add(T.matmul(latent, self.params["head.move.w"]),
                                   self.params["head.move.b"]))
        rotate = T.Categorical(T.add(T.matmul(latent, self.params["head.rotate.w"]),
                                     self.params["head.rotate.b"]))
        value = T.add(T.matmul(latent, self.params["head.value.w"]),
                      self.params["head.value.b"])[:, 0]
        return move, rotate, value

    def act_batch(self, obs_list, rng: np.random.Generator | None, mode: str = "sample"):
        """Frozen-parameter action selection for rollouts and evaluation."""
        if mode not in ("sample", "greedy"):
            raise ValueError(f"mode must be 'sample' or 'greedy', got {mode!r}")
        with T.no_grad():
            move, rotate, value = self.forward_batch(obs_list)
            if mode == "greedy":
                m_idx, r_idx = move.greedy(), rotate.greedy()
            else:
                m_idx, r_idx = move.sample(rng), rotate.sample(rng)
            log_prob = move.log_prob(m_idx).data + rotate.log_prob(r_idx).data
        actions = [Action(int(m) - 1, int(r) - 1) for m, r in zip(m_idx, r_idx)]
        return actions, log_prob.astype(np.float64), value.data.astype(np.float64)

    def act(self, obs, rng: np.random.Generator | None = None, mode: str = "sample"):
        """Single observation -> (Action, joint log-prob, value estimate)."""
        actions, log_probs, values = self.act_batch([obs], rng, mode)
        return actions[0], float(log_probs[0]), float(values[0])

    def evaluate_actions(self, obs_list, action_indices: np.ndarray):
        """Differentiable (log_prob, entropy, value) for an update minibatch."""
        move, rotate, value = self.forward_batch(obs_list)
        log_prob = T.add(move.log_prob(action_indices[:, 0]),
                         rotate.log_prob(action_indices[:, 1]))
        entropy = T.add(move.entropy(), rotate.entropy())
        return log_prob, entropy, value

    def num_params(self) -> int:
        return self.params.num_params()


def make_policy(cfg: RunConfig, seed_seq: np.random.SeedSequence | int) -> PolicyNet:
    if isinstance(seed_seq, int):
        seed_seq = np.random.SeedSequence(seed_seq)
    rng = np.random.default_rng(seed_seq)
    spec = ScenarioSpec.from_config(cfg)
    encoder = make_encoder(cfg, rng, observation_dim(cfg, spec))
    return PolicyNet(encoder, rng, cfg.latent_dim)


# -- GAE -----------------------------------------------------------------------

def compute_gae(rewards, values, dones, bootstrap_value, gamma: float, lam: float):
    """Generalized advantage estimation over (T,) or (T, W) arrays.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
    A_t = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    Returns raw (advantages, returns); normalization is the caller's choice.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must have equal shapes")
    horizon = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    gae = np.zeros_like(next_value, dtype=np.float64)
    for t in range(horizon - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        advantages[t] = gae
        next_value = values[t]
    return advantages, advantages + values


# -- rollouts --------------------------------------------------------------------

@dataclass
class RolloutBuffer:
    """Flattened (time-major) trajectories from W equal-length segments."""

    observations: list
    actions: np.ndarray      # (T*W, 2) head indices in {0,1,2}
    log_probs: np.ndarray    # (T*W,)
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    horizon: int
    workers: int
    bootstrap_values: np.ndarray  # (W,)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.horizon * self.workers

    def finalize(self, gamma: float, lam: float, normalize: bool) -> None:
        shape = (self.horizon, self.workers)
        adv, ret = compute_gae(self.rewards.reshape(shape), self.values.reshape(shape),
                               self.dones.reshape(shape), self.bootstrap_values, gamma, lam)
        adv = adv.reshape(-1)
        if normalize and adv.size > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        self.advantages = adv
        self.returns = ret.reshape(-1)


def collect_rollouts(policy: PolicyNet, playgrounds: list[Playground], horizon: int,
                     rng: np.random.Generator, cfg: RunConfig,
                     reset_rng: np.random.Generator | None = None) -> RolloutBuffer:
    """Step W playgrounds in lockstep for `horizon` steps under frozen params."""
    workers = len(playgrounds)
    if workers < 1:
        raise ValueError("need at least one playground")
    reset_rng = reset_rng or rng
    observations: list = []
    actions = np.zeros((horizon, workers, 2), dtype=np.int64)
    log_probs = np.zeros((horizon, workers))
    values = np.zeros((horizon, workers))
    rewards = np.zeros((horizon, workers))
    dones = np.zeros((horizon, workers))
    for t in range(horizon):
        obs_list = [observe(pg, cfg) for pg in playgrounds]
        observations.extend(obs_list)
        acts, lp, val = policy.act_batch(obs_list, rng, "sample")
        log_probs[t] = lp
        values[t] = val
        for w, pg in enumerate(playgrounds):
            actions[t, w] = (acts[w].move + 1, acts[w].rotate + 1)
            result = pg.step(acts[w])
            rewards[t, w] = result.reward
            dones[t, w] = float(result.done)
            if result.done:
                pg.reset(int(reset_rng.integers(0, 2**62)))
    final_obs = [observe(pg, cfg) for pg in playgrounds]
    _, _, bootstrap = policy.act_batch(final_obs, rng, "greedy")
    return RolloutBuffer(
        observations=observations,
        actions=actions.reshape(-1, 2),
        log_probs=log_probs.reshape(-1),
        values=values.reshape(-1),
        rewards=rewards.reshape(-1),
        dones=dones.reshape(-1),
        horizon=horizon,
        workers=workers,
        bootstrap_values=bootstrap,
    )


# -- updates ----------------------------------------------------------------------

@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad_norm: float = 0.0

    @classmethod
    def mean(cls, items: list["UpdateStats"]) -> "UpdateStats":
        if not items:
            return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        return cls(*(float(np.mean([getattr(s, f) for s in items]))
                     for f in ("policy_loss", "value_loss", "entropy",
                               "clip_fraction", "approx_kl", "grad_norm")))


def ppo_update(policy: PolicyNet, buffer: RolloutBuffer, cfg: PPOConfig,
               optimizer: Adam, rng: np.random.Generator) -> UpdateStats:
    """Clipped-surrogate epochs over shuffled minibatches.

    loss = -E[min(rho * A, clip(rho, 1-eps, 1+eps) * A)]
           + value_coef * E[(V - returns)^2] - entropy_coef * E[H]
    """
    if buffer.advantages is None:
        raise ValueError("buffer.finalize() must run before ppo_update()")
    total = len(buffer)
    mb_size = min(cfg.minibatch_size, total)
    stats: list[UpdateStats] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(total)
        for start in range(0, total, mb_size):
            idx = order[start:start + mb_size]
            obs = [buffer.observations[i] for i in idx]
            adv = buffer.advantages[idx].astype(T.get_default_dtype())
            old_lp = buffer.log_probs[idx]
            new_lp, entropy, value = policy.evaluate_actions(obs, buffer.actions[idx])
            ratio = T.exp(T.sub(new_lp, T.Tensor(old_lp.astype(T.get_default_dtype()))))
            adv_t = T.Tensor(adv)
            surr = T.minimum(T.mul(ratio, adv_t),
                             T.mul(T.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_t))
            policy_loss = T.mul(T.mean(surr), -1.0)
            returns = T.Tensor(buffer.returns[idx].astype(T.get_default_dtype()))
            err = T.sub(value, returns)
            value_loss = T.mean(T.mul(err, err))
            entropy_mean = T.mean(entropy)
            loss = T.sub(T.add(policy_loss, T.mul(value_loss, cfg.value_coef)),
                         T.mul(entropy_mean, cfg.entropy_coef))
            if not np.isfinite(loss.data):
                raise TrainAbort(
                    f"non-finite loss (policy={policy_loss.data}, value={value_loss.data}, "
                    f"entropy={entropy_mean.data}); update aborted")
            policy.params.zero_grad()
            loss.backward()
            grad_norm = clip_grad_norm(policy.params, MAX_GRAD_NORM)
            optimizer.step()
            ratio_np = ratio.data.astype(np.float64)
            stats.append(UpdateStats(
                policy_loss=float(policy_loss.data),
                value_loss=float(value_loss.data),
                entropy=float(entropy_mean.data),
                clip_fraction=float(np.mean(np.abs(ratio_np - 1.0) > cfg.clip_eps)),
                approx_kl=float(np.mean((ratio_np - 1.0) - np.log(np.maximum(ratio_np, 1e-12)))),
                grad_norm=grad_norm,
            ))
    return UpdateStats.mean(stats)


# -- evaluation --------------------------------------------------------------------

def run_episode(policy: PolicyNet, pg: Playground, cfg: RunConfig, greedy: bool = True,
                rng: np.random.Generator | None = None, render_dir=None,
                event_rows: list | None = None, action_log: list | None = None) -> float:
    """Play one full episode; returns the cumulative reward."""
    total = 0.0
    index = 0
    if render_dir is not None:
        save_frame(pg, render_dir, index)
    while not pg.done:
        action, _, _ = policy.act(observe(pg, cfg), rng, "greedy" if greedy else "sample")
        result = pg.step(action)
        total += result.reward
        if action_log is not None:
            action_log.append(action)
        if event_rows is not None:
            event_rows.extend((pg.step_count - 1, ev) for ev in result.events)
        index += 1
        if render_dir is not None:
            save_frame(pg, render_dir, index)
    return total


def evaluate(policy: PolicyNet, cfg: RunConfig, episodes: int, seed_base: int,
             greedy: bool = True, rng: np.random.Generator | None = None) -> tuple[float, list[float]]:
    """Mean episode reward over `episodes` fresh-seeded episodes.

    Episodes share the fixed scenario length, so they run in lockstep and
    the policy forward batches across them.
    """
    spec = ScenarioSpec.from_config(cfg)
    pgs = [Playground(spec, seed_base + ep) for ep in range(episodes)]
    totals = np.zeros(episodes)
    mode = "greedy" if greedy else "sample"
    while not pgs[0].done:
        obs = [observe(pg, cfg) for pg in pgs]
        actions, _, _ = policy.act_batch(obs, rng, mode)
        for i, pg in enumerate(pgs):
            totals[i] += pg.step(actions[i]).reward
    return float(np.mean(totals)), totals.tolist()


def evaluate_random(cfg: RunConfig, episodes: int, seed_base: int) -> float:
    """Uniform-random-policy baseline reward on the configured scenario."""
    spec = ScenarioSpec.from_config(cfg)
    totals = []
    for ep in range(episodes):
        pg = Playground(spec, seed_base + ep)
        act_rng = np.random.default_rng(seed_base + 10_000 + ep)
        total = 0.0
        while not pg.done:
            action = Action(int(act_rng.integers(-1, 2)), int(act_rng.integers(-1, 2)))
            total += pg.step(action).reward
        totals.append(total)
    return float(np.mean(totals))


# -- training loop -------------------------------------------------------------------

@dataclass
class TrainResult:
    env_steps: int
    mean_reward: float
    checkpoint_path: Path
    metrics_path: Path
    history: list[dict] = field(default_factory=list)


def train(cfg: RunConfig, out_dir: str | Path, total_steps: int | None = None,
          log=None) -> TrainResult:
    """collect -> GAE -> update until total_steps; periodic greedy evals.

    Writes metrics.csv, numbered checkpoints plus checkpoint_final.erlw
    (each with a sidecar .cfg), and the resolved run config. On a NaN abort
    the last written checkpoint is retained and TrainAbort propagates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total_steps = cfg.steps if total_steps is None else total_steps
    cfg.steps = total_steps
    cfg.validate()
    save_config(cfg, out / "config.cfg")

    seeds = np.random.SeedSequence(cfg.seed)
    policy_seed, env_seed, action_seed, shuffle_seed, reset_seed, eval_seed = seeds.spawn(6)
    policy = make_policy(cfg, policy_seed)
    optimizer = Adam(policy.params, lr=cfg.ppo.lr)
    action_rng = np.random.default_rng(action_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    reset_rng = np.random.default_rng(reset_seed)
    eval_seed_base = int(np.random.default_rng(eval_seed).integers(0, 2**31))

    spec = ScenarioSpec.from_config(cfg)
    env_rng = np.random.default_rng(env_seed)
    playgrounds = [Playground(spec, int(env_rng.integers(0, 2**62)))
                   for _ in range(cfg.ppo.workers)]

    metrics_path = out / "metrics.csv"
    history: list[dict] = []
    env_steps = 0
    last_stats: UpdateStats | None = None

    def checkpoint(name: str) -> Path:
        path = out / name
        save_checkpoint(path, policy.params)
        save_config(cfg, Path(str(path) + ".cfg"))
        return path

    def record() -> float:
        mean_reward, _ = evaluate(policy, cfg, cfg.train.eval_episodes, eval_seed_base)
        row = {
            "env_steps": env_steps,
            "mean_episode_reward": mean_reward,
            "policy_loss": last_stats.policy_loss if last_stats else math.nan,
            "value_loss": last_stats.value_loss if last_stats else math.nan,
            "entropy": last_stats.entropy if last_stats else math.nan,
            "clip_fraction": last_stats.clip_fraction if last_stats else math.nan,
            "approx_kl": last_stats.approx_kl if last_stats else math.nan,
        }
        history.append(row)
        with open(metrics_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
            writer.writeheader()
            writer.writerows(history)
        if log:
            log(f"steps={env_steps} eval_reward={mean_reward:.2f}")
        return mean_reward

    mean_reward = record()
    checkpoint(f"checkpoint_{env_steps}.erlw")
    next_eval = cfg.train.eval_interval
    while env_steps < total_steps:
        buffer = collect_rollouts(policy, playgrounds, cfg.ppo.horizon,
                                  action_rng, cfg, reset_rng)
        buffer.finalize(cfg.ppo.gamma, cfg.ppo.lam, cfg.ppo.normalize_advantages)
        last_stats = ppo_update(policy, buffer, cfg.ppo, optimizer, shuffle_rng)
        env_steps += len(buffer)
        if env_steps >= next_eval or env_steps >= total_steps:
            mean_reward = record()
            checkpoint(f"checkpoint_{env_steps}.erlw")
            while next_eval <= env_steps:
                next_eval += cfg.train.eval_interval
    final = checkpoint("checkpoint_final.erlw")
    return TrainResult(env_steps=env_steps, mean_reward=mean_reward,
                       checkpoint_path=final, metrics_path=metrics_path, history=history)


def load_policy(checkpoint_path: str | Path, cfg: RunConfig | None = None) -> tuple[PolicyNet, RunConfig]:
    """Rebuild a policy from a checkpoint plus its sidecar config."""
    from .config import load_config

    path = Path(checkpoint_path)
    if cfg is None:
        sidecar = Path(str(path) + ".cfg")
        if not sidecar.exists():
            sidecar = path.parent / "config.cfg"
        if not sidecar.exists():
            raise FileNotFoundError(
                f"no config found for {path} (looked for {path.name}.cfg and config.cfg)")
        cfg = load_config(sidecar)
    policy = make_policy(cfg, cfg.seed)
    policy.params.load_values(load_checkpoint(path))
    return policy, cfg
