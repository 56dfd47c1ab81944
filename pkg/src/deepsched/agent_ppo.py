"""1L PPO agent with PF-expert guidance through a Jensen-Shannon imitation loss."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .neuralnet import (Adam, DenseNet, masked_log_softmax, masked_softmax, pack_bundle,
                        softmax_backward)

LN2 = np.log(2.0)


def reward_ppo(g, g_max, v, layer, k):
    """Layer 1 (1-based) earns the normalized geomean times v_m; deeper layers k * v_m."""
    if g_max <= 0:
        raise ValueError("G_max must be positive")
    if layer == 1:
        return (g / g_max) * v
    return k * v


def gae(rewards, values, gamma, lam):
    """Generalized advantage estimation; `values` carries one bootstrap entry."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.size != rewards.size + 1:
        raise ValueError("values must have len(rewards) + 1 entries")
    adv = np.zeros_like(rewards)
    running = 0.0
    for t in reversed(range(rewards.size)):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + values[:-1]


def sample_branches(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per branch; probs (..., A)."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cdf[..., -1:]
    return np.argmax(cdf > u, axis=-1)


def jsd(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Jensen-Shannon divergence in bits along the last axis (0 * log 0 = 0)."""
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = np.where(p > 0, p * np.log(p / m), 0.0)
        tq = np.where(q > 0, q * np.log(q / m), 0.0)
    return 0.5 * (tp.sum(axis=-1) + tq.sum(axis=-1)) / LN2


def smooth_expert(onehot: np.ndarray, mask: np.ndarray, eta: float) -> np.ndarray:
    """Mix expert labels with the uniform distribution over valid actions."""
    mask = np.asarray(mask, dtype=bool)
    uniform = mask / mask.sum(axis=-1, keepdims=True)
    return (1.0 - eta) * onehot + eta * uniform


def jsd_loss(logits, masks, expert_probs):
    """Mean JSD over samples and branches and its gradient w.r.t. logits.

    logits: (B, nb*A); masks/expert_probs: (B, nb, A).
    """
    masks = np.asarray(masks, dtype=bool)
    b, nb, a = masks.shape
    p = masked_softmax(logits.reshape(b, nb, a), masks)
    q = expert_probs
    loss = jsd(p, q).mean()
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = np.where(p > 0, 0.5 * np.log(p / m) / LN2, 0.0)
    grad = softmax_backward(p, dp) / (b * nb)
    return loss, grad.reshape(b, nb * a)


@dataclass
class PpoLosses:
    value: float
    policy: float
    entropy: float
    total: float
    d_logits: np.ndarray = field(repr=False)     # gradient of total w.r.t. actor output
    d_values: np.ndarray = field(repr=False)     # gradient of total w.r.t. critic output


def ppo_losses(logits, values, masks, actions, logp_old, advantages, returns,
               clip_eps=0.2, entropy_coef=0.01) -> PpoLosses:
    """L_PPO = L_value - L_policy - xi * L_entropy with gradients.

    logits (B, nb*A), values (B,), masks (B, nb, A), actions (B, nb).
    """
    masks = np.asarray(masks, dtype=bool)
    b, nb, a = masks.shape
    z = logits.reshape(b, nb, a)
    p = masked_softmax(z, masks)
    logp_all = masked_log_softmax(z, masks)
    logp = np.take_along_axis(logp_all, actions[..., None], axis=-1)[..., 0].sum(axis=1)

    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_term = ratio * advantages
    clipped_term = clipped * advantages
    l_policy = np.minimum(unclipped_term, clipped_term).mean()
    # d/dlogp of the surrogate; zero where the clipped branch binds
    d_surr = np.where(unclipped_term <= clipped_term, unclipped_term, 0.0) / b

    ent = -(p * logp_all).sum(axis=(1, 2))
    l_entropy = ent.mean()

    diff = values - returns
    l_value = 0.5 * np.mean(diff ** 2)

    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
    d_logp_d_z = np.where(masks, onehot - p, 0.0)
    d_policy = d_surr[:, None, None] * d_logp_d_z
    d_ent = softmax_backward(p, -(logp_all + 1.0)) / b
    d_logits = -(d_policy + entropy_coef * d_ent)
    total = l_value - l_policy - entropy_coef * l_entropy
    return PpoLosses(l_value, l_policy, l_entropy, total, d_logits.reshape(b, nb * a), diff / b)


@dataclass
class PpoTransition:
    state: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    logp_old: float
    value: float
    reward: float = 0.0
    next_value: float = 0.0
    stream: int = 0
    copies: list = field(default_factory=list)   # (state, masks, actions, logp_old)


class EmptyBufferError(RuntimeError):
    pass


class PpoAgent:
    def __init__(self, state_dim: int, n_branches: int, n_actions: int,
                 tcfg: TrainConfig | None = None, rng: np.random.Generator | None = None):
        self.tcfg = tcfg = tcfg or TrainConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim, self.n_branches, self.n_actions = state_dim, n_branches, n_actions
        hidden = list(tcfg.hidden)
        self.actor = DenseNet([state_dim, *hidden, n_branches * n_actions],
                              branches=[n_actions] * n_branches, rng=self.rng)
        self.critic = DenseNet([state_dim, *hidden, 1], rng=self.rng)
        self.actor_opt = Adam(self.actor.params(), lr=tcfg.actor_lr)
        self.critic_opt = Adam(self.critic.params(), lr=tcfg.ppo_critic_lr)
        jsd_lr = tcfg.actor_lr if tcfg.jsd_lr is None else tcfg.jsd_lr
        self.jsd_opt = Adam(self.actor.params(), lr=jsd_lr)
        self.buffer: list[PpoTransition] = []
        self.expert = deque(maxlen=tcfg.expert_capacity)
        self.g_max = np.finfo(float).eps
        self.history: list[dict] = []

    # ---- acting --------------------------------------------------------
    def probs(self, states: np.ndarray, masks: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        b = states.shape[0]
        logits = self.actor.forward(states).reshape(b, self.n_branches, self.n_actions)
        return masked_softmax(logits, masks.reshape(b, self.n_branches, self.n_actions))

    def act(self, states, masks, greedy: bool = False):
        """Per-branch actions (B, nb) and joint log-probabilities (B,)."""
        states = np.atleast_2d(states)
        masks = np.asarray(masks, dtype=bool).reshape(states.shape[0], self.n_branches, self.n_actions)
        p = self.probs(states, masks)
        if greedy:
            acts = np.argmax(np.where(masks, p, -1.0), axis=-1)
        else:
            acts = sample_branches(p, self.rng)
        chosen = np.take_along_axis(p, acts[..., None], axis=-1)[..., 0]
        return acts, np.log(chosen).sum(axis=1)

    def log_prob(self, state, masks, actions) -> float:
        p = self.probs(state, masks)[0]
        return float(np.log(p[np.arange(self.n_branches), actions]).sum())

    def value(self, states) -> np.ndarray:
        return self.critic.forward(np.atleast_2d(states))[:, 0]

    # ---- buffers -------------------------------------------------------
    def observe_geomean(self, g: float) -> float:
        self.g_max = max(self.g_max, g)
        return self.g_max

    def store(self, tr: PpoTransition) -> None:
        self.buffer.append(tr)

    def store_expert(self, state, masks, expert_probs) -> None:
        self.expert.append((np.asarray(state), np.asarray(masks, dtype=bool),
                            np.asarray(expert_probs, dtype=np.float64)))

    def ready(self) -> bool:
        return len(self.buffer) >= self.tcfg.ppo_batch

    # ---- updates -------------------------------------------------------
    def _advantages(self):
        tcfg = self.tcfg
        adv = np.zeros(len(self.buffer))
        ret = np.zeros(len(self.buffer))
        streams: dict[int, list[int]] = {}
        for i, tr in enumerate(self.buffer):
            streams.setdefault(tr.stream, []).append(i)
        for idx in streams.values():
            rewards = [self.buffer[i].reward for i in idx]
            values = [self.buffer[i].value for i in idx] + [self.buffer[idx[-1]].next_value]
            a, r = gae(rewards, values, tcfg.gamma_ppo, tcfg.gae_lambda)
            adv[idx] = a
            ret[idx] = r
        return adv, ret

    def ppo_update(self) -> PpoLosses:
        if not self.buffer:
            raise EmptyBufferError("agent buffer is empty; collect transitions before updating")
        adv, ret = self._advantages()
        states, masks, actions, logp_old, a_rows, r_rows = [], [], [], [], [], []
        for tr, a, r in zip(self.buffer, adv, ret):
            rows = [(tr.state, tr.masks, tr.actions, tr.logp_old)] + list(tr.copies)
            for s, mk, ac, lp in rows:
                states.append(s)
                masks.append(mk)
                actions.append(ac)
                logp_old.append(lp)
                a_rows.append(a)
                r_rows.append(r)
        states = np.asarray(states)
        b = states.shape[0]
        masks = np.asarray(masks, dtype=bool).reshape(b, self.n_branches, self.n_actions)
        actions = np.asarray(actions, dtype=np.int64).reshape(b, self.n_branches)
        logits = self.actor.forward(states)
        values = self.critic.forward(states)[:, 0]
        losses = ppo_losses(logits, values, masks, actions, np.asarray(logp_old),
                            np.asarray(a_rows), np.asarray(r_rows),
                            self.tcfg.clip_eps, self.tcfg.entropy_coef)
        self.actor_opt.step(self.actor.backward(losses.d_logits))
        self.critic_opt.step(self.critic.backward(losses.d_values[:, None]))
        self.buffer.clear()
        return losses

    def jsd_update(self) -> float | None:
        if not self.expert:
            return None
        n = len(self.expert)
        k = min(self.tcfg.jsd_batch, n)
        idx = self.rng.choice(n, size=k, replace=False)
        states = np.asarray([self.expert[i][0] for i in idx])
        masks = np.asarray([self.expert[i][1] for i in idx]).reshape(k, self.n_branches, self.n_actions)
        labels = np.asarray([self.expert[i][2] for i in idx]).reshape(k, self.n_branches, self.n_actions)
        q = smooth_expert(labels, masks, self.tcfg.expert_smoothing)
        logits = self.actor.forward(states)
        loss, grad = jsd_loss(logits, masks, q)
        self.jsd_opt.step(self.actor.backward(grad))
        return float(loss)

    def train_step(self) -> dict:
        """PPO step on the agent batch, then one JSD step on expert samples."""
        losses = self.ppo_update()
        jsd_value = self.jsd_update()
        rec = {"value_loss": losses.value, "policy_loss": losses.policy,
               "entropy": losses.entropy, "jsd": np.nan if jsd_value is None else jsd_value}
        self.history.append(rec)
        return rec

    # ---- checkpoints ---------------------------------------------------
    def checkpoint_bytes(self, meta: dict) -> bytes:
        arrays = {f"actor_opt_{i}": a for i, a in enumerate(self.actor_opt.state_arrays())}
        arrays.update({f"critic_opt_{i}": a for i, a in enumerate(self.critic_opt.state_arrays())})
        arrays["g_max"] = np.array([self.g_max])
        return pack_bundle({**meta, "algo": "ppo"}, {"actor": self.actor, "critic": self.critic},
                           arrays)
