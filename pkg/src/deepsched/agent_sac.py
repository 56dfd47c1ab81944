"""SACD and DSACD agents: twin (quantile) critics, masked discrete policy,
state-specific entropy target, prioritized replay and the PF-increment reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig, TrainConfig
from .neuralnet import (Adam, DenseNet, masked_log_softmax, masked_softmax, pack_bundle,
                        soft_update, softmax_backward)
from .replay import ReplayStore


# ---- losses and targets ---------------------------------------------------

def huber(x, k=1.0):
    ax = np.abs(x)
    return np.where(ax < k, 0.5 * x * x, k * (ax - 0.5 * k))


def huber_grad(x, k=1.0):
    return np.where(np.abs(x) < k, x, k * np.sign(x))


def quantile_levels(n: int) -> np.ndarray:
    """tau_n = n / N for n = 1..N."""
    return np.arange(1, n + 1) / n


def quantile_huber(x, tau, k=1.0):
    x = np.asarray(x, dtype=np.float64)
    return np.abs(tau - (x < 0)) * huber(x, k)


def critic_loss(q, y, taus, weights, kind: str = "quantile", k: float = 1.0):
    """Weighted critic loss over a batch.

    q: (b, N) quantile estimates for the taken actions; y: (b,) targets.
    Returns (loss, x, dq) with x = q - y the raw TD errors and dq = dloss/dq.
    """
    q = np.asarray(q, dtype=np.float64)
    b, n = q.shape
    x = q - np.asarray(y, dtype=np.float64)[:, None]
    w = np.asarray(weights, dtype=np.float64)[:, None]
    if kind == "quantile":
        scale = np.abs(taus[None, :] - (x < 0))
        loss = float((w * scale * huber(x, k)).sum() / (b * n))
        dq = w * scale * huber_grad(x, k) / (b * n)
    elif kind == "mse":
        loss = float((w * x * x).sum() / (b * n))
        dq = 2.0 * w * x / (b * n)
    else:
        raise ValueError(f"unknown critic loss {kind!r}")
    return loss, x, dq


def mean_q(quantiles: np.ndarray) -> np.ndarray:
    """Average over the trailing quantile axis."""
    return np.asarray(quantiles).mean(axis=-1)


def critic_target(reward, gamma, pi_next, q_next, alpha):
    """y = r + gamma * pi(s',a') * (Qbar(s',a') - alpha * log pi(s',a')) for a sampled a'."""
    reward = np.asarray(reward, dtype=np.float64)
    if gamma == 0.0:
        return reward.copy()
    return reward + gamma * pi_next * (q_next - alpha * np.log(pi_next))


def policy_loss(logits, masks, q_min, alpha, weights):
    """J = (1/b) sum_i w_i sum_a pi(a)[alpha log pi(a) - Q(a)] over valid actions.

    logits/masks/q_min: (b, A). Returns (J, dJ/dlogits).
    """
    masks = np.asarray(masks, dtype=bool)
    b = logits.shape[0]
    p = masked_softmax(logits, masks)
    logp = masked_log_softmax(logits, masks)
    q = np.where(masks, q_min, 0.0)
    w = np.asarray(weights, dtype=np.float64)[:, None]
    j = float((w * p * (alpha * logp - q)).sum() / b)
    dp = w * (alpha * (logp + 1.0) - q) / b
    return j, softmax_backward(p, dp)


def entropy_target(n_valid, beta):
    """Hbar(s) = -beta * log(1 / |A(s)|)."""
    n_valid = np.asarray(n_valid, dtype=np.float64)
    if np.any(n_valid < 1):
        raise ValueError("at least one valid action required")
    return -beta * np.log(1.0 / n_valid)


def entropy_alpha_grad(probs, masks, alpha, beta, weights) -> float:
    """Gradient of the entropy objective w.r.t. log(alpha).

    J(alpha) = (1/b) sum_i w_i (1/|A_i|) sum_a pi(a) * (-alpha) * (log pi(a) + Hbar_i);
    it is negative when the policy entropy sits below its target, so a descent
    step raises alpha.
    """
    masks = np.asarray(masks, dtype=bool)
    n_valid = masks.sum(axis=-1)
    with np.errstate(divide="ignore"):
        logp = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    bracket = (probs * logp).sum(axis=-1) + entropy_target(n_valid, beta)
    w = np.asarray(weights, dtype=np.float64)
    return float(np.mean(w * (-alpha) * bracket / n_valid))


def per_priority(x1, x2, eps):
    """delta_i = mean |TD error| over both critics and all quantiles, plus eps."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    return 0.5 * (np.abs(x1).mean(axis=-1) + np.abs(x2).mean(axis=-1)) + eps


def reward_raw(t_layer, t_prev, r_u, layer):
    """PF value at layer 1, PF increment over the previous layer otherwise (1-based)."""
    r_u = max(float(r_u), 1.0)
    if layer == 1:
        return t_layer / r_u
    return t_layer / r_u - t_prev / r_u


def reward_normalize(raws, actions, noop_action, reference=None):
    """Scale rewards by the group maximum, clipped to [-1, 1].

    If the maximum is positive: max(r / max, -1). Otherwise no allocation
    earns 1 and every other action -1 (a zero maximum counts as non-positive).
    `reference` overrides the maximum (e.g. the best candidate of a decision).
    """
    raws = np.asarray(raws, dtype=np.float64)
    actions = np.asarray(actions)
    top = raws.max() if reference is None else np.asarray(reference, dtype=np.float64)
    top = np.broadcast_to(top, raws.shape)
    out = np.full(raws.shape, -1.0)
    pos = top > 0
    out[pos] = np.maximum(raws[pos] / top[pos], -1.0)
    out[~pos & (actions == noop_action)] = 1.0
    return np.minimum(out, 1.0)


# ---- agent ------------------------------------------------------------------

@dataclass
class SacConfig:
    variant: str = "dsacd"           # "sacd" or "dsacd"
    quantiles: int = 16
    gamma: float = 0.0
    tau_target: float = 0.001
    beta: float = 0.999
    omega: float = 0.5
    eps_prio: float = 1e-3
    omega_prime_start: float = 0.4
    anneal_updates: int = 2000
    batch_size: int = 32
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    alpha_lr: float = 1e-4
    init_alpha: float = 1.0
    capacity: int = 3000
    hidden: tuple[int, ...] = (32, 32)
    critic_loss: str | None = None   # None: mse for SACD, quantile for DSACD

    def __post_init__(self):
        if self.variant not in ("sacd", "dsacd"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "sacd":
            self.quantiles = 1
        if self.quantiles < 1:
            raise ValueError("quantiles must be >= 1")
        if self.critic_loss is None:
            self.critic_loss = "mse" if self.variant == "sacd" else "quantile"

    @classmethod
    def from_train(cls, variant: str, arch: str, sim: SimConfig, tcfg: TrainConfig) -> "SacConfig":
        return cls(variant=variant, quantiles=tcfg.quantiles, gamma=tcfg.gamma_off,
                   tau_target=tcfg.target_tau,
                   beta=tcfg.beta_1l if arch == "1l" else tcfg.beta_2l,
                   omega=tcfg.per_omega, eps_prio=tcfg.per_eps,
                   omega_prime_start=tcfg.per_weight_start,
                   anneal_updates=max(1, tcfg.train_ttis * tcfg.updates_per_tti),
                   batch_size=tcfg.batch_size, actor_lr=tcfg.actor_lr,
                   critic_lr=tcfg.critic_lr, alpha_lr=tcfg.alpha_lr,
                   init_alpha=tcfg.init_alpha, capacity=sim.n_cells * tcfg.replay_per_cell,
                   hidden=tcfg.hidden)


class SacAgent:
    """Discrete soft actor-critic over one or more independent softmax branches.

    Each stored tuple refers to a single branch (one RBG decision for 1L,
    the only branch for 2L).
    """

    def __init__(self, state_dim: int, n_branches: int, n_actions: int, cfg: SacConfig,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim, self.n_branches, self.n_actions = state_dim, n_branches, n_actions
        self.n_quantiles = cfg.quantiles
        self.taus = quantile_levels(cfg.quantiles)
        hidden = list(cfg.hidden)
        self.actor = DenseNet([state_dim, *hidden, n_branches * n_actions],
                              branches=[n_actions] * n_branches, rng=self.rng)
        out = n_branches * n_actions * cfg.quantiles
        self.critics = [DenseNet([state_dim, *hidden, out], rng=self.rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.log_alpha = np.array([np.log(cfg.init_alpha)])
        self.actor_opt = Adam(self.actor.params(), lr=cfg.actor_lr)
        self.critic_opts = [Adam(c.params(), lr=cfg.critic_lr) for c in self.critics]
        self.alpha_opt = Adam([self.log_alpha], lr=cfg.alpha_lr)
        self.store = ReplayStore(cfg.capacity, state_dim, n_actions, cfg.omega, rng=self.rng)
        self.n_updates = 0
        self.target_reward_gap = 0.0     # max |y - r| seen while gamma == 0
        self.history: list[dict] = []

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def omega_prime(self) -> float:
        frac = min(1.0, self.n_updates / max(1, self.cfg.anneal_updates))
        return self.cfg.omega_prime_start + frac * (1.0 - self.cfg.omega_prime_start)

    # ---- acting --------------------------------------------------------
    def probs(self, states, masks) -> np.ndarray:
        states = np.atleast_2d(states)
        b = states.shape[0]
        logits = self.actor.forward(states).reshape(b, self.n_branches, self.n_actions)
        return masked_softmax(logits, np.asarray(masks, dtype=bool).reshape(logits.shape))

    def act(self, states, masks, greedy: bool = False):
        from .agent_ppo import sample_branches
        states = np.atleast_2d(states)
        masks = np.asarray(masks, dtype=bool).reshape(states.shape[0], self.n_branches, self.n_actions)
        p = self.probs(states, masks)
        if greedy:
            acts = np.argmax(np.where(masks, p, -1.0), axis=-1)
        else:
            acts = sample_branches(p, self.rng)
        chosen = np.take_along_axis(p, acts[..., None], axis=-1)[..., 0]
        return acts, np.log(chosen).sum(axis=1)

    def push(self, state, action, reward, next_state, mask, next_mask, branch=0) -> None:
        self.store.add(state, action, reward, next_state, mask, next_mask, branch)

    # ---- critic helpers --------------------------------------------------
    def _quantiles(self, net: DenseNet, states) -> np.ndarray:
        out = net.forward(states)
        return out.reshape(-1, self.n_branches, self.n_actions, self.n_quantiles)

    def _branch(self, arr: np.ndarray, branch: np.ndarray) -> np.ndarray:
        return arr[np.arange(arr.shape[0]), branch]

    # ---- update ----------------------------------------------------------
    def update(self) -> dict | None:
        cfg = self.cfg
        b = cfg.batch_size
        if len(self.store) < b:
            return None
        idx, batch, w = self.store.sample(b, self.omega_prime())
        s, s2 = batch["states"], batch["next_states"]
        br, a, r = batch["branch"], batch["actions"], batch["rewards"]
        mask, mask2 = batch["masks"], batch["next_masks"]
        rows = np.arange(b)
        alpha = self.alpha

        # critic target
        if cfg.gamma == 0.0:
            y = critic_target(r, 0.0, None, None, alpha)
        else:
            logits2 = self.actor.forward(s2).reshape(b, self.n_branches, self.n_actions)
            p2 = masked_softmax(self._branch(logits2, br), mask2)
            from .agent_ppo import sample_branches
            a2 = sample_branches(p2, self.rng)
            q_bar = np.minimum(*[mean_q(self._branch(self._quantiles(t, s2), br))
                                 for t in self.targets])
            y = critic_target(r, cfg.gamma, p2[rows, a2], q_bar[rows, a2], alpha)
        if cfg.gamma == 0.0:
            self.target_reward_gap = max(self.target_reward_gap, float(np.max(np.abs(y - r))))

        # critic step
        errors, critic_losses = [], []
        for net, opt in zip(self.critics, self.critic_opts):
            qs = self._quantiles(net, s)
            q_sa = qs[rows, br, a]                               # (b, N)
            loss, x, dq = critic_loss(q_sa, y, self.taus, w, cfg.critic_loss)
            grad = np.zeros_like(qs)
            grad[rows, br, a] = dq
            opt.step(net.backward(grad.reshape(b, -1)))
            errors.append(x)
            critic_losses.append(loss)

        # policy step on the refreshed critics
        q_min = np.minimum(*[mean_q(self._branch(self._quantiles(c, s), br)) for c in self.critics])
        logits = self.actor.forward(s).reshape(b, self.n_branches, self.n_actions)
        j_pi, d_branch = policy_loss(self._branch(logits, br), mask, q_min, alpha, w)
        d_logits = np.zeros_like(logits)
        d_logits[rows, br] = d_branch
        self.actor_opt.step(self.actor.backward(d_logits.reshape(b, -1)))

        # entropy coefficient step with the updated policy
        logits = self.actor.forward(s).reshape(b, self.n_branches, self.n_actions)
        p = masked_softmax(self._branch(logits, br), mask)
        g_alpha = entropy_alpha_grad(p, mask, alpha, cfg.beta, w)
        self.alpha_opt.step([np.array([g_alpha])])

        for t, c in zip(self.targets, self.critics):
            soft_update(t, c, cfg.tau_target)

        self.store.update_priorities(idx, per_priority(errors[0], errors[1], cfg.eps_prio))
        self.n_updates += 1
        rec = {"critic_loss": float(np.mean(critic_losses)), "policy_loss": j_pi,
               "alpha": self.alpha}
        self.history.append(rec)
        return rec

    def checkpoint_bytes(self, meta: dict) -> bytes:
        nets = {"actor": self.actor, "critic1": self.critics[0], "critic2": self.critics[1],
                "target1": self.targets[0], "target2": self.targets[1]}
        arrays = {"log_alpha": self.log_alpha.copy()}
        for name, opt in [("actor_opt", self.actor_opt), ("critic1_opt", self.critic_opts[0]),
                          ("critic2_opt", self.critic_opts[1]), ("alpha_opt", self.alpha_opt)]:
            arrays.update({f"{name}_{i}": x for i, x in enumerate(opt.state_arrays())})
        return pack_bundle({**meta, "algo": self.cfg.variant, "quantiles": self.n_quantiles},
                           nets, arrays)
