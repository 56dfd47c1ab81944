"""TTI loop, schedulers (heuristic, random, deep) and the centralized training loops."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kpi
from .agent_ppo import PpoAgent, PpoTransition, reward_ppo, sample_branches
from .agent_sac import SacAgent, SacConfig, reward_normalize
from .config import RunConfig, SimConfig, TrainConfig
from .features import FeatureContext, build_state_1l, build_state_2l, permute_segments
from .heuristics import (_action_values, better_choice_exists, expert_action, pf_sum,
                         schedule_cell, td_select)
from .neuralnet import DenseNet, FrozenNet, masked_softmax
from .simenv import EMPTY, AllocationGrid, Simulator

ALGOS = ("ppo", "sacd", "dsacd")
ARCHS = ("1l", "2l")
HEURISTICS = ("baseline", "pf-greedy")
SCHEDULERS = ("baseline", "pf-greedy", "random", "ppo-1l", "sacd-1l", "sacd-2l",
              "dsacd-1l", "dsacd-2l")


def tuples_per_tti(cfg: SimConfig) -> int:
    """Off-policy tuples per TTI: one per (cell, layer, RBG) decision."""
    return cfg.n_cells * cfg.max_layers * cfg.n_rbg


def split_scheduler(name: str) -> tuple[str, str]:
    algo, _, arch = name.partition("-")
    if algo not in ALGOS or arch not in ARCHS:
        raise ValueError(f"not a deep scheduler: {name!r}")
    return algo, arch


# ---- one TTI ----------------------------------------------------------------

@dataclass
class Tti:
    """Decision context shared by all schedulers for one TTI."""
    sim: Simulator
    views: list
    candidates: list
    grid: AllocationGrid

    @classmethod
    def begin(cls, sim: Simulator) -> "Tti":
        sim.generate_traffic()
        cfg = sim.cfg
        views = [sim.cell(c) for c in range(cfg.n_cells)]
        cands = [td_select(v, cfg.max_candidates) for v in views]
        return cls(sim, views, cands, AllocationGrid.for_config(cfg))

    def finish(self):
        out = self.sim.apply_allocation(self.grid)
        self.sim.advance_channel()
        return out


def assign(grid_cell: np.ndarray, cand, layer: int, m: int, action: int) -> None:
    grid_cell[m, layer] = cand[action] if action < len(cand) else EMPTY


class HeuristicScheduler:
    def __init__(self, kind: str):
        if kind not in HEURISTICS:
            raise ValueError(f"unknown heuristic {kind!r}")
        self.kind = kind

    def schedule(self, tti: Tti) -> None:
        cfg = tti.sim.cfg
        for c, (view, cand) in enumerate(zip(tti.views, tti.candidates)):
            tti.grid.ue[c] = schedule_cell(view, cand, cfg.n_rbg, cfg.max_layers, self.kind)


class RandomScheduler:
    """Uniform choice among valid actions (no allocation included) per RBG and layer."""

    def __init__(self, cfg: SimConfig, seed: int = 0):
        self.ctx = FeatureContext.from_config(cfg)
        self.rng = np.random.default_rng(seed)
        self.decisions = 0
        self.violations = 0

    def schedule(self, tti: Tti) -> None:
        cfg = tti.sim.cfg
        for c, (view, cand) in enumerate(zip(tti.views, tti.candidates)):
            g = tti.grid.ue[c]
            for layer in range(cfg.max_layers):
                _, masks = build_state_1l(view, cand, g, layer, self.ctx)
                p = masks / masks.sum(axis=1, keepdims=True)
                acts = sample_branches(p, self.rng)
                self.decisions += acts.size
                self.violations += int((~masks[np.arange(cfg.n_rbg), acts]).sum())
                for m, a in enumerate(acts):
                    assign(g, cand, layer, m, int(a))


class DeepScheduler:
    """Actor-only inference with a frozen float32 copy; one pass per cell and layer (1L)
    or per cell, layer and RBG (2L)."""

    def __init__(self, actor: DenseNet, arch: str, cfg: SimConfig, greedy: bool = True,
                 seed: int = 0):
        if arch not in ARCHS:
            raise ValueError(f"unknown architecture {arch!r}")
        n_b = cfg.n_branches(arch)
        if actor.n_in != cfg.state_dim(arch) or actor.n_out != n_b * cfg.n_actions:
            raise ValueError(
                f"checkpoint dims ({actor.n_in} -> {actor.n_out}) do not match config "
                f"({cfg.state_dim(arch)} -> {n_b * cfg.n_actions}) for {arch}")
        self.arch = arch
        self.net = FrozenNet(actor)
        self.shape = (n_b, cfg.n_actions)
        self.greedy = greedy
        self.rng = np.random.default_rng(seed)
        self.ctx = FeatureContext.from_config(cfg)

    def _choose(self, state, masks) -> np.ndarray:
        logits = self.net.infer(state).astype(np.float64).reshape(self.shape)
        masks = masks.reshape(self.shape)
        if self.greedy:
            return np.argmax(np.where(masks, logits, -np.inf), axis=-1)
        return sample_branches(masked_softmax(logits, masks), self.rng)

    def schedule(self, tti: Tti) -> None:
        cfg = tti.sim.cfg
        self.ctx.observe(tti.sim.smoothed)
        for c, (view, cand) in enumerate(zip(tti.views, tti.candidates)):
            g = tti.grid.ue[c]
            for layer in range(cfg.max_layers):
                if self.arch == "1l":
                    state, masks = build_state_1l(view, cand, g, layer, self.ctx)
                    for m, a in enumerate(self._choose(state, masks)):
                        assign(g, cand, layer, m, int(a))
                else:
                    for m in range(cfg.n_rbg):
                        state, mask = build_state_2l(view, cand, g, layer, m, self.ctx)
                        assign(g, cand, layer, m, int(self._choose(state, mask)[0]))


def make_scheduler(name: str, cfg: SimConfig, actor: DenseNet | None = None, seed: int = 0,
                   greedy: bool = True):
    if name in HEURISTICS:
        return HeuristicScheduler(name)
    if name == "random":
        return RandomScheduler(cfg, seed)
    _, arch = split_scheduler(name)
    if actor is None:
        raise ValueError(f"scheduler {name!r} needs a checkpoint")
    return DeepScheduler(actor, arch, cfg, greedy=greedy, seed=seed)


# ---- evaluation --------------------------------------------------------------

@dataclass
class EvalResult:
    scheduler: str
    seed: int
    tput: np.ndarray            # per-UE mean throughput over the measured window, bit/s
    upt: np.ndarray             # per-UE UPT (nan when never busy)
    traffic: np.ndarray
    cells: np.ndarray
    cosched: float

    def summary(self) -> dict:
        s = kpi.summarize(self.tput)
        s["cosched"] = self.cosched
        return s


def run_episode(cfg: SimConfig, scheduler, seed: int, n_ttis: int,
                name: str = "") -> EvalResult:
    """Warm up with the same scheduler, then measure n_ttis TTIs."""
    sim = Simulator(cfg, seed)
    for _ in range(cfg.warmup_ttis):
        tti = Tti.begin(sim)
        scheduler.schedule(tti)
        tti.finish()
    sim.reset_stats()
    counts = []
    for _ in range(n_ttis):
        tti = Tti.begin(sim)
        scheduler.schedule(tti)
        counts.append(tti.finish().cosched)
    dur = sim.measured_ttis * cfg.tti_duration
    tput = (sim.served_bits_total / dur).ravel()
    busy = sim.busy_ttis.ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        upt = np.where(busy > 0, sim.busy_served_bits.ravel() / (busy * cfg.tti_duration), np.nan)
    cells = np.repeat(np.arange(cfg.n_cells), cfg.n_ues_per_cell)
    return EvalResult(name, seed, tput, upt, sim.traffic.ravel().copy(), cells,
                      kpi.cosched_efficiency(np.asarray(counts)))


def evaluate(cfg: SimConfig, name: str, seeds, n_ttis: int, actor: DenseNet | None = None,
             workers: int = 1) -> list[EvalResult]:
    """One independent run per seed; optional worker threads, results in seed order."""
    def one(seed):
        sched = make_scheduler(name, cfg, actor, seed=seed)
        return run_episode(cfg, sched, seed, n_ttis, name)
    seeds = list(seeds)
    if workers <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, seeds))


# ---- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    algo: str
    arch: str
    agent: object
    curve: list = field(default_factory=list)      # (tti, windowed geomean, alpha, loss)
    geomeans: list = field(default_factory=list)   # per-TTI geomean of smoothed throughput
    tuples: int = 0
    tuples_per_tti: list = field(default_factory=list)
    decisions: int = 0
    violations: int = 0
    max_target_gap: float = 0.0

    @property
    def actor(self) -> DenseNet:
        return self.agent.actor

    def curve_slope(self, frac: float = 0.5) -> float:
        """Least-squares slope of the windowed curve over its final `frac`."""
        pts = np.asarray([(t, g) for t, g, *_ in self.curve])
        pts = pts[int(len(pts) * (1.0 - frac)):]
        if len(pts) < 2:
            return float("nan")
        return float(np.polyfit(pts[:, 0], pts[:, 1], 1)[0])


def _geomean_units(sim: Simulator, c: int | None = None, ues=None) -> float:
    r = sim.smoothed if c is None else sim.smoothed[c]
    if ues is not None:
        r = r[list(ues)]
    return kpi.geomean(r) if np.size(r) else 1.0


def _perms(rng: np.random.Generator, n: int, k: int) -> list[np.ndarray]:
    return [rng.permutation(n) for _ in range(k)]


class _Pending:
    """Off-policy tuple waiting for its reward and next state."""
    __slots__ = ("state", "branch", "action", "mask", "raw", "ref", "layer",
                 "reward", "next_state", "next_mask", "perm")

    def __init__(self, state, branch, action, mask, raw, ref, layer, perm):
        self.state, self.branch, self.action, self.mask = state, branch, action, mask
        self.raw, self.ref, self.layer, self.perm = raw, ref, layer, perm
        self.reward = None
        self.next_state = None
        self.next_mask = None


class Trainer:
    """Centralized training: every cell's decisions feed one shared agent."""

    def __init__(self, run: RunConfig, algo: str, arch: str, seed: int | None = None,
                 log=None):
        if algo not in ALGOS:
            raise ValueError(f"unknown algorithm {algo!r}")
        if arch not in ARCHS:
            raise ValueError(f"unknown architecture {arch!r}")
        if algo == "ppo" and arch != "1l":
            raise ValueError("PPO is implemented for the 1L architecture only")
        self.run, self.algo, self.arch = run, algo, arch
        self.cfg = cfg = run.sim
        self.tcfg = tcfg = run.train
        self.seed = cfg.seed if seed is None else seed
        self.sim = Simulator(cfg, self.seed)
        self.rng = np.random.default_rng([self.seed, 7])
        self.ctx = FeatureContext.from_config(cfg)
        self.log = log
        sd, nb, na = cfg.state_dim(arch), cfg.n_branches(arch), cfg.n_actions
        if algo == "ppo":
            self.agent = PpoAgent(sd, nb, na, tcfg, rng=np.random.default_rng([self.seed, 1]))
        else:
            scfg = SacConfig.from_train(algo, arch, cfg, tcfg)
            self.agent = SacAgent(sd, nb, na, scfg, rng=np.random.default_rng([self.seed, 1]))
        self.result = TrainResult(algo, arch, self.agent)
        self.trailing = 1 if arch == "2l" else 0
        self.pending: list[list[_Pending]] = [[] for _ in range(cfg.n_cells)]
        self.ppo_prev: list[PpoTransition | None] = [None] * cfg.n_cells
        self._window: list[float] = []
        self._losses: list[float] = []

    # ---- off-policy helpers -------------------------------------------------
    def _resolve_next(self, c: int, state, masks) -> None:
        """The next decision of cell c supplies s' for its pending tuples."""
        keep = []
        for p in self.pending[c]:
            if p.next_state is None:
                p.next_state = state
                p.next_mask = masks[p.branch] if masks.ndim == 2 else masks
            if p.reward is None:
                keep.append(p)
            else:
                self._push(p)
        self.pending[c] = keep

    def _push(self, p: _Pending) -> None:
        ag: SacAgent = self.agent
        ag.push(p.state, p.action, p.reward, p.next_state, p.mask, p.next_mask, p.branch)
        self.result.tuples += 1
        for perm in p.perm:
            s, mk, lmap = permute_segments(p.state, p.mask[None, :], perm, self.trailing)
            s2, mk2, _ = permute_segments(p.next_state, p.next_mask[None, :], perm, self.trailing)
            ag.push(s, int(lmap[p.action]), p.reward, s2, mk[0], mk2[0], p.branch)

    def _decision_raw(self, view, cand, g, m, layer, action, mask_row):
        """Raw reward: PF-sum increment on RBG m, plus the best increment over valid actions."""
        before = [int(x) for x in g[m, :layer] if x != EMPTY]
        base = pf_sum(view, m, before)
        raw = 0.0 if action >= len(cand) else pf_sum(view, m, before + [int(cand[action])]) - base
        ref = None
        if self.tcfg.reward_scope == "decision":
            vals = _action_values(view, cand, g, m, layer, mask_row)[:-1]
            ref = float(np.max(vals) - base) if np.isfinite(vals).any() else -1.0
        return raw, ref

    def _tti_offpolicy(self, tti: Tti, emit: bool) -> None:
        cfg, ag = self.cfg, self.agent
        groups: list[list[_Pending]] = []
        for layer in range(cfg.max_layers):
            if self.arch == "1l":
                rows = [build_state_1l(v, cd, tti.grid.ue[c], layer, self.ctx)
                        for c, (v, cd) in enumerate(zip(tti.views, tti.candidates))]
                states = np.stack([r[0] for r in rows])
                masks = np.stack([r[1] for r in rows])
                acts, _ = ag.act(states, masks)
                self._audit(acts, masks)
                for c, (v, cd) in enumerate(zip(tti.views, tti.candidates)):
                    if emit:
                        self._resolve_next(c, states[c], masks[c])
                    g = tti.grid.ue[c]
                    group = []
                    for m in range(cfg.n_rbg):
                        a = int(acts[c, m])
                        raw, ref = self._decision_raw(v, cd, g, m, layer, a, masks[c, m])
                        group.append(_Pending(states[c], m, a, masks[c, m], raw, ref, layer,
                                              _perms(self.rng, cfg.max_candidates,
                                                     self.tcfg.n_permutations)))
                    for m in range(cfg.n_rbg):
                        assign(g, cd, layer, m, int(acts[c, m]))
                    groups.append(group)
                    if emit:
                        self.pending[c].extend(group)
            else:
                per_cell = [[] for _ in range(cfg.n_cells)]
                for m in range(cfg.n_rbg):
                    rows = [build_state_2l(v, cd, tti.grid.ue[c], layer, m, self.ctx)
                            for c, (v, cd) in enumerate(zip(tti.views, tti.candidates))]
                    states = np.stack([r[0] for r in rows])
                    masks = np.stack([r[1] for r in rows])
                    acts, _ = ag.act(states, masks)
                    acts = acts[:, 0]
                    self._audit(acts[:, None], masks[:, None, :])
                    for c, (v, cd) in enumerate(zip(tti.views, tti.candidates)):
                        if emit:
                            self._resolve_next(c, states[c], masks[c])
                        g = tti.grid.ue[c]
                        a = int(acts[c])
                        raw, ref = self._decision_raw(v, cd, g, m, layer, a, masks[c])
                        p = _Pending(states[c], 0, a, masks[c], raw, ref, layer,
                                     _perms(self.rng, cfg.max_candidates,
                                            self.tcfg.n_permutations))
                        assign(g, cd, layer, m, a)
                        per_cell[c].append(p)
                        if emit:
                            self.pending[c].append(p)
                groups.extend(per_cell)
        # per (cell, layer) normalization of the raw rewards
        noop = cfg.n_actions - 1
        for group in groups:
            raws = np.array([p.raw for p in group])
            acts = np.array([p.action for p in group])
            ref = None if group[0].ref is None else np.array([p.ref for p in group])
            for p, r in zip(group, reward_normalize(raws, acts, noop, ref)):
                p.reward = float(r)

    def _audit(self, acts, masks) -> None:
        b, nb = acts.shape
        ok = masks.reshape(b, nb, -1)[np.arange(b)[:, None], np.arange(nb)[None, :], acts]
        self.result.decisions += acts.size
        self.result.violations += int((~ok).sum())

    # ---- on-policy -----------------------------------------------------------
    def _tti_ppo(self, tti: Tti, emit: bool) -> None:
        cfg, ag = self.cfg, self.agent
        this_tti = []
        for layer in range(cfg.max_layers):
            rows = [build_state_1l(v, cd, tti.grid.ue[c], layer, self.ctx)
                    for c, (v, cd) in enumerate(zip(tti.views, tti.candidates))]
            states = np.stack([r[0] for r in rows])
            masks = np.stack([r[1] for r in rows])
            values = ag.value(states)
            if emit:
                for c in range(cfg.n_cells):
                    if self.ppo_prev[c] is not None:
                        self.ppo_prev[c].next_value = float(values[c])
                if layer == 0 and ag.ready():
                    self._losses.append(ag.train_step()["jsd"])
            acts, logp = ag.act(states, masks)
            self._audit(acts, masks)
            for c, (v, cd) in enumerate(zip(tti.views, tti.candidates)):
                g = tti.grid.ue[c]
                vm = np.array([better_choice_exists(v, cd, g, m, layer, int(acts[c, m]), masks[c, m])
                               for m in range(cfg.n_rbg)])
                if emit:
                    expert = expert_action(v, cd, g, layer, masks[c])
                    ag.store_expert(states[c], masks[c], expert)
                    tr = PpoTransition(states[c], masks[c], acts[c].copy(), float(logp[c]),
                                       float(values[c]), stream=c)
                    for perm in _perms(self.rng, cfg.max_candidates, self.tcfg.n_permutations):
                        s, mk, lmap = permute_segments(states[c], masks[c], perm)
                        ag.store_expert(s, mk, expert[:, np.argsort(lmap)])
                        a2 = lmap[acts[c]]
                        tr.copies.append((s, mk, a2, ag.log_prob(s, mk, a2)))
                    this_tti.append((c, layer, tr, vm))
                for m in range(cfg.n_rbg):
                    assign(g, cd, layer, m, int(acts[c, m]))
        return this_tti

    def _finish_ppo(self, this_tti) -> None:
        ag, tcfg = self.agent, self.tcfg
        for c, layer, tr, vm in this_tti:
            g = _geomean_units(self.sim, c, [x for x in self._cands[c]])
            g_max = ag.observe_geomean(g)
            tr.reward = float(sum(reward_ppo(g, g_max, v, layer + 1, tcfg.reward_k) for v in vm))
            ag.store(tr)
            self.ppo_prev[c] = tr
            self.result.tuples += 1

    # ---- main loop -----------------------------------------------------------
    def step(self) -> None:
        sim, cfg = self.sim, self.cfg
        emit = sim.tti >= cfg.warmup_ttis
        tti = Tti.begin(sim)
        self.ctx.observe(sim.smoothed)
        before = self.result.tuples
        if self.algo == "ppo":
            self._cands = tti.candidates
            this_tti = self._tti_ppo(tti, emit)
            tti.finish()
            if emit:
                self._finish_ppo(this_tti)
        else:
            self._tti_offpolicy(tti, emit)
            tti.finish()
            if emit:
                for _ in range(self.tcfg.updates_per_tti):
                    rec = self.agent.update()
                    if rec is not None:
                        self._losses.append(rec["critic_loss"])
        if emit:
            self.result.tuples_per_tti.append(self.result.tuples - before)
        gm = _geomean_units(sim)
        self.result.geomeans.append(gm)
        if emit:
            self._window.append(gm)
            if len(self._window) == self.tcfg.curve_window:
                alpha = getattr(self.agent, "alpha", float("nan"))
                loss = float(np.nanmean(self._losses)) if self._losses else float("nan")
                self.result.curve.append((sim.tti, float(np.mean(self._window)), alpha, loss))
                self._window, self._losses = [], []

    def train(self, n_ttis: int | None = None, callback=None) -> TrainResult:
        n = self.tcfg.train_ttis if n_ttis is None else n_ttis
        total = self.cfg.warmup_ttis + n
        while self.sim.tti < total:
            self.step()
            if callback is not None:
                callback(self)
        if self.algo != "ppo":
            self.result.max_target_gap = self.agent.target_reward_gap
        return self.result


def train(run: RunConfig, algo: str, arch: str, seed: int | None = None,
          n_ttis: int | None = None, callback=None) -> TrainResult:
    return Trainer(run, algo, arch, seed).train(n_ttis, callback)


def geomean_over_seeds(results: list[EvalResult]) -> np.ndarray:
    return np.array([kpi.geomean(r.tput) for r in results])


def finite(x) -> bool:
    return x is not None and math.isfinite(x)
