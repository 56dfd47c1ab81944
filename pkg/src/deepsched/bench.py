"""Forward-pass latency benchmark for the 1L and 2L actor architectures."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .neuralnet import DenseNet, FrozenNet


def passes_per_tti(arch: str, n_rbg: int, n_layers: int) -> int:
    """1L: one pass per user layer; 2L: one per RBG and layer."""
    if arch == "1l":
        return n_layers
    if arch == "2l":
        return n_rbg * n_layers
    raise ValueError(f"unknown architecture {arch!r}")


@dataclass
class BenchReport:
    arch: str
    hidden: tuple
    n_candidates: int
    n_rbg: int
    n_layers: int
    passes: int
    mean_pass_us: float
    min_pass_us: float
    tti_us: float            # measured wall time of one TTI's worth of passes (median)

    @property
    def tti_estimate_us(self) -> float:
        return self.mean_pass_us * self.passes

    def row(self) -> list:
        return [self.arch, "x".join(map(str, self.hidden)), self.n_candidates, self.n_rbg,
                self.n_layers, self.passes, round(self.mean_pass_us, 3),
                round(self.min_pass_us, 3), round(self.tti_estimate_us, 3), round(self.tti_us, 3)]


HEADER = ["arch", "hidden", "n_candidates", "n_rbg", "n_layers", "passes_per_tti",
          "mean_pass_us", "min_pass_us", "tti_estimate_us", "tti_measured_us"]


def bench(arch: str, hidden=(32, 32), n_candidates: int = 4, n_rbg: int = 6, n_layers: int = 2,
          repetitions: int = 200, warmup: int = 20, seed: int = 0) -> BenchReport:
    """Time single-sample float32 passes on one thread with a monotonic clock."""
    cfg = SimConfig(n_rbg=n_rbg, max_candidates=n_candidates, max_layers=n_layers)
    rng = np.random.default_rng(seed)
    n_out = cfg.n_branches(arch) * cfg.n_actions
    net = FrozenNet(DenseNet([cfg.state_dim(arch), *hidden, n_out], rng=rng))
    count = passes_per_tti(arch, n_rbg, n_layers)
    states = rng.random((count, cfg.state_dim(arch))).astype(np.float32)

    for i in range(warmup):
        net.infer(states[i % count])
    net.passes = 0

    per_pass = np.empty(repetitions)
    for i in range(repetitions):
        x = states[i % count]
        t0 = time.perf_counter_ns()
        net.infer(x)
        per_pass[i] = time.perf_counter_ns() - t0

    per_tti = np.empty(repetitions)
    for i in range(repetitions):
        t0 = time.perf_counter_ns()
        for x in states:
            net.infer(x)
        per_tti[i] = time.perf_counter_ns() - t0

    executed = net.passes - repetitions
    if executed != repetitions * count:
        raise RuntimeError(f"expected {repetitions * count} passes, executed {executed}")
    return BenchReport(arch, tuple(hidden), n_candidates, n_rbg, n_layers, count,
                       float(per_pass.mean()) / 1e3, float(per_pass.min()) / 1e3,
                       float(np.median(per_tti)) / 1e3)
