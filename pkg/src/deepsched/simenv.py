"""Per-TTI multi-cell downlink MU-MIMO environment.

Channel abstraction: log-distance pathloss with a per-UE shadowing draw,
per-RBG complex fading with first-order autoregressive persistence, and
per-RBG random orthonormal precoders that evolve with the same persistence.
MU-MIMO interference is expressed through precoder cross-correlation only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig

FULL_BUFFER = 0
FTP3 = 1
EMPTY = -1


class GridError(ValueError):
    pass


def sinr_db_to_cqi(sinr_db, cfg: SimConfig):
    """Uniform quantizer of SINR (dB) onto the integer CQI range."""
    levels = cfg.cqi_max - cfg.cqi_min + 1
    step = (cfg.sinr_max_db - cfg.sinr_min_db) / levels
    idx = np.floor((np.asarray(sinr_db, dtype=float) - cfg.sinr_min_db) / step)
    return (cfg.cqi_min + np.clip(idx, 0, levels - 1)).astype(np.int64)


def precoder_crosscorr(p_u: np.ndarray, p_c: np.ndarray) -> float:
    """kappa = max over columns j of p_c of sum_i |[p_u^H p_c]_{i,j}|."""
    p_u = np.asarray(p_u)
    p_c = np.asarray(p_c)
    if p_u.ndim == 1:
        p_u = p_u[:, None]
    if p_c.ndim == 1:
        p_c = p_c[:, None]
    if p_u.shape[0] != p_c.shape[0]:
        raise ValueError(f"antenna dimension mismatch: {p_u.shape[0]} vs {p_c.shape[0]}")
    g = p_u.conj().T @ p_c
    return float(np.abs(g).sum(axis=0).max())


def crosscorr_tensor(precoders: np.ndarray) -> np.ndarray:
    """All pairwise kappa values.

    precoders: (n_ue, n_rbg, n_ant, 2) with unused rank columns zeroed.
    Returns (n_rbg, n_ue, n_ue) where [m, u, c] = kappa_{m,u,c}.
    """
    g = np.einsum("umai,cmaj->mucij", precoders.conj(), precoders)
    return np.abs(g).sum(axis=3).max(axis=3)


def max_crosscorr(kappa_m: np.ndarray, u: int, scheduled) -> float:
    """rho_{m,u}: the largest kappa between u and any already scheduled UE (0 if none)."""
    scheduled = [c for c in scheduled if c != u]
    if not scheduled:
        return 0.0
    return float(np.max(kappa_m[u, scheduled]))


def effective_sinr(sinr_su, kappa_sq_sum):
    return sinr_su / (1.0 + sinr_su * kappa_sq_sum)


@dataclass
class ChannelReport:
    wideband_cqi: int
    subband_cqi: np.ndarray
    rank: int
    precoder: np.ndarray    # (n_rbg, n_ant, rank)


@dataclass
class TtiOutcome:
    served_bits: np.ndarray       # (n_cells, n_ues)
    inst_tput: np.ndarray         # (n_cells, n_ues) bits/s
    layer_rate: np.ndarray        # (n_cells, n_rbg, n_layers) bits/s, 0 where empty
    cosched: np.ndarray           # (n_cells, n_rbg) occupied layer count


class AllocationGrid:
    """cells x RBG x user layer -> UE id, or EMPTY."""

    def __init__(self, n_cells: int, n_rbg: int, n_layers: int):
        self.ue = np.full((n_cells, n_rbg, n_layers), EMPTY, dtype=np.int64)

    @classmethod
    def for_config(cls, cfg: SimConfig) -> "AllocationGrid":
        return cls(cfg.n_cells, cfg.n_rbg, cfg.max_layers)

    @property
    def shape(self):
        return self.ue.shape

    def members(self, cell: int, rbg: int) -> list[int]:
        row = self.ue[cell, rbg]
        return [int(x) for x in row if x != EMPTY]

    def allocated_counts(self, cell: int, n_ues: int) -> np.ndarray:
        """d_u: number of RBGs on which each UE holds a layer."""
        ids = self.ue[cell][self.ue[cell] != EMPTY]
        return np.bincount(ids, minlength=n_ues)

    def validate(self, n_ues: int | None = None) -> None:
        grid = self.ue
        occupied = grid != EMPTY
        if n_ues is not None and np.any(grid[occupied] >= n_ues):
            raise GridError("UE id out of range")
        if np.any(grid[~occupied] != EMPTY) or np.any(grid[occupied] < 0):
            raise GridError("invalid UE id")
        # layers filled in order
        if np.any(~occupied[..., :-1] & occupied[..., 1:]):
            raise GridError("layer occupied above an empty layer")
        # a UE at most once per (cell, RBG)
        srt = np.sort(grid, axis=-1)
        dup = (srt[..., 1:] == srt[..., :-1]) & (srt[..., 1:] != EMPTY)
        if np.any(dup):
            raise GridError("UE scheduled twice on one RBG")

    def copy(self) -> "AllocationGrid":
        g = AllocationGrid.__new__(AllocationGrid)
        g.ue = self.ue.copy()
        return g


class CellView:
    """Read-only per-cell snapshot used by schedulers and feature builders."""

    def __init__(self, sim: "Simulator", cell: int):
        cfg = sim.cfg
        self.cfg = cfg
        self.cell = cell
        self.n_ues = cfg.n_ues_per_cell
        self.sinr = sim.sinr[cell]                  # (n_ue, n_rbg) linear
        self.kappa = sim.kappa[cell]                # (n_rbg, n_ue, n_ue)
        self.rank = sim.rank[cell]
        self.smoothed = sim.smoothed[cell]
        self.buffer_bytes = sim.buffer_bytes[cell]
        self.wideband_cqi = sim.wideband_cqi[cell]
        self.subband_cqi = sim.subband_cqi[cell]
        self.traffic = sim.traffic[cell]
        self.bandwidth = cfg.rbg_bandwidth
        self.tti = cfg.tti_duration
        self.mimo_limit = cfg.mimo_layer_limit

    def rates_on(self, m: int, members) -> np.ndarray:
        """Per-member rate on RBG m when exactly `members` share it."""
        members = np.asarray(list(members), dtype=np.int64)
        if members.size == 0:
            return np.zeros(0)
        k = self.kappa[m][np.ix_(members, members)]
        ksq = (k * k).sum(axis=1) - np.diag(k) ** 2
        s = self.sinr[members, m]
        ranks = self.rank[members]
        headroom = self.mimo_limit - (ranks.sum() - ranks)
        factor = np.clip(np.minimum(ranks, headroom), 0, None)
        return factor * self.bandwidth * np.log2(1.0 + effective_sinr(s, ksq))

    def rate(self, u: int, m: int, scheduled=()) -> float:
        """T_{u,m}: rate of u on RBG m alongside `scheduled`."""
        others = [c for c in scheduled if c != u]
        if not others:
            return float(min(self.rank[u], self.mimo_limit) * self.bandwidth
                         * np.log2(1.0 + self.sinr[u, m]))
        return float(self.rates_on(m, [u] + others)[0])

    def sum_rate(self, m: int, members) -> float:
        return float(self.rates_on(m, members).sum())

    def pf_floor(self, u) -> np.ndarray:
        return np.maximum(self.smoothed[u], 1.0)


def estimate_rate(view: CellView, u: int, m: int, scheduled=()) -> float:
    return view.rate(u, m, scheduled)


class Simulator:
    """Mutable multi-cell world. Only generate_traffic, apply_allocation and
    advance_channel change state."""

    def __init__(self, cfg: SimConfig, seed: int | None = None):
        cfg.validate()
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        ss = np.random.SeedSequence(self.seed)
        place_ss, chan_ss, traffic_ss = ss.spawn(3)
        self.rng_place = np.random.default_rng(place_ss)
        self.rng_chan = np.random.default_rng(chan_ss)
        self.rng_traffic = np.random.default_rng(traffic_ss)

        C, N, M, A = cfg.n_cells, cfg.n_ues_per_cell, cfg.n_rbg, cfg.n_antennas
        r2 = self.rng_place.uniform(cfg.min_distance_m ** 2, cfg.cell_radius_m ** 2, size=(C, N))
        self.distance = np.sqrt(r2)
        shadow = self.rng_place.normal(0.0, cfg.shadowing_std_db, size=(C, N))
        pathloss = cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exponent * np.log10(self.distance)
        self.mean_sinr_db = cfg.tx_power_dbm - pathloss - shadow - cfg.noise_interference_dbm
        self.mean_sinr = 10.0 ** (self.mean_sinr_db / 10.0)

        n_fb = int(round(cfg.traffic_mix * N))
        self.traffic = np.full((C, N), FTP3, dtype=np.int64)
        self.traffic[:, :n_fb] = FULL_BUFFER

        self.fading = self._cn((C, N, M))
        self.prec_raw = self._cn((C, N, M, A, 2))

        self.buffer_bytes = np.where(self.traffic == FULL_BUFFER, cfg.buffer_max_bytes, 0.0)
        self.smoothed = np.zeros((C, N))
        self.inst_tput = np.zeros((C, N))
        self.tti = 0
        self.reset_stats()
        self._refresh_reports()

    def _cn(self, shape) -> np.ndarray:
        re = self.rng_chan.standard_normal(shape)
        im = self.rng_chan.standard_normal(shape)
        return (re + 1j * im) / np.sqrt(2.0)

    def reset_stats(self) -> None:
        C, N = self.cfg.n_cells, self.cfg.n_ues_per_cell
        self.served_bits_total = np.zeros((C, N))
        self.busy_ttis = np.zeros((C, N), dtype=np.int64)
        self.busy_served_bits = np.zeros((C, N))
        self.arrived_bytes = np.zeros((C, N))
        self.served_bytes = np.zeros((C, N))
        self.measured_ttis = 0

    # ---- channel -------------------------------------------------------
    def _refresh_reports(self) -> None:
        cfg = self.cfg
        self.sinr = self.mean_sinr[..., None] * np.abs(self.fading) ** 2
        wb_db = 10.0 * np.log10(self.sinr.mean(axis=-1))
        self.rank = np.where((wb_db >= cfg.rank2_threshold_db) & (cfg.max_rank >= 2), 2, 1)
        self.wideband_cqi = sinr_db_to_cqi(wb_db, cfg)
        self.subband_cqi = sinr_db_to_cqi(10.0 * np.log10(self.sinr), cfg)

        q, r = np.linalg.qr(self.prec_raw)
        d = np.diagonal(r, axis1=-2, axis2=-1)
        phase = d / np.where(np.abs(d) > 0, np.abs(d), 1.0)
        q = q * phase[..., None, :]
        col_used = np.arange(2)[None, None, None, :] < self.rank[..., None, None]
        self.precoders = q * col_used[:, :, :, None, :]
        self.kappa = np.stack([crosscorr_tensor(self.precoders[c]) for c in range(cfg.n_cells)])

    def advance_channel(self) -> None:
        a = self.cfg.fading_persistence
        if a < 1.0:
            s = np.sqrt(1.0 - a * a)
            self.fading = a * self.fading + s * self._cn(self.fading.shape)
            self.prec_raw = a * self.prec_raw + s * self._cn(self.prec_raw.shape)
            self._refresh_reports()

    # ---- traffic -------------------------------------------------------
    def generate_traffic(self) -> None:
        cfg = self.cfg
        lam = cfg.ftp3_rate * cfg.tti_duration
        arrivals = self.rng_traffic.poisson(lam, size=self.traffic.shape)
        ftp = self.traffic == FTP3
        new_bytes = np.where(ftp, arrivals * cfg.ftp3_packet_bytes, 0.0)
        self.buffer_bytes = self.buffer_bytes + new_bytes
        self.arrived_bytes += new_bytes
        self.buffer_bytes[~ftp] = cfg.buffer_max_bytes

    # ---- allocation ----------------------------------------------------
    def cell(self, c: int) -> CellView:
        return CellView(self, c)

    def apply_allocation(self, grid: AllocationGrid) -> TtiOutcome:
        cfg = self.cfg
        C, N, M, L = cfg.n_cells, cfg.n_ues_per_cell, cfg.n_rbg, cfg.max_layers
        if grid.shape != (C, M, L):
            raise GridError(f"grid shape {grid.shape} != {(C, M, L)}")
        grid.validate(N)

        layer_rate = np.zeros((C, M, L))
        capacity_bits = np.zeros((C, N))
        cosched = (grid.ue != EMPTY).sum(axis=-1)
        for c in range(C):
            view = self.cell(c)
            for m in range(M):
                n = cosched[c, m]
                if n == 0:
                    continue
                members = grid.ue[c, m, :n]
                rates = view.rates_on(m, members)
                layer_rate[c, m, :n] = rates
                np.add.at(capacity_bits[c], members, rates * cfg.tti_duration)

        busy = self.buffer_bytes > 0
        served = np.minimum(self.buffer_bytes * 8.0, capacity_bits)
        self.buffer_bytes = np.maximum(self.buffer_bytes - served / 8.0, 0.0)
        self.buffer_bytes[self.traffic == FULL_BUFFER] = cfg.buffer_max_bytes

        p = served / cfg.tti_duration
        eps = cfg.smoothing_forget
        self.smoothed = (1.0 - eps) * p + eps * self.smoothed
        self.inst_tput = p

        self.served_bits_total += served
        self.served_bytes += served / 8.0
        self.busy_ttis += busy
        self.busy_served_bits += np.where(busy, served, 0.0)
        self.measured_ttis += 1
        self.tti += 1
        return TtiOutcome(served, p, layer_rate, cosched)

    # ---- inspection ----------------------------------------------------
    def report(self, c: int, u: int) -> ChannelReport:
        h = int(self.rank[c, u])
        return ChannelReport(int(self.wideband_cqi[c, u]), self.subband_cqi[c, u].copy(), h,
                             self.precoders[c, u, :, :, :h].copy())

    def snapshot(self) -> dict[str, np.ndarray]:
        keys = ("sinr", "rank", "wideband_cqi", "subband_cqi", "precoders", "buffer_bytes",
                "smoothed", "inst_tput", "served_bits_total", "busy_ttis")
        return {k: getattr(self, k).copy() for k in keys}


def init_sim(cfg: SimConfig, seed: int | None = None) -> Simulator:
    return Simulator(cfg, seed)
