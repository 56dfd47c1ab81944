"""Normalized state vectors, action masks and segment-permutation augmentation.

1L state: |U| segments of [R, h, d, b, o, g_1..g_N, rho_1..rho_N].
2L state: |U| segments of [R, h, d, b, o, g_m, rho_m, mean_kappa_m] plus the
co-scheduled count on RBG m divided by |L|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .simenv import EMPTY, CellView

N_WIDEBAND = 5
SEG_2L = 8


def smooth_throughput(r_prev, p, eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"forgetting factor must lie in (0, 1), got {eps}")
    return (1.0 - eps) * p + eps * r_prev


@dataclass
class FeatureContext:
    r_max: float
    d_max: int
    b_max: float
    cqi_min: int
    cqi_max: int
    g_norm: float
    n_layers: int
    n_candidates: int

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "FeatureContext":
        return cls(1.0, cfg.n_rbg, cfg.buffer_max_bytes, cfg.cqi_min, cfg.cqi_max,
                   cfg.subband_cqi_norm, cfg.max_layers, cfg.max_candidates)

    def observe(self, smoothed: np.ndarray) -> None:
        """Track R_max as the running maximum of smoothed throughput."""
        self.r_max = max(self.r_max, float(np.max(smoothed)), 1.0)


@dataclass
class UeFeatureSegment:
    r_hat: float
    h_hat: float
    d_hat: float
    b_hat: float
    o_hat: float
    g_hat: np.ndarray
    rho: np.ndarray

    def as_array(self) -> np.ndarray:
        head = [self.r_hat, self.h_hat, self.d_hat, self.b_hat, self.o_hat]
        return np.concatenate([head, np.atleast_1d(self.g_hat), np.atleast_1d(self.rho)])


def _occupancy(grid_cell: np.ndarray, layer: int, n_ues: int) -> np.ndarray:
    """(n_rbg, n_ues) boolean: UE holds a layer below `layer` on the RBG."""
    occ = np.zeros((grid_cell.shape[0], n_ues), dtype=bool)
    below = grid_cell[:, :layer]
    m_idx, l_idx = np.nonzero(below != EMPTY)
    occ[m_idx, below[m_idx, l_idx]] = True
    return occ


def _wideband(view: CellView, cand: np.ndarray, d: np.ndarray, ctx: FeatureContext) -> np.ndarray:
    r_hat = np.minimum(view.smoothed[cand] / ctx.r_max, 1.0)
    h_hat = view.rank[cand] / 2.0
    d_hat = np.minimum(d[cand] / ctx.d_max, 1.0)
    b_hat = np.minimum(view.buffer_bytes[cand] / ctx.b_max, 1.0)
    o_hat = (view.wideband_cqi[cand] - ctx.cqi_min) / (ctx.cqi_max - ctx.cqi_min)
    return np.stack([r_hat, h_hat, d_hat, b_hat, o_hat], axis=1)


def build_segment(view: CellView, u: int, d_u: int, ctx: FeatureContext,
                  grid_cell: np.ndarray, layer: int) -> UeFeatureSegment:
    occ = _occupancy(grid_cell, layer, view.n_ues)
    d = np.zeros(view.n_ues)
    d[u] = d_u
    head = _wideband(view, np.array([u]), d, ctx)[0]
    rho = (view.kappa[:, u, :] * occ).max(axis=1)
    g_hat = view.subband_cqi[u] / ctx.g_norm
    return UeFeatureSegment(*head, g_hat=g_hat, rho=rho)


def _check_candidates(candidates, ctx: FeatureContext) -> np.ndarray:
    cand = np.asarray(list(candidates), dtype=np.int64)
    if cand.size > ctx.n_candidates:
        raise ValueError(f"{cand.size} candidates exceed |U| = {ctx.n_candidates}")
    return cand


def candidate_masks(view: CellView, cand: np.ndarray, grid_cell: np.ndarray, layer: int,
                    n_slots: int) -> np.ndarray:
    """(n_rbg, n_slots + 1) validity; the last column (no allocation) is always valid."""
    n_rbg = grid_cell.shape[0]
    masks = np.zeros((n_rbg, n_slots + 1), dtype=bool)
    masks[:, -1] = True
    if cand.size == 0:
        return masks
    occ = _occupancy(grid_cell, layer, view.n_ues)
    valid = ~occ[:, cand]
    if layer > 0:
        valid &= (grid_cell[:, layer - 1] != EMPTY)[:, None]
    masks[:, :cand.size] = valid
    return masks


def build_state_1l(view: CellView, candidates, grid_cell: np.ndarray, layer: int,
                   ctx: FeatureContext) -> tuple[np.ndarray, np.ndarray]:
    """State of length |U|(5 + 2 N_RBG) and per-RBG masks for one user layer."""
    cand = _check_candidates(candidates, ctx)
    n_rbg = grid_cell.shape[0]
    seg_len = N_WIDEBAND + 2 * n_rbg
    state = np.zeros((ctx.n_candidates, seg_len))
    if cand.size:
        occ = _occupancy(grid_cell, layer, view.n_ues)
        d = np.bincount(grid_cell[:, :layer][grid_cell[:, :layer] != EMPTY], minlength=view.n_ues)
        state[:cand.size, :N_WIDEBAND] = _wideband(view, cand, d, ctx)
        state[:cand.size, N_WIDEBAND:N_WIDEBAND + n_rbg] = view.subband_cqi[cand] / ctx.g_norm
        # kappa[m, u, c] * occ[m, c] -> max over c
        rho = (view.kappa[:, cand, :] * occ[:, None, :]).max(axis=2)
        state[:cand.size, N_WIDEBAND + n_rbg:] = rho.T
    masks = candidate_masks(view, cand, grid_cell, layer, ctx.n_candidates)
    return state.ravel(), masks


def build_state_2l(view: CellView, candidates, grid_cell: np.ndarray, layer: int, rbg: int,
                   ctx: FeatureContext) -> tuple[np.ndarray, np.ndarray]:
    """State of length 8|U| + 1 and the mask for one (RBG, layer) decision."""
    cand = _check_candidates(candidates, ctx)
    state = np.zeros(ctx.n_candidates * SEG_2L + 1)
    incumbents = grid_cell[rbg, :layer]
    incumbents = incumbents[incumbents != EMPTY]
    if cand.size:
        seg = np.zeros((ctx.n_candidates, SEG_2L))
        d = np.bincount(grid_cell[grid_cell != EMPTY], minlength=view.n_ues)
        seg[:cand.size, :N_WIDEBAND] = _wideband(view, cand, d, ctx)
        seg[:cand.size, 5] = view.subband_cqi[cand, rbg] / ctx.g_norm
        if incumbents.size:
            k = view.kappa[rbg][np.ix_(cand, incumbents)]
            seg[:cand.size, 6] = k.max(axis=1)
            seg[:cand.size, 7] = k.mean(axis=1)
        state[:-1] = seg.ravel()
    state[-1] = incumbents.size / ctx.n_layers
    masks = candidate_masks(view, cand, grid_cell, layer, ctx.n_candidates)
    return state, masks[rbg]


def check_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
        raise ValueError("permutation must be a bijection on the candidate slots")
    return perm


def inverse_permutation(perm) -> np.ndarray:
    perm = check_permutation(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def permute_segments(state: np.ndarray, masks: np.ndarray, perm,
                     trailing: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Move segment i to slot perm[i]; masks and action labels follow.

    `trailing` scalars at the end of the state (the 2L co-scheduled count)
    are left in place. The no-allocation action keeps its index.
    """
    perm = check_permutation(perm)
    n = perm.size
    body = state[:state.size - trailing] if trailing else state
    segs = body.reshape(n, -1)
    out_segs = np.empty_like(segs)
    out_segs[perm] = segs
    new_state = out_segs.ravel()
    if trailing:
        new_state = np.concatenate([new_state, state[state.size - trailing:]])
    label_map = np.append(perm, n)
    new_masks = np.empty_like(masks)
    new_masks[..., label_map] = masks
    return new_state, new_masks, label_map
