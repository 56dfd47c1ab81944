"""PF time-domain selection, heuristic spatial-domain schedulers and the PF expert."""

from __future__ import annotations

import numpy as np

from .simenv import EMPTY, CellView

TOL = 1e-9


def _cap(view: CellView, u: int, remaining_bits=None) -> float:
    bits = view.buffer_bytes[u] * 8.0 if remaining_bits is None else remaining_bits[u]
    return max(bits, 0.0) / view.tti


def pf_metric(view: CellView, u: int, m: int, scheduled=(), remaining_bits=None) -> float:
    """T_{u,m,l} / R_u with the rate clamped by what the buffer can absorb."""
    t = min(view.rate(u, m, scheduled), _cap(view, u, remaining_bits))
    return t / max(float(view.smoothed[u]), 1.0)


def pf_sum(view: CellView, m: int, members, remaining_bits=None) -> float:
    members = list(members)
    if not members:
        return 0.0
    rates = view.rates_on(m, members)
    total = 0.0
    for x, t in zip(members, rates):
        total += min(t, _cap(view, x, remaining_bits)) / max(float(view.smoothed[x]), 1.0)
    return total


def td_select(view: CellView, n: int) -> list[int]:
    """Top-n UEs by wideband PF metric, descending; empty buffers excluded."""
    su = np.minimum(view.rank, view.mimo_limit)[:, None] * view.bandwidth * np.log2(1.0 + view.sinr)
    metric = su.sum(axis=1) / np.maximum(view.smoothed, 1.0)
    eligible = np.nonzero(view.buffer_bytes > 0)[0]
    order = eligible[np.argsort(-metric[eligible], kind="stable")]
    return [int(u) for u in order[:n]]


def fds_pf(view: CellView, candidates, grid_cell: np.ndarray) -> np.ndarray:
    """Layer-1 assignment: PF-argmax candidate per RBG, tracking the remaining buffer."""
    grid_cell = grid_cell.copy()
    remaining = view.buffer_bytes * 8.0
    for m in range(grid_cell.shape[0]):
        best, best_val = EMPTY, TOL
        for u in candidates:
            v = pf_metric(view, u, m, (), remaining)
            if v > best_val:
                best, best_val = u, v
        grid_cell[m, 0] = best
        if best != EMPTY:
            remaining[best] -= view.rate(best, m) * view.tti
    return grid_cell


def baseline_sds(view: CellView, candidates, grid_cell: np.ndarray) -> np.ndarray:
    """First-fit pairing in PF order: add the first UE that raises RBG sum throughput."""
    grid_cell = grid_cell.copy()
    n_rbg, n_layers = grid_cell.shape
    for m in range(n_rbg):
        for layer in range(1, n_layers):
            members = [int(x) for x in grid_cell[m, :layer] if x != EMPTY]
            if len(members) < layer:
                break
            base = view.sum_rate(m, members)
            chosen = EMPTY
            for u in candidates:
                if u in members:
                    continue
                if view.sum_rate(m, members + [u]) > base + TOL:
                    chosen = u
                    break
            if chosen == EMPTY:
                break
            grid_cell[m, layer] = chosen
    return grid_cell


def pf_greedy_sds(view: CellView, candidates, grid_cell: np.ndarray) -> np.ndarray:
    """Per RBG and layer, the candidate with the largest PF sum among those that
    raise the RBG sum throughput."""
    grid_cell = grid_cell.copy()
    n_rbg, n_layers = grid_cell.shape
    for m in range(n_rbg):
        for layer in range(1, n_layers):
            members = [int(x) for x in grid_cell[m, :layer] if x != EMPTY]
            if len(members) < layer:
                break
            base = view.sum_rate(m, members)
            chosen, best_pf = EMPTY, -np.inf
            for u in candidates:
                if u in members:
                    continue
                trial = members + [u]
                if view.sum_rate(m, trial) <= base + TOL:
                    continue
                pf = pf_sum(view, m, trial)
                if pf > best_pf:
                    chosen, best_pf = u, pf
            if chosen == EMPTY:
                break
            grid_cell[m, layer] = chosen
    return grid_cell


def schedule_cell(view: CellView, candidates, n_rbg: int, n_layers: int,
                  kind: str = "baseline") -> np.ndarray:
    grid_cell = np.full((n_rbg, n_layers), EMPTY, dtype=np.int64)
    grid_cell = fds_pf(view, candidates, grid_cell)
    if kind == "baseline":
        return baseline_sds(view, candidates, grid_cell)
    if kind == "pf-greedy":
        return pf_greedy_sds(view, candidates, grid_cell)
    raise ValueError(f"unknown heuristic {kind!r}")


def _action_values(view: CellView, candidates, grid_cell: np.ndarray, m: int, layer: int,
                   mask_row: np.ndarray) -> np.ndarray:
    """PF sum on RBG m for every action; -inf where masked. Last entry is no allocation."""
    incumbents = [int(x) for x in grid_cell[m, :layer] if x != EMPTY]
    values = np.full(mask_row.size, -np.inf)
    values[-1] = pf_sum(view, m, incumbents)
    for i, u in enumerate(candidates):
        if i < mask_row.size - 1 and mask_row[i]:
            values[i] = pf_sum(view, m, incumbents + [int(u)])
    return values


def expert_choice(view: CellView, candidates, grid_cell: np.ndarray, m: int, layer: int,
                  mask_row: np.ndarray) -> int:
    values = _action_values(view, candidates, grid_cell, m, layer, mask_row)
    best = int(np.argmax(values[:-1])) if mask_row[:-1].any() else -1
    if best < 0 or values[best] <= values[-1] + TOL:
        return mask_row.size - 1
    return best


def expert_action(view: CellView, candidates, grid_cell: np.ndarray, layer: int,
                  masks: np.ndarray) -> np.ndarray:
    """Per-RBG one-hot distributions over |U|+1 actions from the PF expert."""
    masks = np.atleast_2d(masks)
    out = np.zeros(masks.shape)
    for m in range(masks.shape[0]):
        out[m, expert_choice(view, candidates, grid_cell, m, layer, masks[m])] = 1.0
    return out


def better_choice_exists(view: CellView, candidates, grid_cell: np.ndarray, m: int, layer: int,
                         chosen: int, mask_row: np.ndarray) -> int:
    """v_m: -1 if another valid action gives a strictly higher PF sum on RBG m."""
    values = _action_values(view, candidates, grid_cell, m, layer, mask_row)
    return -1 if np.max(values) > values[chosen] + TOL else 1
