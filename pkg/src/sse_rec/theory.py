"""Numerical companions to the SSE generalization analysis.

``rademacher_samples`` draws realisations of the SSE-smoothed Rademacher sum
``sum_i sigma_i * E_k[loss(E[k], y_i)]`` at a fixed trained model; the sup
over parameters is not taken. ``label_smoothing_check`` shows that SSE-SE on
a one-hot label is label smoothing in expectation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from sse_rec.dataset import InteractionDataset
from sse_rec.embedding import ModelParams
from sse_rec.graph import KnowledgeGraph, TransitionModel

EXACT = "exact"
MONTE_CARLO = "mc"
# which loss a replaced index is scored with
OBSERVED = "observed"  # the replacement interaction's own observed label
LABEL = "label"  # the original row's label y_i


@dataclass
class RadSimConfig:
    num_outer_samples: int = 2000
    mc_inner: int = 64
    p0_grid: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8])
    seed: int = 0
    inner: str = EXACT
    mode: str = OBSERVED

    def __post_init__(self):
        if self.num_outer_samples < 1 or self.mc_inner < 1:
            raise ValueError("sample counts must be >= 1")
        if not self.p0_grid or any(not 0.0 <= p < 1.0 for p in self.p0_grid):
            raise ValueError("p0 values must lie in [0, 1)")
        if self.inner not in (EXACT, MONTE_CARLO):
            raise ValueError(f"inner must be {EXACT!r} or {MONTE_CARLO!r}")
        if self.mode not in (OBSERVED, LABEL):
            raise ValueError(f"mode must be {OBSERVED!r} or {LABEL!r}")
        if self.mode == OBSERVED and self.inner != EXACT:
            raise ValueError("observed mode is always computed exactly")


def _moments(tm: TransitionModel, X: np.ndarray):
    """Transition-averaged first and second moments for every row."""
    n, d = X.shape
    mean = tm.apply(X)
    outer = (X[:, :, None] * X[:, None, :]).reshape(n, d * d)
    second = tm.apply(outer).reshape(n, d, d)
    return mean, second


def expected_sq_losses(params: ModelParams, ds: InteractionDataset, tu: TransitionModel,
                       ti: TransitionModel, chunk: int = 4096) -> np.ndarray:
    """``E_{a ~ p_u(u_i), b ~ p_v(v_i)} (<U[a], V[b]> - r_i)^2`` for every row.

    Exact: the two replacements are independent, so the expectation only
    needs per-row transition means and second moments of each table.
    """
    U, V = params.user_table.values, params.item_table.values
    mu_u, m2_u = _moments(tu, U)
    mu_v, m2_v = _moments(ti, V)
    out = np.empty(len(ds))
    for s in range(0, len(ds), chunk):
        u = ds.users[s:s + chunk]
        v = ds.items[s:s + chunk]
        r = ds.ratings[s:s + chunk]
        sq = np.einsum("nab,nab->n", m2_u[u], m2_v[v])
        cross = np.einsum("nd,nd->n", mu_u[u], mu_v[v])
        out[s:s + chunk] = sq - 2.0 * r * cross + r * r
    return out


def mc_sq_losses(params: ModelParams, ds: InteractionDataset, tu: TransitionModel,
                 ti: TransitionModel, draws: int, rng: np.random.Generator):
    """Monte Carlo version of :func:`expected_sq_losses`; returns (mean, stderr)."""
    U, V = params.user_table.values, params.item_table.values
    a = tu.sample(np.broadcast_to(ds.users, (draws, len(ds))), rng)
    b = ti.sample(np.broadcast_to(ds.items, (draws, len(ds))), rng)
    loss = (np.einsum("snd,snd->sn", U[a], V[b]) - ds.ratings) ** 2
    return loss.mean(axis=0), loss.std(axis=0, ddof=1) / np.sqrt(draws)


def _same_user_pairs(ds: InteractionDataset):
    """All ordered row pairs ``(i, k)`` that share a user, including ``i == k``."""
    order = np.argsort(ds.users, kind="stable")
    counts = np.bincount(ds.users, minlength=ds.num_users)
    starts = np.concatenate([[0], np.cumsum(counts)])
    rows, cols = [], []
    for u in np.flatnonzero(counts):
        members = order[starts[u]:starts[u + 1]]
        rows.append(np.repeat(members, members.size))
        cols.append(np.tile(members, members.size))
    return np.concatenate(rows), np.concatenate(cols)


def observed_smoothed_losses(params: ModelParams, ds: InteractionDataset, tu: TransitionModel,
                             ti: TransitionModel) -> np.ndarray:
    """``(P l)_i`` with ``P`` the joint transition restricted to observed rows.

    ``P[i, k]`` is proportional to ``p_u(u_i, u_k) * p_v(v_i, v_k)`` over the
    rows ``k`` of ``ds`` and normalised per row; ``l_k`` is row k's squared
    error under its own rating. The user transition must be identity or
    uniform.
    """
    if tu.kind == "graph" and not tu.is_identity:
        raise NotImplementedError("observed mode supports identity or uniform user transitions")
    U, V = params.user_table.values, params.item_table.values
    loss = (np.einsum("nd,nd->n", U[ds.users], V[ds.items]) - ds.ratings) ** 2
    if tu.is_identity:
        keep, other = 1.0, 0.0
    else:
        keep, other = 1.0 - tu.p0, tu.p0 / (tu.num_nodes - 1)
    n = len(ds)
    i, k = _same_user_pairs(ds)
    block = sp.csr_matrix((ti.prob_many(ds.items[i], ds.items[k]), (i, k)), shape=(n, n))

    def weighted(x):
        per_item = np.bincount(ds.items, weights=x, minlength=ds.num_items)
        spread = ti.apply(per_item)[ds.items] if other else 0.0
        return other * spread + (keep - other) * (block @ x)

    return weighted(loss) / weighted(np.ones(n))


def rademacher_samples(params: ModelParams, ds: InteractionDataset, tms, cfg: RadSimConfig,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """One value of ``sum_i sigma_i * smoothed_loss_i`` per outer sample.

    ``tms`` is ``(user_transition, item_transition)``. In ``observed`` mode
    (the default) each row is smoothed over the other observed rows, each
    scored with its own rating, see :func:`observed_smoothed_losses`. In
    ``label`` mode the row keeps its rating ``y_i`` and the smoothed loss is
    the transition expectation of the squared error, exact unless
    ``cfg.inner == "mc"`` (mean over ``cfg.mc_inner`` joint draws).
    """
    tu, ti = tms
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if cfg.mode == OBSERVED:
        smoothed = observed_smoothed_losses(params, ds, tu, ti)
    elif cfg.inner == EXACT:
        smoothed = expected_sq_losses(params, ds, tu, ti)
    else:
        smoothed, _ = mc_sq_losses(params, ds, tu, ti, cfg.mc_inner, rng)
    out = np.empty(cfg.num_outer_samples)
    block = max(1, 2**22 // max(len(ds), 1))
    for s in range(0, cfg.num_outer_samples, block):
        m = min(block, cfg.num_outer_samples - s)
        sigma = rng.integers(0, 2, size=(m, len(ds))) * 2.0 - 1.0
        out[s:s + m] = sigma @ smoothed
    return out


def rademacher_sweep(params: ModelParams, ds: InteractionDataset, cfg: RadSimConfig,
                     item_graph: KnowledgeGraph | None = None, rho: float = 1.0) -> dict:
    """Samples for every ``p0`` in ``cfg.p0_grid``, same p0 on both tables.

    With ``item_graph`` the item table uses graph transitions, otherwise both
    tables are uniform. Every grid point gets its own seeded stream.
    """
    results = {}
    streams = np.random.SeedSequence(cfg.seed).spawn(len(cfg.p0_grid))
    for p0, ss in zip(cfg.p0_grid, streams):
        tu = TransitionModel.uniform(ds.num_users, p0)
        if item_graph is None:
            ti = TransitionModel.uniform(ds.num_items, p0)
        else:
            ti = TransitionModel.from_graph(item_graph, p0, rho)
        results[p0] = rademacher_samples(params, ds, (tu, ti), cfg, np.random.default_rng(ss))
    return results


def write_radsim_csv(results: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["p0", "sample_index", "value"])
        for p0, values in results.items():
            for s, v in enumerate(values):
                w.writerow([repr(float(p0)), s, repr(float(v))])


def median_abs_with_se(samples, n_boot: int = 500, seed: int = 0):
    """Median of ``|samples|`` and its bootstrap standard error."""
    a = np.abs(np.asarray(samples))
    rng = np.random.default_rng(seed)
    boots = np.median(a[rng.integers(0, a.size, size=(n_boot, a.size))], axis=1)
    return float(np.median(a)), float(boots.std(ddof=1))


def label_smoothing_check(probs, true_label: int, p0: float):
    """Expected cross-entropy under SSE-SE label replacement vs. label smoothing.

    The first value averages ``-log probs[y]`` over replacement draws of the
    label; the second is the cross-entropy against the smoothed target.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("probs must be a probability vector summing to 1")
    if np.any(probs <= 0):
        raise ValueError("probs must be strictly positive")
    n = probs.size
    tm = TransitionModel.uniform(n, p0) if n > 1 else TransitionModel.identity(1)
    nll = -np.log(probs)
    sse_expected = sum(tm.prob(true_label, y) * nll[y] for y in range(n))
    target = np.full(n, p0 / (n - 1) if n > 1 else 0.0)
    target[true_label] = 1.0 - p0 if n > 1 else 1.0
    smoothed = float(-(target * np.log(probs)).sum())
    return float(sse_expected), smoothed
