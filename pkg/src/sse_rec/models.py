"""MF and BPR losses, the SSE-aware SGD trainer, and the graph Laplacian baseline."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from sse_rec import kernels
from sse_rec.dataset import InteractionDataset, Split
from sse_rec.embedding import ModelParams, dropout_scale
from sse_rec.graph import KnowledgeGraph, TransitionModel

log = logging.getLogger(__name__)

MF = "mf"
BPR = "bpr"

# enumeration budget of sse_objective_exact, in joint loss terms
MAX_EXACT_TERMS = 10**6


def mf_loss_grad(u, v, r, lam):
    """Squared loss ``(<u,v> - r)^2 + lam (|u|^2 + |v|^2)`` and its gradients."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    e = float(np.dot(u, v)) - r
    loss = e * e + lam * (float(np.dot(u, u)) + float(np.dot(v, v)))
    return loss, 2.0 * e * v + 2.0 * lam * u, 2.0 * e * u + 2.0 * lam * v


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    # stable for large |x|
    return np.exp(-np.logaddexp(0.0, -x))


def bpr_loss_grad(u, v_pos, v_neg, lam):
    """``-log sigmoid(<u, v_pos> - <u, v_neg>)`` plus L2, with gradients."""
    u = np.asarray(u, dtype=np.float64)
    vp = np.asarray(v_pos, dtype=np.float64)
    vn = np.asarray(v_neg, dtype=np.float64)
    x = float(np.dot(u, vp) - np.dot(u, vn))
    s = float(_sigmoid(-x))
    loss = float(_softplus(-x)) + lam * (float(np.dot(u, u)) + float(np.dot(vp, vp)) + float(np.dot(vn, vn)))
    grad_u = -s * (vp - vn) + 2.0 * lam * u
    grad_pos = -s * u + 2.0 * lam * vp
    grad_neg = s * u + 2.0 * lam * vn
    return loss, grad_u, grad_pos, grad_neg


def glr_penalty_grad(table, graph: KnowledgeGraph, beta: float):
    """``beta * sum_{edges} |E[j] - E[k]|^2`` and its gradient ``2 beta L E``."""
    values = table.values if hasattr(table, "values") else np.asarray(table, dtype=np.float64)
    if graph.num_nodes != values.shape[0]:
        raise ValueError(f"graph has {graph.num_nodes} nodes, table has {values.shape[0]} rows")
    edges = graph.edge_array()
    if beta == 0.0 or len(edges) == 0:
        return 0.0, np.zeros_like(values)
    diff = values[edges[:, 0]] - values[edges[:, 1]]
    penalty = beta * float(np.sum(diff * diff))
    lap_e = graph.degrees[:, None] * values - graph.to_scipy() @ values
    return penalty, 2.0 * beta * lap_e


class NegativeSamplingError(ValueError):
    pass


def sample_negative(user: int, positives, num_items: int, rng: np.random.Generator) -> int:
    """Uniform draw over items outside ``positives``."""
    positives = set(int(p) for p in positives)
    if len(positives) >= num_items:
        raise NegativeSamplingError(f"user {user} has interacted with every item")
    while True:
        k = int(rng.integers(num_items))
        if k not in positives:
            return k


def _positive_keys(ds: InteractionDataset) -> np.ndarray:
    return np.unique(ds.users * ds.num_items + ds.items)


def _sample_negatives(users: np.ndarray, pos_keys: np.ndarray, num_items: int, rng) -> np.ndarray:
    """Vectorised rejection sampling of one negative per entry of ``users``."""
    out = np.empty(users.size, dtype=np.int64)
    pending = np.arange(users.size)
    while pending.size:
        cand = rng.integers(0, num_items, size=pending.size)
        q = users[pending] * num_items + cand
        pos = np.minimum(np.searchsorted(pos_keys, q), len(pos_keys) - 1)
        ok = pos_keys[pos] != q
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    return out


@dataclass
class TrainConfig:
    """Optimizer, regularizer and SSE settings.

    ``sse_user``/``sse_item`` default to identity (no replacement). GLR is
    active when ``glr_beta > 0`` and at least one of the GLR graphs is set.
    """

    lr: float = 0.01
    weight_decay: float = 0.0
    dropout: float = 0.0
    sse_user: TransitionModel | None = None
    sse_item: TransitionModel | None = None
    glr_beta: float = 0.0
    glr_item_graph: KnowledgeGraph | None = None
    glr_user_graph: KnowledgeGraph | None = None
    epochs: int = 10
    minibatch: int = 1
    negatives_per_positive: int = 1
    seed: int = 0
    metric_k: int = 10
    clip: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.glr_beta < 0:
            raise ValueError("glr_beta must be >= 0")
        for name in ("epochs", "minibatch", "negatives_per_positive", "metric_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def transitions(self, num_users: int, num_items: int):
        tu = self.sse_user or TransitionModel.identity(num_users)
        ti = self.sse_item or TransitionModel.identity(num_items)
        if tu.num_nodes != num_users:
            raise ValueError(f"sse_user covers {tu.num_nodes} users, dataset has {num_users}")
        if ti.num_nodes != num_items:
            raise ValueError(f"sse_item covers {ti.num_nodes} items, dataset has {num_items}")
        return tu, ti


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    metric: float
    seconds: float


@dataclass
class TrainReport:
    metric_name: str
    records: list = field(default_factory=list)

    def curve(self) -> np.ndarray:
        return np.array([r.metric for r in self.records])

    def to_csv(self, path, include_time: bool = True) -> None:
        """Columns ``epoch,train_loss,metric[,seconds]``; without time the file is reproducible byte for byte."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "metric"] + (["seconds"] if include_time else []))
            for r in self.records:
                row = [r.epoch, repr(r.train_loss), repr(r.metric)]
                w.writerow(row + ([f"{r.seconds:.6f}"] if include_time else []))


def _empty_scale(d):
    return np.zeros((0, d))


def _draw_mf(ds, tu, ti, rows, p_drop, d, rng):
    """Replaced indices and dropout multipliers for the rows visited, in order."""
    ku = tu.sample(ds.users[rows], rng)
    ki = ti.sample(ds.items[rows], rng)
    if p_drop > 0:
        su = dropout_scale((rows.size, d), p_drop, rng)
        si = dropout_scale((rows.size, d), p_drop, rng)
    else:
        su = si = _empty_scale(d)
    return ku, ki, ds.ratings[rows], su, si


def _draw_bpr(ds, tu, ti, rows, n_neg, pos_keys, p_drop, d, rng):
    users = np.repeat(ds.users[rows], n_neg)
    pos = np.repeat(ds.items[rows], n_neg)
    neg = _sample_negatives(users, pos_keys, ds.num_items, rng)
    ku = tu.sample(users, rng)
    kp = ti.sample(pos, rng)
    kn = ti.sample(neg, rng)
    if p_drop > 0:
        scales = [dropout_scale((users.size, d), p_drop, rng) for _ in range(3)]
    else:
        scales = [_empty_scale(d)] * 3
    return ku, kp, kn, *scales


def _check_sizes(ds: InteractionDataset, params: ModelParams):
    if params.user_table.rows != ds.num_users or params.item_table.rows != ds.num_items:
        raise ValueError(
            f"tables are {params.user_table.rows}x{params.item_table.rows}, "
            f"dataset needs {ds.num_users}x{ds.num_items}"
        )


def train(model_kind: str, split: Split, cfg: TrainConfig, params: ModelParams):
    """SGD with stochastic embedding replacement.

    Every epoch visits the training rows in a seeded random order. For each
    row the user and item indices are replaced by draws from the configured
    transition models, dropout is applied to the looked-up vectors, and the
    loss gradient is applied to the replaced rows. Weight decay touches only
    those rows. A non-zero ``glr_beta`` adds one full GLR gradient step per
    epoch.

    For BPR each training row is a positive, paired with
    ``negatives_per_positive`` uniformly drawn non-positives.

    Returns a trained copy of ``params`` and a :class:`TrainReport` whose
    metric is test RMSE (MF) or test P@k (BPR).
    """
    from sse_rec.evaluation import precision_at_k, rmse

    if model_kind not in (MF, BPR):
        raise ValueError(f"unknown model kind {model_kind!r}")
    tr = split.train
    _check_sizes(tr, params)
    if (split.test.num_users, split.test.num_items) != (tr.num_users, tr.num_items):
        raise ValueError("train and test must share table sizes")
    tu, ti = cfg.transitions(tr.num_users, tr.num_items)
    for g, rows in ((cfg.glr_item_graph, tr.num_items), (cfg.glr_user_graph, tr.num_users)):
        if g is not None and g.num_nodes != rows:
            raise ValueError(f"GLR graph has {g.num_nodes} nodes, table has {rows} rows")
    params = params.copy()
    U = params.user_table.values
    V = params.item_table.values
    d = params.dim
    n = len(tr)
    rng = np.random.default_rng(cfg.seed)
    pos_keys = _positive_keys(tr) if model_kind == BPR else None
    if model_kind == BPR:
        counts = np.bincount(pos_keys // tr.num_items, minlength=tr.num_users)
        if np.any(counts >= tr.num_items):
            raise ValueError("a user has interacted with every item; no negatives to sample")
    report = TrainReport("rmse" if model_kind == MF else f"p@{cfg.metric_k}")
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        rows = rng.permutation(n)
        # divergence is caught below, identically for compiled and fallback kernels
        quiet = np.errstate(over="ignore", invalid="ignore")
        if model_kind == MF:
            ku, ki, r, su, si = _draw_mf(tr, tu, ti, rows, cfg.dropout, d, rng)
            with quiet:
                total = kernels.mf_sgd_epoch(U, V, ku, ki, r, su, si, cfg.lr, cfg.weight_decay, cfg.minibatch)
            steps = n
        else:
            ku, kp, kn, su, sp, sn = _draw_bpr(
                tr, tu, ti, rows, cfg.negatives_per_positive, pos_keys, cfg.dropout, d, rng
            )
            with quiet:
                total = kernels.bpr_sgd_epoch(U, V, ku, kp, kn, su, sp, sn, cfg.lr, cfg.weight_decay, cfg.minibatch)
            steps = ku.size
        if cfg.glr_beta > 0:
            if cfg.glr_item_graph is not None:
                V -= cfg.lr * glr_penalty_grad(V, cfg.glr_item_graph, cfg.glr_beta)[1]
            if cfg.glr_user_graph is not None:
                U -= cfg.lr * glr_penalty_grad(U, cfg.glr_user_graph, cfg.glr_beta)[1]
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise FloatingPointError(f"training diverged at epoch {epoch}; lower lr")
        if model_kind == MF:
            metric = rmse(params, split.test, clip=cfg.clip)
        else:
            metric = precision_at_k(params, tr, split.test, [cfg.metric_k])[cfg.metric_k]
        rec = EpochRecord(epoch, total / steps, metric, time.perf_counter() - t0)
        log.debug("epoch %d loss %.6f %s %.6f", epoch, rec.train_loss, report.metric_name, metric)
        report.records.append(rec)
    return params, report


def _mf_losses(U, V, ku, ki, r, lam):
    e = np.einsum("...d,...d->...", U[ku], V[ki]) - r
    return e * e + lam * (np.sum(U[ku] ** 2, axis=-1) + np.sum(V[ki] ** 2, axis=-1))


def _bpr_losses(U, V, ku, kp, kn, lam):
    u, p, q = U[ku], V[kp], V[kn]
    x = np.einsum("...d,...d->...", u, p - q)
    reg = np.sum(u * u, axis=-1) + np.sum(p * p, axis=-1) + np.sum(q * q, axis=-1)
    return _softplus(-x) + lam * reg


def sse_objective_exact(model_kind: str, ds: InteractionDataset, cfg: TrainConfig, params: ModelParams) -> float:
    """Exact SSE objective by enumerating every joint replacement.

    MF: ``sum_i sum_{a,b} p_u(u_i, a) p_v(v_i, b) loss(U[a], V[b], r_i)``.
    BPR additionally averages over the uniform negative of each positive,
    replacing it with the item table's transition. Dropout is not part of
    the objective and must be off.
    """
    if cfg.dropout != 0.0:
        raise ValueError("the exact objective is defined without dropout")
    _check_sizes(ds, params)
    tu, ti = cfg.transitions(ds.num_users, ds.num_items)
    U, V = params.user_table.values, params.item_table.values
    lam = cfg.weight_decay
    nu, ni = ds.num_users, ds.num_items
    if model_kind == MF:
        terms = len(ds) * nu * ni
        if terms > MAX_EXACT_TERMS:
            raise ValueError(f"{terms} joint terms exceed the enumeration budget {MAX_EXACT_TERMS}")
        a, b = np.meshgrid(np.arange(nu), np.arange(ni), indexing="ij")
        total = 0.0
        for n in range(len(ds)):
            loss = _mf_losses(U, V, a, b, ds.ratings[n], lam)
            total += tu.row(ds.users[n]) @ loss @ ti.row(ds.items[n])
        return float(total)
    if model_kind == BPR:
        positives = ds.positives_by_user()
        terms = sum(
            (ni - len(positives[ds.users[n]])) * nu * ni * ni for n in range(len(ds))
        )
        if terms > MAX_EXACT_TERMS:
            raise ValueError(f"{terms} joint terms exceed the enumeration budget {MAX_EXACT_TERMS}")
        a, b, c = np.meshgrid(np.arange(nu), np.arange(ni), np.arange(ni), indexing="ij")
        loss = _bpr_losses(U, V, a, b, c, lam)
        total = 0.0
        for n in range(len(ds)):
            negs = np.setdiff1d(np.arange(ni), positives[ds.users[n]])
            if negs.size == 0:
                raise ValueError(f"user {ds.users[n]} has no negatives")
            neg_row = np.mean([ti.row(q) for q in negs], axis=0)
            total += np.einsum("a,b,c,abc->", tu.row(ds.users[n]), ti.row(ds.items[n]), neg_row, loss)
        return float(total)
    raise ValueError(f"unknown model kind {model_kind!r}")


def sampled_objective(model_kind: str, ds: InteractionDataset, cfg: TrainConfig, params: ModelParams,
                      draws: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo draws of the SSE objective using the trainer's own sampling.

    Each draw replaces every row of ``ds`` exactly as one training epoch
    would and returns the summed loss at the (fixed) parameters.
    """
    _check_sizes(ds, params)
    tu, ti = cfg.transitions(ds.num_users, ds.num_items)
    U, V = params.user_table.values, params.item_table.values
    n = len(ds)
    rows = np.tile(np.arange(n), draws)
    if model_kind == MF:
        ku, ki, r, _, _ = _draw_mf(ds, tu, ti, rows, 0.0, params.dim, rng)
        losses = _mf_losses(U, V, ku, ki, r, cfg.weight_decay)
    elif model_kind == BPR:
        ku, kp, kn, *_ = _draw_bpr(ds, tu, ti, rows, 1, _positive_keys(ds), 0.0, params.dim, rng)
        losses = _bpr_losses(U, V, ku, kp, kn, cfg.weight_decay)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    return losses.reshape(draws, n).sum(axis=1)
