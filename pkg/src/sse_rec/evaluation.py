"""Held-out metrics and PCA projection of embedding tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from sse_rec.dataset import InteractionDataset
from sse_rec.embedding import TABLE_NAMES, EmbeddingTable, ModelParams


@dataclass
class MetricReport:
    rmse: float | None = None
    precision_at: dict = field(default_factory=dict)

    def as_rows(self):
        rows = []
        if self.rmse is not None:
            rows.append(("rmse", self.rmse))
        rows.extend((f"p@{k}", v) for k, v in sorted(self.precision_at.items()))
        return rows


def predict(params: ModelParams, users, items) -> np.ndarray:
    U, V = params.user_table.values, params.item_table.values
    return np.einsum("nd,nd->n", U[np.asarray(users)], V[np.asarray(items)])


def rmse(params: ModelParams, test: InteractionDataset, clip: bool = True) -> float:
    """Root mean squared error, predictions optionally clipped to the rating range."""
    if len(test) == 0:
        raise ValueError("empty test set")
    pred = predict(params, test.users, test.items)
    if clip:
        pred = np.clip(pred, test.rating_min, test.rating_max)
    return float(np.sqrt(np.mean((pred - test.ratings) ** 2)))


def precision_at_k(params: ModelParams, train: InteractionDataset, test: InteractionDataset, ks) -> dict:
    """Mean per-user precision of the top-k list.

    Candidates for a user are all items that are not among their training
    positives; ties go to the lower item index. Users without test positives
    are left out of the mean.
    """
    ks = [int(k) for k in ks]
    if not ks or min(ks) < 1:
        raise ValueError("ks must be a non-empty list of positive integers")
    test_pos = test.positives_by_user()
    train_pos = train.positives_by_user()
    users = [u for u in range(test.num_users) if len(test_pos[u])]
    if not users:
        raise ValueError("no user has test positives")
    U, V = params.user_table.values, params.item_table.values
    kmax = max(ks)
    sums = dict.fromkeys(ks, 0.0)
    for start in range(0, len(users), 256):
        block = users[start:start + 256]
        scores = U[block] @ V.T
        for row, u in enumerate(block):
            s = scores[row]
            s[train_pos[u]] = -np.inf
            ranked = np.argsort(-s, kind="stable")[:kmax]
            hit = np.isin(ranked, test_pos[u])
            for k in ks:
                sums[k] += hit[:k].sum() / k
    return {k: sums[k] / len(users) for k in ks}


def evaluate(params, train, test, ks=(1, 5, 10), clip=True, kind="mf") -> MetricReport:
    if kind == "mf":
        return MetricReport(rmse=rmse(params, test, clip))
    return MetricReport(precision_at=precision_at_k(params, train, test, ks))


def _top_eigvecs(cov: np.ndarray, k: int, tol: float, max_iter: int, seed: int):
    """Block subspace iteration with Rayleigh-Ritz extraction.

    Stops once every wanted Ritz pair has residual below ``tol * |cov|``.
    """
    d = cov.shape[0]
    block = min(d, 2 * k + 4)
    scale = max(np.linalg.norm(cov, 2), np.finfo(float).tiny)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, block)))
    for _ in range(max_iter):
        q, _ = np.linalg.qr(cov @ q)
        ritz_vals, ritz_vecs = np.linalg.eigh(q.T @ cov @ q)
        order = np.argsort(ritz_vals)[::-1]
        vals = ritz_vals[order[:k]]
        vecs = q @ ritz_vecs[:, order[:k]]
        resid = np.linalg.norm(cov @ vecs - vecs * vals, axis=0)
        if np.all(resid <= tol * scale):
            return vals, vecs
        q = q @ ritz_vecs[:, order]
    raise RuntimeError(f"eigensolver did not reach tol={tol} in {max_iter} iterations")


def pca_project(table, out_dim: int = 3, tol: float = 1e-9, max_iter: int = 10_000) -> np.ndarray:
    """Centre the rows and project onto the leading ``out_dim`` principal axes.

    Columns come out in decreasing explained variance. Each axis is signed
    so that its largest-magnitude loading is positive.
    """
    x = table.values if isinstance(table, EmbeddingTable) else np.asarray(table, dtype=np.float64)
    n, d = x.shape
    if not 1 <= out_dim <= d:
        raise ValueError(f"out_dim must lie in [1, {d}], got {out_dim}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(n - 1, 1)
    _, vecs = _top_eigvecs(cov, out_dim, tol, max_iter, seed=0)
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(out_dim)])
    flip[flip == 0] = 1.0
    return xc @ (vecs * flip)


def export_pca_csv(params: ModelParams, path, out_dim: int = 3, tables=("user", "item")) -> None:
    """CSV ``table,index,pc1..pc{out_dim}``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "index"] + [f"pc{c + 1}" for c in range(out_dim)])
        for table in (params.user_table, params.item_table):
            name = TABLE_NAMES[table.table_id]
            if name not in tables:
                continue
            proj = pca_project(table, out_dim)
            for j, row in enumerate(proj):
                w.writerow([name, j] + [repr(float(x)) for x in row])
