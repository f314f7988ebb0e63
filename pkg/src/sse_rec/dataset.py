"""Interaction data: TSV ingestion, id remapping, holdout splits, synthetic data."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from sse_rec.graph import KnowledgeGraph

DEFAULT_SCHEMA = ("user", "item", "rating", "timestamp")


class DatasetError(ValueError):
    """Raised for malformed interaction files."""


@dataclass
class IdMap:
    """Bijection between raw string ids and contiguous indices."""

    raw_to_index: dict = field(default_factory=dict)
    index_to_raw: list = field(default_factory=list)

    def add(self, raw: str) -> int:
        idx = self.raw_to_index.get(raw)
        if idx is None:
            idx = len(self.index_to_raw)
            self.raw_to_index[raw] = idx
            self.index_to_raw.append(raw)
        return idx

    @classmethod
    def identity(cls, n: int) -> "IdMap":
        raws = [str(i) for i in range(n)]
        return cls({r: i for i, r in enumerate(raws)}, raws)

    def __len__(self):
        return len(self.index_to_raw)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["raw_id", "index"])
            for i, raw in enumerate(self.index_to_raw):
                w.writerow([raw, i])

    @classmethod
    def load_csv(cls, path) -> "IdMap":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        rows.sort(key=lambda r: int(r["index"]))
        if [int(r["index"]) for r in rows] != list(range(len(rows))):
            raise DatasetError(f"{path}: indices are not contiguous from 0")
        raws = [r["raw_id"] for r in rows]
        return cls({r: i for i, r in enumerate(raws)}, raws)


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Explicit-feedback triples ``(user, item, rating)`` plus optional timestamps.

    Arrays are made read-only on construction.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    num_users: int
    num_items: int
    timestamps: np.ndarray | None = None
    rating_min: float | None = None
    rating_max: float | None = None

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        ratings = np.ascontiguousarray(self.ratings, dtype=np.float64)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise ValueError("users, items and ratings must be 1-d arrays of equal length")
        if self.num_users < 1 or self.num_items < 1:
            raise ValueError("num_users and num_items must be >= 1")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise ValueError("item index out of range")
        lo = self.rating_min if self.rating_min is not None else (ratings.min() if ratings.size else 0.0)
        hi = self.rating_max if self.rating_max is not None else (ratings.max() if ratings.size else 0.0)
        if ratings.size and (ratings.min() < lo or ratings.max() > hi):
            raise ValueError("rating outside [rating_min, rating_max]")
        ts = self.timestamps
        if ts is not None:
            ts = np.ascontiguousarray(ts, dtype=np.int64)
            if ts.shape != users.shape:
                raise ValueError("timestamps must match interactions")
            ts.setflags(write=False)
        for arr in (users, items, ratings):
            arr.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ratings", ratings)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "rating_min", float(lo))
        object.__setattr__(self, "rating_max", float(hi))

    def __len__(self):
        return len(self.users)

    @property
    def interactions(self) -> list[tuple]:
        ts = self.timestamps if self.timestamps is not None else [None] * len(self)
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist(), list(ts)))

    def subset(self, rows) -> "InteractionDataset":
        """Rows ``rows`` with table sizes and rating bounds preserved."""
        rows = np.asarray(rows, dtype=np.int64)
        return InteractionDataset(
            self.users[rows],
            self.items[rows],
            self.ratings[rows],
            self.num_users,
            self.num_items,
            None if self.timestamps is None else self.timestamps[rows],
            self.rating_min,
            self.rating_max,
        )

    def positives_by_user(self) -> list[np.ndarray]:
        """Sorted unique item indices per user."""
        order = np.lexsort((self.items, self.users))
        u, it = self.users[order], self.items[order]
        bounds = np.searchsorted(u, np.arange(self.num_users + 1))
        return [np.unique(it[bounds[i]:bounds[i + 1]]) for i in range(self.num_users)]


@dataclass(frozen=True, eq=False)
class Split:
    train: InteractionDataset
    test: InteractionDataset


def load_tsv(path, schema: Sequence[str] = DEFAULT_SCHEMA, sep: str = "\t"):
    """Read one interaction per line; ``#`` lines are comments.

    Returns ``(dataset, {"user": IdMap, "item": IdMap})``. Ids are assigned in
    order of first appearance. Columns not named in ``schema`` are ignored;
    ``timestamp`` is kept only if every row carries one.
    """
    schema = list(schema)
    for col in ("user", "item", "rating"):
        if col not in schema:
            raise ValueError(f"schema must name a {col!r} column")
    cu, ci, cr = schema.index("user"), schema.index("item"), schema.index("rating")
    ct = schema.index("timestamp") if "timestamp" in schema else None
    need = max(cu, ci, cr) + 1
    umap, imap = IdMap(), IdMap()
    users, items, ratings, stamps = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split(sep)
            if len(parts) < max(need, 3):
                raise DatasetError(f"{path}:{lineno}: expected at least {max(need, 3)} fields, got {len(parts)}")
            try:
                r = float(parts[cr])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric rating {parts[cr]!r}") from None
            if not np.isfinite(r):
                raise DatasetError(f"{path}:{lineno}: non-finite rating {parts[cr]!r}")
            users.append(umap.add(parts[cu]))
            items.append(imap.add(parts[ci]))
            ratings.append(r)
            if ct is not None and ct < len(parts) and parts[ct] != "" and stamps is not None:
                try:
                    stamps.append(int(parts[ct]))
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: non-integer timestamp {parts[ct]!r}") from None
            else:
                stamps = None
    if not users:
        raise DatasetError(f"{path}: no interactions")
    ds = InteractionDataset(
        np.array(users), np.array(items), np.array(ratings), len(umap), len(imap),
        None if stamps is None else np.array(stamps),
    )
    return ds, {"user": umap, "item": imap}


def export_tsv(ds: InteractionDataset, idmaps: dict, path) -> None:
    """Write ``ds`` back out in the default column order."""
    umap, imap = idmaps["user"], idmaps["item"]
    with open(path, "w", encoding="utf-8") as fh:
        for n in range(len(ds)):
            fields = [umap.index_to_raw[ds.users[n]], imap.index_to_raw[ds.items[n]], repr(float(ds.ratings[n]))]
            if ds.timestamps is not None:
                fields.append(str(ds.timestamps[n]))
            fh.write("\t".join(fields) + "\n")


def split_holdout(ds: InteractionDataset, test_fraction: float, seed: int) -> Split:
    """Random holdout that never moves a user's last interaction into test.

    Rows are visited in a seeded random order and sent to test while the
    user would keep at least one training row, until
    ``round(test_fraction * len(ds))`` rows are held out.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(ds)
    if n < 2:
        raise ValueError("need at least 2 interactions to split")
    target = int(np.floor(test_fraction * n + 0.5))
    if target < 1:
        raise ValueError(f"test_fraction {test_fraction} leaves no test rows for {n} interactions")
    rng = np.random.default_rng(seed)
    remaining = np.bincount(ds.users, minlength=ds.num_users)
    is_test = np.zeros(n, dtype=bool)
    taken = 0
    for row in rng.permutation(n):
        if taken == target:
            break
        u = ds.users[row]
        if remaining[u] > 1:
            remaining[u] -= 1
            is_test[row] = True
            taken += 1
    if taken < target:
        raise ValueError(f"only {taken} of {target} rows can be held out without emptying a user")
    return Split(ds.subset(np.flatnonzero(~is_test)), ds.subset(np.flatnonzero(is_test)))


def gen_synthetic(
    num_users: int,
    num_items: int,
    d_true: int,
    num_clusters: int,
    ratings_per_user: int,
    noise_sd: float,
    seed: int,
    *,
    cluster_scale: float = 0.5,
    item_scale: float = 0.1,
    user_scale: float = 1.0,
    offset: float = 3.0,
):
    """Low-rank ratings whose items are grouped into clusters.

    Item factors are a cluster centre plus a small item-specific deviation.
    Every user factor carries a constant coordinate so that the rating
    ``dot(u, v)`` is centred near ``offset`` without bias terms. Each user
    rates ``ratings_per_user`` distinct items chosen uniformly. Ratings are
    ``dot(u, v) + N(0, noise_sd^2)`` clipped to [1, 5].

    Returns ``(dataset, item_graph)`` where the graph links exactly the item
    pairs that share a cluster.
    """
    for name, v in (("num_users", num_users), ("num_items", num_items), ("d_true", d_true),
                    ("num_clusters", num_clusters), ("ratings_per_user", ratings_per_user)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1")
    if num_clusters > num_items:
        raise ValueError("num_clusters cannot exceed num_items")
    if ratings_per_user > num_items:
        raise ValueError("ratings_per_user cannot exceed num_items")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    d = d_true
    # the last coordinate carries the rating offset: u[-1] = 1, v[-1] ~ offset
    users = np.empty((num_users, d))
    users[:, :-1] = rng.normal(0.0, user_scale / np.sqrt(max(d - 1, 1)), size=(num_users, d - 1))
    users[:, -1] = 1.0
    cluster_of = rng.permutation(np.arange(num_items) % num_clusters)
    centres = rng.normal(0.0, cluster_scale, size=(num_clusters, d))
    centres[:, -1] = offset
    items = centres[cluster_of] + rng.normal(0.0, item_scale, size=(num_items, d))
    if d == 1:
        users[:, 0] = 1.0
    rated = np.argsort(rng.random((num_users, num_items)), axis=1)[:, :ratings_per_user]
    u_idx = np.repeat(np.arange(num_users), ratings_per_user)
    i_idx = rated.reshape(-1)
    clean = np.einsum("nd,nd->n", users[u_idx], items[i_idx])
    r = np.clip(clean + rng.normal(0.0, noise_sd, size=clean.size), 1.0, 5.0)
    ds = InteractionDataset(u_idx, i_idx, r, num_users, num_items, rating_min=1.0, rating_max=5.0)
    edges = []
    for c in range(num_clusters):
        members = np.flatnonzero(cluster_of == c)
        a, b = np.triu_indices(len(members), k=1)
        edges.append(np.stack([members[a], members[b]], axis=1))
    graph = KnowledgeGraph.from_edges(num_items, np.concatenate(edges))
    return ds, graph
