"""Embedding tables and train-time dropout."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

USER_TABLE = 0
ITEM_TABLE = 1
TABLE_NAMES = {USER_TABLE: "user", ITEM_TABLE: "item"}


@dataclass(eq=False)
class EmbeddingTable:
    table_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValueError("embedding table must be a non-empty 2-d array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding table has non-finite entries")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.table_id, self.values.copy())


@dataclass(eq=False)
class ModelParams:
    """All trainable parameters of a dot-product model."""

    user_table: EmbeddingTable
    item_table: EmbeddingTable

    def __post_init__(self):
        if self.user_table.dim != self.item_table.dim:
            raise ValueError(
                f"user dim {self.user_table.dim} != item dim {self.item_table.dim}"
            )

    @property
    def dim(self) -> int:
        return self.user_table.dim

    def copy(self) -> "ModelParams":
        return ModelParams(self.user_table.copy(), self.item_table.copy())

    @classmethod
    def init(cls, num_users: int, num_items: int, dim: int, scale: float = 0.1, seed: int = 0) -> "ModelParams":
        ss = np.random.SeedSequence(seed).spawn(2)
        return cls(
            init_table(num_users, dim, scale, ss[0], table_id=USER_TABLE),
            init_table(num_items, dim, scale, ss[1], table_id=ITEM_TABLE),
        )


def init_table(n: int, d: int, scale: float = 0.1, seed=0, table_id: int = 0) -> EmbeddingTable:
    """I.i.d. ``N(0, scale^2)`` entries."""
    if n < 1 or d < 1:
        raise ValueError("table needs n >= 1 and d >= 1")
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    return EmbeddingTable(table_id, rng.normal(0.0, scale, size=(n, d)))


def dropout_scale(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability ``p``, else ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def apply_dropout(vec, p: float, rng: np.random.Generator) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if p == 0.0:
        return vec.copy()
    return vec * dropout_scale(vec.shape, p, rng)


def export_embeddings_csv(params: ModelParams, path) -> None:
    """CSV with header ``table,index,v_0..v_{d-1}``."""
    d = params.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["table", "index"] + [f"v_{f}" for f in range(d)])
        for table in (params.user_table, params.item_table):
            name = TABLE_NAMES[table.table_id]
            for j, row in enumerate(table.values):
                w.writerow([name, j] + [repr(float(x)) for x in row])


def load_embeddings_csv(path) -> ModelParams:
    rows = {"user": [], "item": []}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["table", "index"]:
            raise ValueError(f"{path}: not an embedding export")
        for rec in reader:
            rows[rec[0]].append((int(rec[1]), [float(x) for x in rec[2:]]))
    tables = []
    for name, tid in (("user", USER_TABLE), ("item", ITEM_TABLE)):
        entries = sorted(rows[name])
        if [i for i, _ in entries] != list(range(len(entries))):
            raise ValueError(f"{path}: {name} indices not contiguous")
        tables.append(EmbeddingTable(tid, np.array([v for _, v in entries])))
    return ModelParams(*tables)
