"""Random mixed-type datasets with planted structure."""

from __future__ import annotations

import numpy as np

from otree.tabular import Column, ColumnKind, Dataset


def mixed_dataset(rng: np.random.Generator, n: int = 400, n_num: int = 3, n_cat: int = 2,
                  missing: float = 0.03, plant: int = 3) -> Dataset:
    """Numeric columns driven by a categorical group plus a few planted extremes."""
    group = rng.integers(0, 3, size=n)
    cols = []
    for j in range(n_num):
        shift = rng.normal(0, 10, size=3)
        x = shift[group] + rng.normal(0, 1 + j, size=n)
        x = np.round(x, 3)
        for r in rng.choice(n, size=plant, replace=False):
            x[r] = shift[group[r]] + rng.choice([-1, 1]) * rng.uniform(30, 60)
        x[rng.random(n) < missing] = np.nan
        cols.append(Column(f"num{j}", ColumnKind.NUMERIC, x))
    levels = ("a", "b", "c")
    g = group.astype(np.int32)
    cols.append(Column("grp", ColumnKind.CATEGORICAL, g, levels))
    for j in range(1, n_cat):
        m = int(rng.integers(2, 5))
        c = rng.integers(0, m, size=n).astype(np.int32)
        c[rng.random(n) < missing] = -1
        cols.append(Column(f"cat{j}", ColumnKind.CATEGORICAL, c, tuple(f"l{k}" for k in range(m))))
    o = np.clip(group + rng.integers(-1, 2, size=n), 0, 3).astype(np.int32)
    cols.append(Column("ord", ColumnKind.ORDINAL, o, ("lo", "mid", "hi", "top")))
    return Dataset(cols)


def step_dataset(rng: np.random.Generator, n: int = 600) -> Dataset:
    """y jumps by 100 at x = 0.5; noise is uniform on [0, 1]."""
    x = np.round(rng.uniform(0, 1, size=n), 4)
    y = 100.0 * (x > 0.5) + rng.uniform(0, 1, size=n)
    return Dataset([Column("x", ColumnKind.NUMERIC, x), Column("y", ColumnKind.NUMERIC, y)])
