"""Conditioning trees: growth, per-branch clusters, flag selection and scoring.

One tree is grown per target column. The root and every branch produced by
a split clearing ``g_min`` hold a cluster, the flaggable distribution of the
target under that branch's conditions. Only the best split's branches are
grown further, after the rows flagged in them are removed.
"""

from __future__ import annotations

import hashlib
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from otree.params import Params
from otree.splits import (
    Condition,
    SplitResult,
    best_categ_split,
    best_numeric_split,
    best_split_binarized,
    binarize_target,
    info_partition_gain,
    missingness_split,
    sd_partition_gain,
)
from otree.tabular import MISSING, Column, ColumnKind, DataError, Dataset
from otree.unistats import (
    NO_TRANSFORM,
    CategStats,
    InsufficientDataError,
    NumericStats,
    Transform,
    categ_new_value_rules,
    flag_outliers_categ,
    flag_outliers_categ_root,
    flag_outliers_numeric,
    lower_proportion_bound,
    numeric_tails,
)

UNSEEN = -2
MODEL_VERSION = 1


@dataclass(frozen=True)
class NumericCluster:
    stats: NumericStats


@dataclass(frozen=True)
class CategCluster:
    """Category counts under a branch and the levels that flag there."""

    counts: tuple[int, ...]
    flag_scores: dict[int, float]
    unseen_score: float | None
    root: bool = False

    @property
    def n(self) -> int:
        return sum(self.counts)


Cluster = NumericCluster | CategCluster


@dataclass
class TreeNode:
    id: int
    parent: int | None
    depth: int
    condition: Condition | None
    n: int
    cluster: Cluster | None = None
    children: list[int] = field(default_factory=list)
    split: SplitResult | None = None
    outlier_rows: tuple[int, ...] = ()


@dataclass
class Tree:
    column: str
    kind: ColumnKind
    transform: Transform = NO_TRANSFORM
    has_left_tail: bool = False
    has_right_tail: bool = False
    nodes: list[TreeNode] = field(default_factory=list)

    def path(self, node_id: int) -> tuple[Condition, ...]:
        out = []
        node = self.nodes[node_id]
        while node.condition is not None:
            out.append(node.condition)
            node = self.nodes[node.parent]
        return tuple(reversed(out))


@dataclass(frozen=True)
class SchemaColumn:
    name: str
    kind: ColumnKind
    levels: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrainingFlag:
    column: str
    fingerprint: str


@dataclass
class Model:
    params: Params
    schema: list[SchemaColumn]
    priors: dict[str, tuple[int, ...]]
    trees: list[Tree]
    training_flags: list[TrainingFlag] = field(default_factory=list)
    version: int = MODEL_VERSION
    timestamp: str | None = None

    def column(self, name: str) -> SchemaColumn:
        for c in self.schema:
            if c.name == name:
                return c
        raise KeyError(name)

    def prior_stats(self, name: str) -> CategStats:
        counts = np.asarray(self.priors[name], dtype=np.int64)
        n = int(counts.sum())
        priors = counts / n
        return CategStats(counts, priors, n, lower_proportion_bound(priors, n, self.params.z_normal))


@dataclass(frozen=True)
class OutlierFlag:
    """One flagged value with the explanation that selected it."""

    row: int
    row_id: str
    column: str
    value: str
    score: float
    direction: int
    node_id: int
    conditions: tuple[Condition, ...]
    subsample: int
    context: dict

    @property
    def n_conditions(self) -> int:
        return len(self.conditions)

    @property
    def has_missing_condition(self) -> bool:
        return any(c.involves_missing for c in self.conditions)

    def priority(self, numeric: bool) -> tuple:
        extreme = -abs(self.score) if numeric else self.score
        return (self.has_missing_condition, self.n_conditions, -self.subsample, extreme,
                self.node_id)


def select_best_flag(candidates: Sequence[OutlierFlag]) -> OutlierFlag:
    """Preferred explanation among flags of one (row, column)."""
    if not candidates:
        raise ValueError("no candidates")
    numeric = candidates[0].context.get("kind") == "numeric"
    return min(candidates, key=lambda f: f.priority(numeric))


def fingerprint(tokens: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(tokens).encode("utf-8")).hexdigest()


# -- context -----------------------------------------------------------------


def numeric_context(stats: NumericStats, direction: int) -> dict:
    high = direction >= 0
    return {
        "kind": "numeric",
        "side": "high" if high else "low",
        "pct": stats.pct_below if high else stats.pct_above,
        "bound": stats.max_nonoutlier if high else stats.min_nonoutlier,
        "mean": stats.mean,
        "sd": stats.sd,
        "n": stats.n,
    }


def categ_context(cluster: CategCluster, levels: Sequence[str], code: int, label: str) -> dict:
    counts = np.asarray(cluster.counts)
    n = int(counts.sum())
    common = int(np.argmax(counts))
    cnt = int(counts[code]) if code >= 0 else 0
    return {
        "kind": "categorical",
        "level": label,
        "pct": 100.0 * cnt / n,
        "common_level": levels[common],
        "common_pct": 100.0 * int(counts[common]) / n,
        "n": n,
    }


# -- growth ------------------------------------------------------------------


class _Columns:
    """Per-dataset arrays shared by every target's growth."""

    def __init__(self, data: Dataset):
        self.data = data
        self.n = data.n_rows
        self.values: dict[str, np.ndarray] = {}
        self.ordered: dict[str, np.ndarray] = {}
        self.orders: dict[str, np.ndarray] = {}
        for c in data.columns:
            self.values[c.name] = c.values
            if c.is_ordered:
                x = c.values.astype(np.float64)
                if not c.is_numeric:
                    x[c.values == MISSING] = np.nan
                self.ordered[c.name] = x
                o = np.argsort(x, kind="stable")
                self.orders[c.name] = o[: int(np.count_nonzero(~np.isnan(x)))]

    def restrict(self, orders: dict[str, np.ndarray], rows: np.ndarray) -> dict[str, np.ndarray]:
        member = np.zeros(self.n, dtype=bool)
        member[rows] = True
        return {k: o[member[o]] for k, o in orders.items()}


class _Grower:
    def __init__(self, cols: _Columns, target: Column, params: Params):
        self.cols = cols
        self.target = target
        self.params = params
        self.numeric = target.is_numeric
        self.min_size = params.min_size(self.numeric)
        self.predictors = sorted(c.name for c in cols.data.columns if c.name != target.name)
        self.nodes: list[TreeNode] = []
        self.node_index: dict[tuple, int] = {}
        self.flags: list[tuple[int, int, float, int, int]] = []  # row, node, score, dir, code

    # target-specific setup ---------------------------------------------------

    def setup(self) -> Tree | None:
        t = self.target
        present = np.flatnonzero(~t.missing)
        if len(present) < 2 * self.min_size:
            return None
        self.root_rows = present
        tree = Tree(t.name, t.kind)
        if self.numeric:
            try:
                check, xt = numeric_tails(t.values[present], self.params)
            except InsufficientDataError:
                return None
            tree.transform = check.transform
            tree.has_left_tail = check.has_left_tail
            tree.has_right_tail = check.has_right_tail
            self.y = np.full(self.cols.n, np.nan)
            self.y[present] = xt
            # ties keep row order, so restricting this to ascending row sets
            # gives the same order as a stable argsort of the subset
            self.y_order = present[np.argsort(xt, kind="stable")]
        else:
            codes = t.values
            if len(np.unique(codes[present])) < 2:
                return None
            self.y = codes
            self.n_levels = len(t.levels)
            self.prior = CategStats.full(codes[present], self.n_levels, self.params)
        self.tree = tree
        return tree

    # clusters ----------------------------------------------------------------

    def make_cluster(self, node: TreeNode, rows: np.ndarray, root: bool) -> np.ndarray:
        """Attach a cluster to ``node`` and return the flagged global rows.

        ``rows`` must be ascending.
        """
        p = self.params
        t = self.target
        if self.numeric:
            member = np.zeros(self.cols.n, dtype=bool)
            member[rows] = True
            rank = np.empty(self.cols.n, dtype=np.int64)
            rank[rows] = np.arange(len(rows))
            order = rank[self.y_order[member[self.y_order]]]
            try:
                flags, stats = flag_outliers_numeric(
                    self.y[rows], p, (self.tree.has_left_tail, self.tree.has_right_tail),
                    original=t.values[rows], transform=self.tree.transform, order=order)
            except InsufficientDataError:
                return np.empty(0, dtype=np.int64)
            node.cluster = NumericCluster(stats)
            hit = rows[flags.indices]
            for r, s, d in zip(hit, flags.scores, flags.directions):
                self.flags.append((int(r), node.id, float(s), int(d), -1))
        else:
            x = self.y[rows]
            if root:
                flags = flag_outliers_categ_root(x, self.n_levels, p)
            else:
                flags = flag_outliers_categ(x, self.prior, p)
            stats = self.prior.conditioned(x)
            flagged = None
            if len(flags):
                flagged = (int(x[flags.indices[0]]), float(flags.scores[0]))
            scores, unseen = categ_new_value_rules(stats, flagged, p, root)
            node.cluster = CategCluster(tuple(int(c) for c in stats.counts), scores, unseen, root)
            hit = rows[flags.indices]
            for r, s in zip(hit, flags.scores):
                self.flags.append((int(r), node.id, float(s), 0, int(self.y[r])))
        hit = np.sort(hit)
        node.outlier_rows = tuple(int(r) for r in hit)
        return hit

    def add_node(self, parent: TreeNode | None, cond: Condition | None, n: int) -> TreeNode:
        node = TreeNode(len(self.nodes), None if parent is None else parent.id,
                        0 if parent is None else parent.depth + 1, cond, n)
        self.nodes.append(node)
        if parent is not None:
            parent.children.append(node.id)
        return node

    # split search ------------------------------------------------------------

    def search(self, rows: np.ndarray, orders: dict[str, np.ndarray]) -> list[SplitResult]:
        """Every predictor's best split (and missingness split) at a node."""
        out: list[SplitResult] = []
        ms = self.min_size
        y_all = self.y
        for name in self.predictors:
            col = self.cols.data[name]
            if col.is_ordered:
                srt = orders[name]
                miss = rows[np.isnan(self.cols.ordered[name][rows])]
                idx = np.concatenate([srt, miss])
                x = self.cols.ordered[name][idx]
                oo = np.arange(len(srt))
            else:
                idx = rows
                x = col.values[rows]
                oo = None
            ys = y_all[idx]
            n_miss = int(np.count_nonzero(np.isnan(x) if col.is_ordered else x < 0))
            if self.numeric:
                if col.is_ordered:
                    r = best_numeric_split(x, ys, ms, name=name, column=col, order=oo)
                else:
                    r = best_categ_split(x, ys, ms, name=name, column=col)
                if r is not None:
                    out.append(r)
                if n_miss:
                    r = missingness_split(x < 0 if not col.is_ordered else np.isnan(x),
                                          lambda g, ys=ys: sd_partition_gain(ys, g), ms, name)
                    if r is not None:
                        out.append(r)
            else:
                for c in self._binarizing_levels():
                    yt = binarize_target(ys, c, self.target.kind is ColumnKind.ORDINAL)
                    r = best_split_binarized(x, yt, ys, ms, categorical=not col.is_ordered,
                                             name=name, column=col, order=oo,
                                             n_classes=self.n_levels)
                    if r is not None:
                        out.append(_with_category(r, c))
                if n_miss:
                    r = missingness_split(
                        x < 0 if not col.is_ordered else np.isnan(x),
                        lambda g, ys=ys: info_partition_gain(ys, g, self.n_levels), ms, name)
                    if r is not None:
                        out.append(r)
        return out

    def _binarizing_levels(self) -> range:
        m = self.n_levels
        if self.target.kind is ColumnKind.ORDINAL:
            return range(m - 1)
        return range(m - 1) if m == 2 else range(m)

    # recursion ---------------------------------------------------------------

    def grow(self) -> Tree:
        root = self.add_node(None, None, len(self.root_rows))
        hit = self.make_cluster(root, self.root_rows, root=True)
        rows = np.setdiff1d(self.root_rows, hit, assume_unique=True)
        stack = [(root, rows, self.cols.restrict(self.cols.orders, rows))]
        while stack:
            node, rows, orders = stack.pop(0)
            self._expand(node, rows, orders, stack)
        self.tree.nodes = self.nodes
        return self.tree

    def _expand(self, node: TreeNode, rows, orders, stack) -> None:
        p = self.params
        if node.depth >= p.max_depth or len(rows) < 2 * self.min_size:
            return
        splits = [s for s in self.search(rows, orders) if s.gain > p.g_min]
        if not splits:
            return
        best = None
        for s in splits:
            if not s.missing_only and (best is None or s.gain > best.gain):
                best = s
        branch_nodes: dict[int, list[tuple[TreeNode, np.ndarray]]] = {}
        for k, s in enumerate(splits):
            vals = self.cols.values[s.column][rows]
            for cond in s.branches:
                sub = rows[cond.evaluate(vals)]
                if len(sub) < 2 * self.min_size:
                    continue
                key = (node.id, cond.key)
                nid = self.node_index.get(key)
                if nid is None:
                    child = self.add_node(node, cond, len(sub))
                    self.node_index[key] = child.id
                    hit = self.make_cluster(child, sub, root=False)
                    entry = (child, np.setdiff1d(sub, hit, assume_unique=True))
                    self._cleaned[child.id] = entry[1]
                else:
                    entry = (self.nodes[nid], self._cleaned[nid])
                branch_nodes.setdefault(k, []).append(entry)
        if best is None:
            return
        node.split = best
        follow = range(len(splits)) if p.follow_all else [splits.index(best)]
        for k in follow:
            if splits[k].missing_only:
                continue
            for child, clean in branch_nodes.get(k, []):
                if child.id in self._expanded:
                    continue
                self._expanded.add(child.id)
                stack.append((child, clean, self.cols.restrict(orders, clean)))

    def run(self) -> tuple[Tree, list] | None:
        self._cleaned: dict[int, np.ndarray] = {}
        self._expanded: set[int] = set()
        if self.setup() is None:
            return None
        return self.grow(), self.flags


def _with_category(r: SplitResult, c: int) -> SplitResult:
    return replace(r, category=c)


# -- fitting -----------------------------------------------------------------


def schema_of(data: Dataset) -> list[SchemaColumn]:
    return [SchemaColumn(c.name, c.kind, tuple(c.levels)) for c in data.columns]


def _flag_objects(tree: Tree, raw: list, data: Dataset, levels: Sequence[str]) -> list[OutlierFlag]:
    col = data[tree.column]
    numeric = col.is_numeric
    out = []
    for row, nid, score, direction, code in raw:
        node = tree.nodes[nid]
        if numeric:
            v = float(col.values[row])
            ctx = numeric_context(node.cluster.stats, direction)
            text = f"{v:.3f}"
        else:
            text = levels[code]
            ctx = categ_context(node.cluster, levels, code, text)
        out.append(OutlierFlag(row, data.row_ids[row], tree.column, text, score, direction,
                               nid, tree.path(nid), node.n, ctx))
    return out


def reduce_flags(flags: Sequence[OutlierFlag]) -> list[OutlierFlag]:
    """One flag per (row, column), sorted by row position then column."""
    groups: dict[tuple[int, str], list[OutlierFlag]] = {}
    for f in flags:
        groups.setdefault((f.row, f.column), []).append(f)
    return [select_best_flag(groups[k]) for k in sorted(groups)]


def fit(data: Dataset, params: Params | None = None, threads: int = 1,
        timestamp: str | None = None) -> tuple[Model, list[OutlierFlag]]:
    """Grow one conditioning tree per column and collect the selected flags."""
    params = params or Params()
    cols = _Columns(data)

    def one(target: Column):
        return _Grower(cols, target, params).run()

    targets = list(data.columns)
    if threads > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, targets))
    else:
        results = [one(t) for t in targets]

    priors = {}
    for c in data.columns:
        if not c.is_numeric:
            v = c.values[c.values >= 0]
            priors[c.name] = tuple(int(k) for k in np.bincount(v, minlength=len(c.levels)))
    trees = []
    flags: list[OutlierFlag] = []
    for target, res in zip(targets, results):
        if res is None:
            continue
        tree, raw = res
        trees.append(tree)
        flags.extend(reduce_flags(_flag_objects(tree, raw, data, target.levels)))
    flags = reduce_flags(flags)
    order = data.names
    tflags = [TrainingFlag(f.column, fingerprint([data[n].format_value(f.row) for n in order]))
              for f in flags]
    model = Model(params, schema_of(data), priors, trees, tflags, timestamp=timestamp)
    return model, flags


# -- scoring -----------------------------------------------------------------


def align(model: Model, data: Dataset) -> dict[str, np.ndarray]:
    """Column values of ``data`` in the model's encodings.

    Coded columns are matched by level name; names the model never saw get
    code ``UNSEEN``. Extra columns are ignored.
    """
    out: dict[str, np.ndarray] = {}
    for sc in model.schema:
        if sc.name not in data:
            raise DataError(f"column {sc.name!r} missing from data")
        col = data[sc.name]
        if sc.kind is ColumnKind.NUMERIC:
            if not col.is_numeric:
                raise DataError(f"column {sc.name!r}: expected numeric, got {col.kind.value}")
            out[sc.name] = col.values
            continue
        if col.is_numeric:
            raise DataError(f"column {sc.name!r}: expected {sc.kind.value}, got numeric")
        lookup = {lv: k for k, lv in enumerate(sc.levels)}
        table = np.array([lookup.get(lv, UNSEEN) for lv in col.levels] + [MISSING], dtype=np.int64)
        codes = col.values.astype(np.int64)
        out[sc.name] = table[np.where(codes >= 0, codes, len(col.levels))]
    return out


def _route(tree: Tree, values: dict[str, np.ndarray], n: int) -> list[np.ndarray]:
    masks: list[np.ndarray] = []
    for node in tree.nodes:
        if node.parent is None:
            masks.append(np.ones(n, dtype=bool))
        else:
            c = node.condition
            masks.append(masks[node.parent] & c.evaluate(values[c.column]))
    return masks


def score_rows(model: Model, data: Dataset, include_training: bool = False) -> list[OutlierFlag]:
    """Flag values of new rows against the saved clusters."""
    values = align(model, data)
    n = data.n_rows
    names = [c.name for c in model.schema]
    suppress = {(t.column, t.fingerprint) for t in model.training_flags}
    prints: list[str] | None = None
    if not include_training and suppress:
        prints = [fingerprint([data[c].format_value(i) for c in names]) for i in range(n)]
    flags: list[OutlierFlag] = []
    for tree in model.trees:
        sc = model.column(tree.column)
        v = values[tree.column]
        raw = data[tree.column]
        masks = _route(tree, values, n)
        for node, mask in zip(tree.nodes, masks):
            cl = node.cluster
            if cl is None or not mask.any():
                continue
            cond = tree.path(node.id)
            idx = np.flatnonzero(mask)
            if isinstance(cl, NumericCluster):
                hit, z = cl.stats.flag_new(v[idx])
                for i in np.flatnonzero(hit):
                    r = int(idx[i])
                    d = 1 if z[i] > 0 else -1
                    flags.append(OutlierFlag(r, data.row_ids[r], tree.column,
                                             f"{float(v[r]):.3f}", float(z[i]), d, node.id, cond,
                                             node.n, numeric_context(cl.stats, d)))
            else:
                for r in idx:
                    code = int(v[r])
                    if code >= 0:
                        score = cl.flag_scores.get(code)
                    elif code == UNSEEN:
                        score = cl.unseen_score
                    else:
                        score = None
                    if score is None:
                        continue
                    label = raw.format_value(int(r))
                    flags.append(OutlierFlag(int(r), data.row_ids[r], tree.column, label, score,
                                             0, node.id, cond, node.n,
                                             categ_context(cl, sc.levels, code, label)))
    if prints is not None:
        flags = [f for f in flags if (f.column, prints[f.row]) not in suppress]
    return reduce_flags(flags)
