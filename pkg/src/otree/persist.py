"""JSON model files.

Floats are written with ``repr`` (shortest round-trip form), so a loaded
model reproduces the fitted one bit for bit. Keys are emitted in a fixed
order, making files from identical fits byte-identical.
"""

from __future__ import annotations

import json
import math
from typing import Any

from otree.params import Params
from otree.splits import Condition, SplitResult
from otree.tabular import ColumnKind
from otree.tree import (
    MODEL_VERSION,
    CategCluster,
    Model,
    NumericCluster,
    SchemaColumn,
    TrainingFlag,
    Tree,
    TreeNode,
)
from otree.unistats import NumericStats, Transform


class ModelFormatError(ValueError):
    """Model file that cannot be loaded; the message names the location."""


def _num(v: float | None) -> float | None:
    if v is None:
        return None
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {v} cannot be saved")
    return v


def _stats_dict(s: NumericStats) -> dict:
    return {
        "n": s.n,
        "n_tail": s.n_tail,
        "mu_adj": _num(s.mu_adj),
        "sigma_adj": _num(s.sigma_adj),
        "transform": s.transform.to_dict(),
        "has_left_tail": s.has_left_tail,
        "has_right_tail": s.has_right_tail,
        "lo_thr": _num(s.lo_thr),
        "hi_thr": _num(s.hi_thr),
        "mean": _num(s.mean),
        "sd": _num(s.sd),
        "min_nonoutlier": _num(s.min_nonoutlier),
        "max_nonoutlier": _num(s.max_nonoutlier),
        "n_below": s.n_below,
        "n_above": s.n_above,
    }


def _cluster_dict(c) -> dict | None:
    if c is None:
        return None
    if isinstance(c, NumericCluster):
        return {"kind": "numeric", "stats": _stats_dict(c.stats)}
    return {
        "kind": "categorical",
        "counts": list(c.counts),
        "flag_scores": [[k, _num(v)] for k, v in sorted(c.flag_scores.items())],
        "unseen_score": _num(c.unseen_score),
        "root": c.root,
    }


def _split_dict(s: SplitResult | None) -> dict | None:
    if s is None:
        return None
    return {
        "column": s.column,
        "left": s.left.to_dict(),
        "right": s.right.to_dict(),
        "missing": None if s.missing is None else s.missing.to_dict(),
        "gain": _num(s.gain),
        "n_l": s.n_l,
        "n_r": s.n_r,
        "n_u": s.n_u,
        "category": s.category,
        "missing_only": s.missing_only,
    }


def model_to_dict(model: Model) -> dict:
    return {
        "version": model.version,
        "provenance": {"generator": "otree", "timestamp": model.timestamp},
        "params": model.params.to_dict(),
        "schema": [{"name": c.name, "kind": c.kind.value, "levels": list(c.levels)}
                   for c in model.schema],
        "priors": {k: list(v) for k, v in model.priors.items()},
        "trees": [
            {
                "column": t.column,
                "kind": t.kind.value,
                "transform": t.transform.to_dict(),
                "has_left_tail": t.has_left_tail,
                "has_right_tail": t.has_right_tail,
                "nodes": [
                    {
                        "id": n.id,
                        "parent": n.parent,
                        "depth": n.depth,
                        "condition": None if n.condition is None else n.condition.to_dict(),
                        "n": n.n,
                        "cluster": _cluster_dict(n.cluster),
                        "children": list(n.children),
                        "split": _split_dict(n.split),
                        "outlier_rows": list(n.outlier_rows),
                    }
                    for n in t.nodes
                ],
            }
            for t in model.trees
        ],
        "training_flags": [[f.column, f.fingerprint] for f in model.training_flags],
    }


def serialize(model: Model) -> bytes:
    return (json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n").encode("utf-8")


# -- loading -----------------------------------------------------------------


class _Reader:
    """Typed access into parsed JSON that reports the failing path."""

    def __init__(self, obj: Any, path: str = "$"):
        self.obj = obj
        self.path = path

    def fail(self, msg: str):
        raise ModelFormatError(f"{self.path}: {msg}")

    def __getitem__(self, key) -> _Reader:
        p = f"{self.path}[{key}]" if isinstance(key, int) else f"{self.path}.{key}"
        if isinstance(key, int):
            if not isinstance(self.obj, list) or not -len(self.obj) <= key < len(self.obj):
                self.fail(f"no element {key}")
        elif not isinstance(self.obj, dict) or key not in self.obj:
            self.fail(f"missing field {key!r}")
        return _Reader(self.obj[key], p)

    def items(self) -> list[_Reader]:
        if not isinstance(self.obj, list):
            self.fail("expected a list")
        return [self[i] for i in range(len(self.obj))]

    def mapping(self) -> dict[str, _Reader]:
        if not isinstance(self.obj, dict):
            self.fail("expected an object")
        return {k: self[k] for k in self.obj}

    def is_null(self) -> bool:
        return self.obj is None

    def int(self) -> int:
        if isinstance(self.obj, bool) or not isinstance(self.obj, int):
            self.fail(f"expected an integer, got {self.obj!r}")
        return self.obj

    def float(self) -> float:
        if isinstance(self.obj, bool) or not isinstance(self.obj, (int, float)):
            self.fail(f"expected a number, got {self.obj!r}")
        return float(self.obj)

    def opt_float(self) -> float | None:
        return None if self.obj is None else self.float()

    def opt_int(self) -> int | None:
        return None if self.obj is None else self.int()

    def bool(self) -> bool:
        if not isinstance(self.obj, bool):
            self.fail(f"expected true/false, got {self.obj!r}")
        return self.obj

    def str(self) -> str:
        if not isinstance(self.obj, str):
            self.fail(f"expected a string, got {self.obj!r}")
        return self.obj

    def convert(self, fn):
        try:
            return fn(self.obj)
        except (KeyError, TypeError, ValueError) as e:
            self.fail(str(e))


def _kind(r: _Reader) -> ColumnKind:
    return r.convert(lambda v: ColumnKind(v))


def _condition(r: _Reader) -> Condition:
    r.mapping()
    return r.convert(Condition.from_dict)


def _stats(r: _Reader) -> NumericStats:
    return NumericStats(
        n=r["n"].int(),
        n_tail=r["n_tail"].int(),
        mu_adj=r["mu_adj"].float(),
        sigma_adj=r["sigma_adj"].float(),
        transform=r["transform"].convert(Transform.from_dict),
        has_left_tail=r["has_left_tail"].bool(),
        has_right_tail=r["has_right_tail"].bool(),
        lo_thr=r["lo_thr"].opt_float(),
        hi_thr=r["hi_thr"].opt_float(),
        mean=r["mean"].float(),
        sd=r["sd"].float(),
        min_nonoutlier=r["min_nonoutlier"].float(),
        max_nonoutlier=r["max_nonoutlier"].float(),
        n_below=r["n_below"].int(),
        n_above=r["n_above"].int(),
    )


def _cluster(r: _Reader):
    if r.is_null():
        return None
    kind = r["kind"].str()
    if kind == "numeric":
        return NumericCluster(_stats(r["stats"]))
    if kind == "categorical":
        scores = {}
        for pair in r["flag_scores"].items():
            scores[pair[0].int()] = pair[1].float()
        return CategCluster(tuple(c.int() for c in r["counts"].items()), scores,
                            r["unseen_score"].opt_float(), r["root"].bool())
    r["kind"].fail(f"unknown cluster kind {kind!r}")


def _split(r: _Reader) -> SplitResult | None:
    if r.is_null():
        return None
    return SplitResult(
        column=r["column"].str(),
        left=_condition(r["left"]),
        right=_condition(r["right"]),
        missing=None if r["missing"].is_null() else _condition(r["missing"]),
        gain=r["gain"].float(),
        n_l=r["n_l"].int(),
        n_r=r["n_r"].int(),
        n_u=r["n_u"].int(),
        category=r["category"].opt_int(),
        missing_only=r["missing_only"].bool(),
    )


def _tree(r: _Reader, names: set[str]) -> Tree:
    column = r["column"].str()
    if column not in names:
        r["column"].fail(f"tree column {column!r} not in schema")
    nodes = []
    for i, nr in enumerate(r["nodes"].items()):
        if nr["id"].int() != i:
            nr["id"].fail(f"node ids must be consecutive, expected {i}")
        parent = nr["parent"].opt_int()
        if (parent is None) != (i == 0) or (parent is not None and not 0 <= parent < i):
            nr["parent"].fail("parent must precede its child and only node 0 is a root")
        cond = None if nr["condition"].is_null() else _condition(nr["condition"])
        if cond is not None and cond.column not in names:
            nr["condition"].fail(f"condition column {cond.column!r} not in schema")
        nodes.append(TreeNode(
            id=i,
            parent=parent,
            depth=nr["depth"].int(),
            condition=cond,
            n=nr["n"].int(),
            cluster=_cluster(nr["cluster"]),
            children=[c.int() for c in nr["children"].items()],
            split=_split(nr["split"]),
            outlier_rows=tuple(c.int() for c in nr["outlier_rows"].items()),
        ))
    return Tree(column, _kind(r["kind"]), r["transform"].convert(Transform.from_dict),
                r["has_left_tail"].bool(), r["has_right_tail"].bool(), nodes)


def model_from_dict(obj: Any) -> Model:
    r = _Reader(obj)
    version = r["version"].int()
    if version != MODEL_VERSION:
        r["version"].fail(f"unsupported model version {version} (expected {MODEL_VERSION})")
    params = r["params"].convert(
        lambda d: Params.from_dict({**d, "root_categ_breaks": tuple(d["root_categ_breaks"])}))
    schema = [SchemaColumn(c["name"].str(), _kind(c["kind"]),
                           tuple(lv.str() for lv in c["levels"].items()))
              for c in r["schema"].items()]
    names = {c.name for c in schema}
    priors = {k: tuple(c.int() for c in v.items()) for k, v in r["priors"].mapping().items()}
    trees = [_tree(t, names) for t in r["trees"].items()]
    tflags = [TrainingFlag(p[0].str(), p[1].str()) for p in r["training_flags"].items()]
    ts = r["provenance"]["timestamp"]
    return Model(params, schema, priors, trees, tflags, version,
                 None if ts.is_null() else ts.str())


def deserialize(data: bytes | str) -> Model:
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"not valid JSON: line {e.lineno} column {e.colno}: {e.msg}") from None
    return model_from_dict(obj)
