import json

import numpy as np

from otree.report import NO_OUTLIERS, render, render_json, simplify
from otree.splits import Condition
from otree.tabular import Column, ColumnKind, Dataset
from otree.tree import OutlierFlag, fit
from synth import mixed_dataset


def _numeric_flag(row=0, column="T3", conds=()):
    ctx = {"kind": "numeric", "side": "high", "pct": 99.951, "bound": 4.5, "mean": 1.9,
           "sd": 0.6, "n": 2047}
    return OutlierFlag(row, str(row + 1), column, "10.600", 12.0, 1, 3, tuple(conds), 2047, ctx)


def test_numeric_block():
    cond = Condition("query.hyperthyroid", "in", levels=(0,), text="[query.hyperthyroid] = [FALSE]")
    text = render([_numeric_flag(conds=[cond])])
    assert text == (
        "row [1] - suspicious column: [T3] - suspicious value: [10.600]\n"
        "  distribution: 99.951% <= 4.500 - [mean: 1.900] - [sd: 0.600] - [n: 2047]\n"
        "  given:\n"
        "    [query.hyperthyroid] = [FALSE]\n"
    )


def test_root_flag_has_two_lines():
    assert render([_numeric_flag()]).count("\n") == 2


def test_categorical_block():
    ctx = {"kind": "categorical", "level": "Q", "pct": 0.5, "common_level": "S",
           "common_pct": 90.0, "n": 200}
    f = OutlierFlag(4, "5", "Embarked", "Q", 0.03, 0, 1, (), 200, ctx)
    assert "distribution: 0.500% = [Q] - most common: 90.000% = [S] - [n: 200]" in render([f])


def test_empty_and_ordering():
    assert render([]) == NO_OUTLIERS + "\n"
    a, b, c = _numeric_flag(5, "b"), _numeric_flag(5, "a"), _numeric_flag(1, "z")
    blocks = render([a, b, c]).split("\n\n")
    assert [bl.split("\n")[0][:30] for bl in blocks] == [
        "row [2] - suspicious column: [", "row [6] - suspicious column: [",
        "row [6] - suspicious column: ["]
    assert "[a]" in blocks[1] and "[b]" in blocks[2]
    assert render([a, b, c]) == render([c, a, b])


def test_simplify_drops_implied_conditions():
    gt1 = Condition("P", "gt", 1.0, text="[P] > [1]")
    eq3 = Condition("P", "gt", 2.0, text="[P] = [3]")
    le5 = Condition("x", "le", 5.0, text="[x] <= [5.000]")
    le2 = Condition("x", "le", 2.0, text="[x] <= [2.000]")
    gt0 = Condition("x", "gt", 0.0, text="[x] > [0.000]")
    got = simplify([gt1, le5, eq3, gt0, le2])
    assert [c.text for c in got] == ["[P] = [3]", "[x] > [0.000]", "[x] <= [2.000]"]
    s1 = Condition("c", "in", levels=(0, 1, 2), text="[c] in [a, b, c]")
    s2 = Condition("c", "in", levels=(1,), text="[c] = [b]")
    assert simplify([s1, s2]) == [s2]


def test_json_mirrors_fields():
    f = _numeric_flag()
    (obj,) = json.loads(render_json([f]))
    assert obj["row"] == "1" and obj["column"] == "T3" and obj["score"] == 12.0
    assert obj["context"]["pct"] == 99.951


def test_percentages_recomputable_from_clusters():
    data = mixed_dataset(np.random.default_rng(8), n=500, plant=5)
    model, flags = fit(data)
    assert flags
    for f in flags:
        tree = next(t for t in model.trees if t.column == f.column)
        node = tree.nodes[f.node_id]
        ctx = f.context
        if ctx["kind"] == "numeric":
            s = node.cluster.stats
            kept = node.n - len(node.outlier_rows)
            side = s.n_below if ctx["side"] == "high" else s.n_above
            assert abs(100 * side / node.n - ctx["pct"]) < 1e-9 or kept == 0
        else:
            counts = node.cluster.counts
            assert abs(100 * counts[data[f.column].levels.index(ctx["level"])] / sum(counts)
                       - ctx["pct"]) < 1e-9


def test_values_print_in_original_units():
    g = np.linspace(-4, 4, 1000)
    x = np.r_[np.exp(g), np.exp(40.0)]
    model, flags = fit(Dataset([Column("x", ColumnKind.NUMERIC, x)]))
    assert model.trees[0].transform.kind == "log"
    (f,) = flags
    assert f.value == f"{np.exp(40.0):.3f}"
    assert f"<= {np.exp(4.0):.3f}" in render(flags)
