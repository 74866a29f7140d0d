"""Human-readable and JSON renderings of outlier flags."""

from __future__ import annotations

import json
from collections.abc import Sequence

from otree.splits import Condition
from otree.tree import OutlierFlag

NO_OUTLIERS = "No outliers found."


def _n(v: float) -> str:
    return f"{v:.3f}"


def distribution_line(flag: OutlierFlag) -> str:
    ctx = flag.context
    if ctx["kind"] == "numeric":
        op = "<=" if ctx["side"] == "high" else ">="
        return (f"distribution: {_n(ctx['pct'])}% {op} {_n(ctx['bound'])}"
                f" - [mean: {_n(ctx['mean'])}] - [sd: {_n(ctx['sd'])}] - [n: {ctx['n']}]")
    return (f"distribution: {_n(ctx['pct'])}% = [{ctx['level']}]"
            f" - most common: {_n(ctx['common_pct'])}% = [{ctx['common_level']}]"
            f" - [n: {ctx['n']}]")


def _supersedes(later: Condition, earlier: Condition) -> bool:
    """True when ``later`` implies ``earlier`` on the same column."""
    if later.column != earlier.column or later.op != earlier.op:
        return False
    if later.op == "le":
        return later.threshold <= earlier.threshold
    if later.op == "gt":
        return later.threshold >= earlier.threshold
    if later.op == "in":
        return set(later.levels) <= set(earlier.levels)
    return later.op in ("missing", "not_missing")


def simplify(conditions: Sequence[Condition]) -> list[Condition]:
    """Path conditions minus those implied by a deeper one on the same column."""
    out = []
    for i, c in enumerate(conditions):
        if not any(_supersedes(d, c) for d in conditions[i + 1:]):
            out.append(c)
    return out


def render_flag(flag: OutlierFlag) -> str:
    lines = [
        f"row [{flag.row_id}] - suspicious column: [{flag.column}] - suspicious value: [{flag.value}]",
        "  " + distribution_line(flag),
    ]
    if flag.conditions:
        lines.append("  given:")
        lines.extend(f"    {c.text}" for c in simplify(flag.conditions))
    return "\n".join(lines)


def _sorted(flags: Sequence[OutlierFlag]) -> list[OutlierFlag]:
    return sorted(flags, key=lambda f: (f.row, f.column))


def render(flags: Sequence[OutlierFlag]) -> str:
    """Text report, one block per flag ordered by row then column."""
    if not flags:
        return NO_OUTLIERS + "\n"
    return "\n\n".join(render_flag(f) for f in _sorted(flags)) + "\n"


def flag_to_dict(flag: OutlierFlag) -> dict:
    return {
        "row": flag.row_id,
        "column": flag.column,
        "value": flag.value,
        "score": flag.score,
        "direction": flag.direction,
        "node": flag.node_id,
        "subsample": flag.subsample,
        "has_missing_condition": flag.has_missing_condition,
        "conditions": [c.to_dict() for c in flag.conditions],
        "context": dict(flag.context),
    }


def render_json(flags: Sequence[OutlierFlag]) -> str:
    return json.dumps([flag_to_dict(f) for f in _sorted(flags)], indent=1, allow_nan=False) + "\n"
