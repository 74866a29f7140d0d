"""Explainable outlier detection with conditioning trees."""

from otree.params import Params
from otree.persist import deserialize, serialize
from otree.report import render, render_json
from otree.tabular import ColumnKind, ColumnSpec, Dataset, parse_csv, read_schema
from otree.tree import Model, OutlierFlag, fit, score_rows, select_best_flag

__all__ = [
    "ColumnKind",
    "ColumnSpec",
    "Dataset",
    "Model",
    "OutlierFlag",
    "Params",
    "deserialize",
    "fit",
    "parse_csv",
    "read_schema",
    "render",
    "render_json",
    "score_rows",
    "select_best_flag",
    "serialize",
]
