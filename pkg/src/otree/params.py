"""Tuning parameters shared by every stage of the outlier search."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class Params:
    """Thresholds and size gates for fitting.

    ``z_gap`` and ``z_tail`` default to values derived from the other
    z-thresholds (``z_outlier - z_normal`` and ``2 * z_normal``) when left as
    ``None``.
    """

    p_o: float = 0.01
    z_outlier: float = 8.0
    z_normal: float = 2.67
    z_gap: float | None = None
    z_tail: float | None = None
    eps_log: float = 1e-3
    eps_legacy: float = 1e-6
    g_min: float = 1e-3
    min_size_numeric: int = 25
    min_size_categ: int = 50
    max_depth: int = 4
    legacy_transform: bool = False
    # When off, a heavy tail that a transform would fix is flagged as a tail.
    transforms: bool = True
    follow_all: bool = False
    # Root-level categorical rule; the max-count schedule allows 1 rare row
    # below the first break, 2 below the second and 3 beyond.
    root_categ_min_rows: int = 1000
    root_categ_min_next: int = 250
    root_categ_breaks: tuple[int, int] = (10_000, 100_000)

    def __post_init__(self) -> None:
        if self.z_gap is None:
            object.__setattr__(self, "z_gap", self.z_outlier - self.z_normal)
        if self.z_tail is None:
            object.__setattr__(self, "z_tail", 2.0 * self.z_normal)
        object.__setattr__(self, "root_categ_breaks", tuple(self.root_categ_breaks))
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v}")
        if not 0.0 < self.p_o < 0.5:
            raise ValueError(f"p_o must lie in (0, 0.5), got {self.p_o}")
        if not self.z_outlier > self.z_normal > 0:
            raise ValueError(
                f"need z_outlier > z_normal > 0, got {self.z_outlier} and {self.z_normal}"
            )
        if self.z_gap <= 0 or self.z_tail <= 0:
            raise ValueError("z_gap and z_tail must be positive")
        if self.eps_log <= 0 or self.eps_legacy <= 0:
            raise ValueError("epsilons must be positive")
        if self.g_min < 0:
            raise ValueError(f"g_min must be >= 0, got {self.g_min}")
        for name in ("min_size_numeric", "min_size_categ", "root_categ_min_rows",
                     "root_categ_min_next"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        lo, hi = self.root_categ_breaks
        if not 0 < lo <= hi:
            raise ValueError(f"root_categ_breaks must be increasing, got {self.root_categ_breaks}")

    def min_size(self, numeric: bool) -> int:
        return self.min_size_numeric if numeric else self.min_size_categ

    def to_dict(self) -> dict:
        d = asdict(self)
        d["root_categ_breaks"] = list(self.root_categ_breaks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Params:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")
        return cls(**d)
