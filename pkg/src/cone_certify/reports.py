"""Check records shared by the sweep routines."""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

DEFAULT_ABS_TOL = 1e-6
DEFAULT_REL_TOL = 1e-4


def allowed(bound: float, abs_tol: float = DEFAULT_ABS_TOL, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Bound plus the numerical tolerance granted to a discretized check."""
    return bound + abs_tol + rel_tol * abs(bound)


def _default_tolerances() -> dict:
    return {"abs": DEFAULT_ABS_TOL, "rel": DEFAULT_REL_TOL}


@contextmanager
def default_tolerances(abs_tol: float | None = None, rel_tol: float | None = None):
    """Temporarily change the tolerances given to newly created reports."""
    global DEFAULT_ABS_TOL, DEFAULT_REL_TOL
    saved = DEFAULT_ABS_TOL, DEFAULT_REL_TOL
    if abs_tol is not None:
        DEFAULT_ABS_TOL = abs_tol
    if rel_tol is not None:
        DEFAULT_REL_TOL = rel_tol
    try:
        yield
    finally:
        DEFAULT_ABS_TOL, DEFAULT_REL_TOL = saved


@dataclass
class CheckReport:
    """Outcome of one inequality sweep; passes iff ``violations == 0``."""

    check_id: str
    description: str
    evaluations: int = 0
    violations: int = 0
    worst_margin: float = math.inf
    tolerances: dict = field(default_factory=_default_tolerances)
    details: dict = field(default_factory=dict)
    worst_case: dict = field(default_factory=dict)
    aliases: tuple = ()

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.evaluations > 0

    def record(self, observed: float, bound: float, context: dict | None = None, lower: bool = False) -> bool:
        """Record observed <= bound (or observed >= bound when ``lower``) under the tolerances."""
        self.evaluations += 1
        tol_a = self.tolerances["abs"]
        tol_r = self.tolerances["rel"]
        if lower:
            margin = observed - bound
            ok = observed >= bound - tol_a - tol_r * abs(bound)
        else:
            margin = bound - observed
            ok = observed <= allowed(bound, tol_a, tol_r)
        if not (margin == margin):  # nan never passes
            ok = False
        if not ok:
            self.violations += 1
        had_violation = bool(self.worst_case.get("violation"))
        if (not ok and not had_violation) or (margin < self.worst_margin and (not ok or not had_violation)):
            self.worst_case = {"observed": observed, "bound": bound, "violation": not ok, **(context or {})}
        if margin < self.worst_margin:
            self.worst_margin = margin
        return ok

    def fail(self, reason: str, context: dict | None = None) -> None:
        self.evaluations += 1
        self.violations += 1
        self.details.setdefault("failures", []).append({"reason": reason, **(context or {})})
        if not self.worst_case.get("violation"):
            self.worst_case = {"violation": True, "reason": reason, **(context or {})}

    def merge(self, other: "CheckReport") -> None:
        self.evaluations += other.evaluations
        self.violations += other.violations
        if other.worst_margin < self.worst_margin:
            self.worst_margin = other.worst_margin
            self.worst_case = dict(other.worst_case)
        for item in other.details.get("failures", []):
            self.details.setdefault("failures", []).append(item)

    def to_dict(self) -> dict:
        return {
            "id": self.check_id,
            "aliases": list(self.aliases),
            "description": self.description,
            "pass": self.ok,
            "evaluations": self.evaluations,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "worst_case": self.worst_case,
            "tolerances": self.tolerances,
            "details": self.details,
        }
