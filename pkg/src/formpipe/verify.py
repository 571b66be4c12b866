"""Cross-field checks on transcribed records, treatment compliance counts, and
kernel density estimates of lifetimes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tokens import CivilDate


class IndeterminateAge(ValueError):
    """Raised when an age cannot be computed from the dates given."""


@dataclass(frozen=True)
class Record:
    doc_id: str
    birth: CivilDate | None = None
    death: CivilDate | None = None
    age_years: int | None = None
    source: str = "ml"  # ml | crowd | truth


def implied_age_years(birth: CivilDate, death: CivilDate) -> int:
    """Completed years between two dates with 4-digit years."""
    if len(birth.year) != 4 or len(death.year) != 4:
        raise IndeterminateAge("two-digit year: century unknown")
    b = (int(birth.year), birth.month, birth.day)
    d = (int(death.year), death.month, death.day)
    if d < b:
        raise IndeterminateAge("death precedes birth")
    return d[0] - b[0] - ((d[1], d[2]) < (b[1], b[2]))


@dataclass
class ConsistencyReport:
    consistent: list[str] = field(default_factory=list)
    flagged: list[dict] = field(default_factory=list)
    tolerance: int = 1

    @property
    def total(self) -> int:
        return len(self.consistent) + len(self.flagged)

    def summary(self) -> dict:
        n = self.total
        reasons: dict[str, int] = {}
        for f in self.flagged:
            reasons[f["reason"]] = reasons.get(f["reason"], 0) + 1
        return {
            "total": n,
            "consistent": len(self.consistent),
            "flagged": len(self.flagged),
            "consistent_fraction": len(self.consistent) / n if n else 0.0,
            "review_burden": len(self.flagged) / n if n else 0.0,
            "reasons": dict(sorted(reasons.items())),
            "tolerance": self.tolerance,
        }

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "consistent": self.consistent, "flagged": self.flagged}


def consistency_filter(records, tolerance_years: int = 1) -> ConsistencyReport:
    """Keep records whose transcribed age is within ``tolerance_years`` of the
    age implied by the two dates; everything else is flagged with a reason."""
    if tolerance_years < 0:
        raise ValueError("tolerance must be >= 0")
    rep = ConsistencyReport(tolerance=tolerance_years)
    for r in records:
        if r.birth is None or r.death is None or r.age_years is None:
            rep.flagged.append({"doc_id": r.doc_id, "reason": "missing_field"})
            continue
        if r.birth.ambiguous_century or r.death.ambiguous_century:
            rep.flagged.append({"doc_id": r.doc_id, "reason": "two_digit_year"})
            continue
        try:
            implied = implied_age_years(r.birth, r.death)
        except IndeterminateAge:
            rep.flagged.append({"doc_id": r.doc_id, "reason": "date_order"})
            continue
        if abs(implied - r.age_years) <= tolerance_years:
            rep.consistent.append(r.doc_id)
        else:
            rep.flagged.append({"doc_id": r.doc_id, "reason": "age_mismatch", "implied": implied, "age": r.age_years})
    return rep


@dataclass(frozen=True)
class ComplianceTable:
    eligible: int
    ineligible: int
    treated_eligible: int
    treated_ineligible: int
    missing: int  # people without a birth date, kept out of every cell

    @property
    def untreated_eligible(self) -> int:
        return self.eligible - self.treated_eligible

    @property
    def untreated_ineligible(self) -> int:
        return self.ineligible - self.treated_ineligible

    @property
    def treated(self) -> int:
        return self.treated_eligible + self.treated_ineligible

    @property
    def non_compliers(self) -> int:
        return self.untreated_eligible + self.treated_ineligible

    @property
    def uptake(self) -> float | None:
        return self.treated_eligible / self.eligible if self.eligible else None

    def to_dict(self) -> dict:
        return {
            "eligible": self.eligible,
            "ineligible": self.ineligible,
            "treated": self.treated,
            "treated_eligible": self.treated_eligible,
            "treated_ineligible": self.treated_ineligible,
            "untreated_eligible": self.untreated_eligible,
            "untreated_ineligible": self.untreated_ineligible,
            "non_compliers": self.non_compliers,
            "uptake": self.uptake,
            "missing": self.missing,
        }


def compliance_table(people, eligible_days=frozenset({1, 2, 3})) -> ComplianceTable:
    """``people`` yields ``(birth: CivilDate | None, detected_treated: bool)``."""
    days = set(eligible_days)
    el = inel = te = ti = miss = 0
    for birth, treated in people:
        if birth is None:
            miss += 1
            continue
        if birth.day in days:
            el += 1
            te += bool(treated)
        else:
            inel += 1
            ti += bool(treated)
    return ComplianceTable(el, inel, te, ti, miss)


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, float)
    if len(x) < 2:
        raise ValueError("automatic bandwidth needs at least 2 values")
    return 1.06 * float(np.std(x, ddof=1)) * len(x) ** (-0.2)


def kde_density(values, bandwidth="auto", grid=(0.0, 100.0, 201), restrict: bool = True):
    """Gaussian KDE evaluated on ``linspace(*grid)``; returns ``(x, density)``.

    With ``restrict`` the values are first limited to the grid range.
    """
    lo, hi, n = float(grid[0]), float(grid[1]), int(grid[2])
    if n < 2 or not hi > lo:
        raise ValueError("grid needs hi > lo and n >= 2")
    v = np.asarray(list(values), float)
    v = v[np.isfinite(v)]
    if restrict:
        v = v[(v >= lo) & (v <= hi)]
    if len(v) == 0:
        raise ValueError("no values left after filtering")
    h = silverman_bandwidth(v) if bandwidth == "auto" else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    x = np.linspace(lo, hi, n)
    dens = np.zeros(n)
    for s in range(0, len(v), 4096):
        z = (x[:, None] - v[None, s : s + 4096]) / h
        dens += np.exp(-0.5 * z * z).sum(1)
    dens /= len(v) * h * np.sqrt(2 * np.pi)
    return x, dens
