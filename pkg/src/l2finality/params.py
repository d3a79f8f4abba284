"""Committee security parameters, computed exactly.

For a pool of ``T`` participants of which ``B`` are faulty (plus ``R``
rational participants assumed bribable), a uniformly sampled committee of
size ``C`` is entirely faulty with probability ``comb(B+R, C) / comb(T, C)``.
Its reciprocal ``W`` is the expected number of committee selections before
that happens.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

HOURS_PER_YEAR = 8766  # Julian year, 365.25 days
INFINITE = math.inf


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class CommitteeParams:
    T: int
    B: int
    C: int
    selection_rate: Fraction | int | float = 1000
    R: int = 0

    def __post_init__(self):
        if min(self.T, self.B, self.C, self.R) < 0:
            raise ValueError("committee parameters must be non-negative")
        if self.B + self.R > self.T:
            raise ValueError("B + R cannot exceed T")
        if self.C > self.T:
            raise InfeasibleError(f"committee size {self.C} exceeds pool size {self.T}")

    @property
    def faulty(self) -> int:
        return self.B + self.R


def all_faulty_probability(T: int, B: int, C: int, R: int = 0) -> Fraction:
    """Exact probability that a uniform size-C committee is all faulty."""
    CommitteeParams(T, B, C, R=R)
    return Fraction(math.comb(B + R, C), math.comb(T, C))


def all_faulty_odds(params: CommitteeParams) -> Fraction | float:
    """``W = comb(T, C) / comb(B + R, C)``; :data:`INFINITE` when C > B + R."""
    bad = math.comb(params.faulty, params.C)
    if bad == 0:
        return INFINITE
    return Fraction(math.comb(params.T, params.C), bad)


@dataclass(frozen=True)
class Duration:
    hours: Fraction | float
    years: Fraction | float


def expected_time(W: Fraction | float, selection_rate) -> Duration:
    rate = Fraction(selection_rate)
    if rate <= 0:
        raise ValueError("selection_rate must be positive")
    if W == INFINITE:
        return Duration(INFINITE, INFINITE)
    hours = Fraction(W) / rate
    return Duration(hours, hours / HOURS_PER_YEAR)


def min_committee_size(T: int, B: int, R: int, rate, target_years) -> int:
    """Smallest committee size whose expected time to an all-faulty draw meets the target."""
    if target_years <= 0:
        raise ValueError("target_years must be positive")
    target = Fraction(target_years)
    for C in range(1, T + 1):
        if expected_time(all_faulty_odds(CommitteeParams(T, B, C, rate, R)), rate).years >= target:
            return C
    raise InfeasibleError(f"no committee size up to {T} reaches {target_years} years")


@dataclass(frozen=True)
class BreakEven:
    unadjusted: Fraction
    adjusted: Fraction


def replication_break_even(C: int, verifier_count: int = 0,
                           verify_cost_fraction=0) -> BreakEven:
    """Proof-cost multiplier at which proving matches C-fold replicated execution.

    ``adjusted`` subtracts the replicated verification work, each verifier
    costing ``verify_cost_fraction`` of one execution.
    """
    if C < 1:
        raise ValueError("committee size must be >= 1")
    m = Fraction(C)
    return BreakEven(m, m - verifier_count * Fraction(verify_cost_fraction))


@dataclass(frozen=True)
class TableRow:
    C: int
    W: Fraction | float
    hours: Fraction | float
    years: Fraction | float


def committee_table(T: int, B: int, C_values: Iterable[int], rate=1000, R: int = 0) -> list[TableRow]:
    rows = []
    for C in C_values:
        W = all_faulty_odds(CommitteeParams(T, B, C, rate, R))
        d = expected_time(W, rate)
        rows.append(TableRow(C, W, d.hours, d.years))
    return rows


def _fmt(x, spec):
    return "inf" if x == INFINITE else format(float(x), spec)


def format_table(rows: list[TableRow]) -> str:
    out = [f"{'C':>4}  {'W (selections)':>16}  {'hours':>16}  {'years':>16}"]
    for r in rows:
        out.append(f"{r.C:>4}  {_fmt(r.W, '.4e'):>16}  {_fmt(r.hours, '.4e'):>16}  "
                   f"{_fmt(r.years, ',.1f'):>16}")
    return "\n".join(out) + "\n"


def table_csv(rows: list[TableRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["C", "W", "hours", "years"])
    for r in rows:
        w.writerow([r.C, _fmt(r.W, ".10g"), _fmt(r.hours, ".10g"), _fmt(r.years, ".10g")])
    return buf.getvalue()
