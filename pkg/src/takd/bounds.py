"""Numeric explorer for the generalization-bound chain.

Each training route has a bound of the form

    sum over hops of c * |F|_C / n^alpha   +   sum of approximation errors

evaluated at a finite sample count n with a single shared constant c.  The
module compares the three routes (from scratch, direct distillation,
distillation through an assistant) on bound VALUES, which is all the
asymptotic argument licenses; it never claims an ordering of true risks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace

from .errors import ConfigError

ALPHA_MIN = 0.5
ALPHA_MAX = 1.0


@dataclass(frozen=True)
class BoundParams:
    """Capacities, learning-rate exponents, approximation errors, sample count.

    Exponent subscripts name (learner, target): sr = student from real
    labels, st = student from teacher, sa = student from assistant,
    at = assistant from teacher, tr = teacher from real labels.
    """

    cap_s: float
    cap_a: float
    cap_t: float
    alpha_sr: float
    alpha_st: float
    alpha_sa: float
    alpha_at: float
    alpha_tr: float
    eps_sr: float
    eps_st: float
    eps_sa: float
    eps_at: float
    eps_tr: float
    n: int
    c: float = 1.0

    def __post_init__(self) -> None:
        for name in ("cap_s", "cap_a", "cap_t"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("alpha_sr", "alpha_st", "alpha_sa", "alpha_at", "alpha_tr"):
            a = getattr(self, name)
            if not ALPHA_MIN <= a <= ALPHA_MAX:
                raise ConfigError(f"{name}={a} outside [{ALPHA_MIN}, {ALPHA_MAX}]")
        for name in ("eps_sr", "eps_st", "eps_sa", "eps_at", "eps_tr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.n < 1:
            raise ConfigError("n must be a positive integer")
        if self.c <= 0:
            raise ConfigError("c must be positive")

    def at(self, n: int) -> "BoundParams":
        return replace(self, n=n)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundParams":
        fields = set(cls.__dataclass_fields__)
        unknown = set(d) - fields
        if unknown:
            raise ConfigError(f"unknown bound parameters: {sorted(unknown)}")
        missing = fields - set(d) - {"c"}
        if missing:
            raise ConfigError(f"missing bound parameters: {sorted(missing)}")
        kwargs = {k: (int(v) if k == "n" else float(v)) for k, v in d.items()}
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "BoundParams":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _estimation(c: float, cap: float, n: int, alpha: float) -> float:
    return c * cap / n**alpha


def nokd_bound(p: BoundParams, n: int | None = None) -> float:
    """Student trained from labels alone."""
    n = p.n if n is None else n
    return _estimation(p.c, p.cap_s, n, p.alpha_sr) + p.eps_sr


def blkd_bound(p: BoundParams, n: int | None = None) -> float:
    """Teacher from labels, student from teacher."""
    n = p.n if n is None else n
    return (p.c * (p.cap_t / n**p.alpha_tr + p.cap_s / n**p.alpha_st)
            + p.eps_tr + p.eps_st)


def takd_bound(p: BoundParams, n: int | None = None) -> float:
    """Teacher from labels, assistant from teacher, student from assistant."""
    n = p.n if n is None else n
    return (p.c * (p.cap_t / n**p.alpha_tr + p.cap_a / n**p.alpha_at
                   + p.cap_s / n**p.alpha_sa)
            + p.eps_tr + p.eps_at + p.eps_sa)


@dataclass(frozen=True)
class OrderingReport:
    n: int
    nokd: float
    blkd: float
    takd: float

    @property
    def takd_le_blkd(self) -> bool:
        return self.takd <= self.blkd

    @property
    def blkd_le_nokd(self) -> bool:
        return self.blkd <= self.nokd

    @property
    def margin_blkd_minus_takd(self) -> float:
        return self.blkd - self.takd

    @property
    def margin_nokd_minus_blkd(self) -> float:
        return self.nokd - self.blkd

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "nokd": self.nokd,
            "blkd": self.blkd,
            "takd": self.takd,
            "takd_le_blkd": self.takd_le_blkd,
            "blkd_le_nokd": self.blkd_le_nokd,
            "margin_blkd_minus_takd": self.margin_blkd_minus_takd,
            "margin_nokd_minus_blkd": self.margin_nokd_minus_blkd,
        }


def check_ordering(p: BoundParams, n: int | None = None) -> OrderingReport:
    """Evaluate both chain inequalities at a finite n with signed margins."""
    n = p.n if n is None else n
    return OrderingReport(n, nokd_bound(p, n), blkd_bound(p, n), takd_bound(p, n))


def find_crossover_n(p: BoundParams, cap: int = 2**60) -> int | None:
    """Smallest probed n at which takd_bound <= blkd_bound, or None.

    Doubles n until the inequality holds, then bisects down to an exact
    integer boundary: the returned n satisfies the inequality while n-1
    does not.  If the inequality still fails at the cap (which happens
    whenever its n -> infinity limit fails), returns None.
    """

    def holds(n: int) -> bool:
        return takd_bound(p, n) <= blkd_bound(p, n)

    if holds(1):
        return 1
    lo = 1  # holds(lo) is False
    hi = 2
    while hi <= cap:
        if holds(hi):
            break
        lo = hi
        hi *= 2
    else:
        return None
    if hi > cap:
        return None
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return hi


def crossover_table(p: BoundParams, n_values) -> list[OrderingReport]:
    return [check_ordering(p, int(n)) for n in n_values]


def write_bounds_csv(reports, path) -> None:
    """Columns: n, nokd, blkd, takd."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "nokd", "blkd", "takd"])
        for r in reports:
            writer.writerow([r.n, f"{r.nokd:.9g}", f"{r.blkd:.9g}",
                             f"{r.takd:.9g}"])
