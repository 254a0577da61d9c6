"""Algebra of piecewise-linear functions on a closed interval.

Battery levels, charging curves and their running extremes are all
piecewise-linear (PWL) functions of time.  This module gives them one
shared representation — an ordered list of ``(t, v)`` breakpoints with
linear interpolation in between — plus the handful of operations the
battery recursions need: evaluation and min/max-time inversion, shifts,
caps, composition, prefix/suffix running extremes, envelopes and a
pointwise-dominance test.

Conventions
-----------
* ``t`` is in hours, ``v`` in watt-hours (or hours, for inverse curves).
* Breakpoint abscissae are strictly increasing; points closer than
  ``MERGE_EPS`` are merged keeping the larger value.
* Functions are nondecreasing unless constructed with ``monotone=False``
  (needed only for intermediate curves fed into ``prefix_max`` /
  ``suffix_min``; every exported operation returns nondecreasing output
  when its inputs are nondecreasing).
* Evaluation outside the domain is an error; constant extension must be
  requested explicitly via :meth:`PwlFunction.extend_domain`.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left, bisect_right
from typing import Iterable, Sequence

__all__ = [
    "MERGE_EPS",
    "TIME_TOL",
    "VALUE_TOL",
    "PwlError",
    "PwlDomainError",
    "PwlRangeError",
    "PwlFunction",
    "compose",
    "upper_envelope",
    "lower_envelope",
    "dominates_on",
]

# Breakpoints closer than this (in t) are merged, keeping the larger v.
MERGE_EPS = 1e-9
# Comparison tolerances: instance magnitudes are ~10 h and ~1e4 Wh.
TIME_TOL = 1e-6
VALUE_TOL = 1e-3


class PwlError(ValueError):
    """Invalid breakpoint data."""


class PwlDomainError(PwlError):
    """Evaluation requested outside the function's domain."""


class PwlRangeError(PwlError):
    """Inverse evaluation requested outside the function's value range."""


def _merge_points(points: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Merge near-duplicate abscissae (keep larger v) and drop collinear interior points."""
    merged: list[tuple[float, float]] = []
    for t, v in points:
        t = float(t)
        v = float(v)
        if not (math.isfinite(t) and math.isfinite(v)):
            raise PwlError(f"non-finite breakpoint ({t}, {v})")
        if merged and t < merged[-1][0] - MERGE_EPS:
            raise PwlError("breakpoints not sorted by t")
        if merged and t - merged[-1][0] <= MERGE_EPS:
            pt, pv = merged[-1]
            merged[-1] = (pt, max(pv, v))
        else:
            merged.append((t, v))
    # Drop interior points lying on the segment of their neighbours.
    out: list[tuple[float, float]] = []
    for p in merged:
        while len(out) >= 2:
            (t0, v0), (t1, v1) = out[-2], out[-1]
            t2, v2 = p
            interp = v0 + (v2 - v0) * (t1 - t0) / (t2 - t0)
            if abs(interp - v1) <= 1e-9:
                out.pop()
            else:
                break
        out.append(p)
    return out


class PwlFunction:
    """A piecewise-linear function given by its ordered breakpoints.

    Instances are immutable values: every operation returns a new object,
    so they can be shared and copied freely.
    """

    __slots__ = ("xs", "ys")

    def __init__(self, points: Sequence[tuple[float, float]], monotone: bool = True):
        pts = _merge_points(points)
        if not pts:
            raise PwlError("a PWL function needs at least one breakpoint")
        if monotone:
            run = -math.inf
            fixed: list[tuple[float, float]] = []
            for t, v in pts:
                if v < run - TIME_TOL:
                    raise PwlError(
                        f"value decreases at t={t}: {v} after running max {run}"
                    )
                run = max(run, v)
                fixed.append((t, run))
            pts = fixed
        self.xs = tuple(p[0] for p in pts)
        self.ys = tuple(p[1] for p in pts)

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, lo: float, hi: float, value: float) -> "PwlFunction":
        if hi < lo:
            raise PwlError(f"empty domain [{lo}, {hi}]")
        if hi - lo <= MERGE_EPS:
            return cls([(lo, value)])
        return cls([(lo, value), (hi, value)])

    @classmethod
    def identity(cls, lo: float, hi: float) -> "PwlFunction":
        if hi - lo <= MERGE_EPS:
            return cls([(lo, lo)])
        return cls([(lo, lo), (hi, hi)])

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]], monotone: bool = True) -> "PwlFunction":
        return cls([(p[0], p[1]) for p in pairs], monotone=monotone)

    # -- basic queries -----------------------------------------------------

    @property
    def domain(self) -> tuple[float, float]:
        return self.xs[0], self.xs[-1]

    @property
    def is_point(self) -> bool:
        return len(self.xs) == 1

    @property
    def min_value(self) -> float:
        return min(self.ys)

    @property
    def max_value(self) -> float:
        return max(self.ys)

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.xs, self.ys))

    def to_pairs(self) -> list[list[float]]:
        return [[t, v] for t, v in zip(self.xs, self.ys)]

    def to_json(self) -> str:
        return json.dumps(self.to_pairs())

    @classmethod
    def from_json(cls, text: str, monotone: bool = True) -> "PwlFunction":
        return cls.from_pairs(json.loads(text), monotone=monotone)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        pts = ", ".join(f"({t:g}, {v:g})" for t, v in zip(self.xs, self.ys))
        return f"PwlFunction([{pts}])"

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PwlFunction)
            and self.xs == other.xs
            and self.ys == other.ys
        )

    def __hash__(self) -> int:
        return hash((self.xs, self.ys))

    def approx_equal(self, other: "PwlFunction", tol: float = VALUE_TOL) -> bool:
        """Pointwise agreement on the common domain at every breakpoint of both."""
        lo = max(self.xs[0], other.xs[0])
        hi = min(self.xs[-1], other.xs[-1])
        if hi < lo - MERGE_EPS:
            return False
        knots = sorted({lo, hi, *(t for t in self.xs + other.xs if lo <= t <= hi)})
        return all(abs(self.eval(t) - other.eval(t)) <= tol for t in knots)

    # -- evaluation --------------------------------------------------------

    def eval(self, t: float) -> float:
        """Linear interpolation at ``t``; exact at breakpoints.

        ``t`` must lie inside the domain (within TIME_TOL slack, which is
        clamped); anything farther out raises :class:`PwlDomainError`.
        """
        xs = self.xs
        if t < xs[0]:
            if xs[0] - t > TIME_TOL:
                raise PwlDomainError(f"t={t} below domain [{xs[0]}, {xs[-1]}]")
            return self.ys[0]
        if t > xs[-1]:
            if t - xs[-1] > TIME_TOL:
                raise PwlDomainError(f"t={t} above domain [{xs[0]}, {xs[-1]}]")
            return self.ys[-1]
        i = bisect_right(xs, t)
        if i == len(xs):
            return self.ys[-1]
        if i == 0:
            return self.ys[0]
        t0, t1 = xs[i - 1], xs[i]
        v0, v1 = self.ys[i - 1], self.ys[i]
        if t1 == t0:
            return max(v0, v1)
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    def first_time_at_or_above(self, y: float) -> float:
        """min{t : f(t) >= y} for nondecreasing f (left endpoint on flats).

        Raises :class:`PwlRangeError` when ``y`` exceeds the maximum value
        by more than VALUE_TOL.
        """
        ys = self.ys
        if y <= ys[0]:
            return self.xs[0]
        if y > ys[-1]:
            if y - ys[-1] <= VALUE_TOL:
                return self.xs[-1]
            raise PwlRangeError(f"value {y} above range maximum {ys[-1]}")
        i = bisect_left(ys, y)
        # ys[i-1] < y <= ys[i]
        v0, v1 = ys[i - 1], ys[i]
        t0, t1 = self.xs[i - 1], self.xs[i]
        if v1 == v0:
            return t0
        return t0 + (y - v0) * (t1 - t0) / (v1 - v0)

    def last_time_at_or_below(self, y: float) -> float:
        """max{t : f(t) <= y} for nondecreasing f (right endpoint on flats)."""
        ys = self.ys
        if y >= ys[-1]:
            return self.xs[-1]
        if y < ys[0]:
            if ys[0] - y <= VALUE_TOL:
                return self.xs[0]
            raise PwlRangeError(f"value {y} below range minimum {ys[0]}")
        i = bisect_right(ys, y)
        # ys[i-1] <= y < ys[i]
        v0, v1 = ys[i - 1], ys[i]
        t0, t1 = self.xs[i - 1], self.xs[i]
        if v1 == v0:
            return t1
        return t0 + (y - v0) * (t1 - t0) / (v1 - v0)

    # -- transforms ---------------------------------------------------------

    def shift(self, dt: float, dv: float) -> "PwlFunction":
        """g(t) = f(t - dt) + dv; the domain translates by ``dt``."""
        return _raw([(t + dt, v + dv) for t, v in zip(self.xs, self.ys)])

    def add_linear(self, slope: float) -> "PwlFunction":
        """g(t) = f(t) + slope * t (same breakpoints)."""
        return _raw([(t, v + slope * t) for t, v in zip(self.xs, self.ys)])

    def clamp_max(self, cap: float) -> "PwlFunction":
        """Pointwise min(f, cap)."""
        return self._clamp(cap, upper=True)

    def clamp_min(self, floor: float) -> "PwlFunction":
        """Pointwise max(f, floor)."""
        return self._clamp(floor, upper=False)

    def _clamp(self, bound: float, upper: bool) -> "PwlFunction":
        pts: list[tuple[float, float]] = []
        prev: tuple[float, float] | None = None
        for t, v in zip(self.xs, self.ys):
            cv = min(v, bound) if upper else max(v, bound)
            if prev is not None:
                pt, pv = prev
                # insert the crossing of the segment with the bound
                if (pv - bound) * (v - bound) < 0:
                    tc = pt + (bound - pv) * (t - pt) / (v - pv)
                    pts.append((tc, bound))
            pts.append((t, cv))
            prev = (t, v)
        return _raw(pts)

    def extend_domain(self, lo: float | None = None, hi: float | None = None) -> "PwlFunction":
        """Constant-extend the domain to ``[lo, hi]`` (explicit request only)."""
        pts = self.points()
        if lo is not None and lo < self.xs[0] - MERGE_EPS:
            pts.insert(0, (lo, self.ys[0]))
        if hi is not None and hi > self.xs[-1] + MERGE_EPS:
            pts.append((hi, self.ys[-1]))
        return _raw(pts)

    def restrict(self, lo: float, hi: float) -> "PwlFunction":
        """Slice the function to ``[lo, hi] ∩ domain`` (endpoints interpolated)."""
        lo = max(lo, self.xs[0])
        hi = min(hi, self.xs[-1])
        if hi < lo - MERGE_EPS:
            raise PwlDomainError(f"restriction [{lo}, {hi}] misses domain {self.domain}")
        hi = max(hi, lo)
        if hi - lo <= MERGE_EPS:
            return _raw([(lo, self.eval(lo))])
        pts = [(lo, self.eval(lo))]
        pts.extend(
            (t, v) for t, v in zip(self.xs, self.ys) if lo + MERGE_EPS < t < hi - MERGE_EPS
        )
        pts.append((hi, self.eval(hi)))
        return _raw(pts)

    # -- running extremes ----------------------------------------------------

    def prefix_max(self) -> "PwlFunction":
        """g(t) = max_{x <= t} f(x); nondecreasing, equals f when f already is."""
        pts: list[tuple[float, float]] = [(self.xs[0], self.ys[0])]
        run = self.ys[0]
        for (t0, v0), (t1, v1) in zip(self.points(), self.points()[1:]):
            if v1 >= run:
                if v0 < run:
                    # flat at `run` until the segment recrosses it
                    tc = t0 + (run - v0) * (t1 - t0) / (v1 - v0)
                    pts.append((tc, run))
                pts.append((t1, v1))
                run = v1
            else:
                pts.append((t1, run))
        return _raw(pts)

    def suffix_min(self) -> "PwlFunction":
        """g(t) = min_{x >= t} f(x); nondecreasing, equals f when f already is."""
        rev = self.points()[::-1]
        pts: list[tuple[float, float]] = [rev[0]]
        run = rev[0][1]
        for (t0, v0), (t1, v1) in zip(rev, rev[1:]):
            # walking right-to-left: t1 < t0
            if v1 <= run:
                if v0 > run:
                    tc = t0 + (run - v0) * (t1 - t0) / (v1 - v0)
                    pts.append((tc, run))
                pts.append((t1, v1))
                run = v1
            else:
                pts.append((t1, run))
        return _raw(pts[::-1])

    def inverse(self) -> "PwlFunction":
        """Inverse of a strictly increasing function (swap coordinates)."""
        pts: list[tuple[float, float]] = []
        for (t0, v0), (t1, v1) in zip(self.points(), self.points()[1:]):
            if v1 <= v0 + MERGE_EPS:
                raise PwlError("inverse requires strictly increasing values")
        for t, v in zip(self.xs, self.ys):
            pts.append((v, t))
        return _raw(pts)


def _raw(points: list[tuple[float, float]]) -> PwlFunction:
    """Construct without the monotonicity repair (internal fast path)."""
    return PwlFunction(points, monotone=False)


# -- binary / n-ary operations ------------------------------------------------


def compose(outer: PwlFunction, inner: PwlFunction) -> PwlFunction:
    """(outer ∘ inner): breakpoints are inner's plus preimages of outer's.

    The range of ``inner`` must lie inside the domain of ``outer`` (values
    within VALUE_TOL of the ends are clamped; beyond that it is an error).
    """
    olo, ohi = outer.domain
    vmin, vmax = min(inner.ys), max(inner.ys)
    if vmin < olo - VALUE_TOL or vmax > ohi + VALUE_TOL:
        raise PwlDomainError(
            f"inner range [{vmin}, {vmax}] outside outer domain [{olo}, {ohi}]"
        )

    def through(v: float) -> float:
        return outer.eval(min(max(v, olo), ohi))

    knots: list[float] = list(inner.xs)
    pts = inner.points()
    for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
        lo, hi = (v0, v1) if v0 <= v1 else (v1, v0)
        if hi - lo <= MERGE_EPS:
            continue
        for w in outer.xs:
            if lo < w < hi:
                knots.append(t0 + (w - v0) * (t1 - t0) / (v1 - v0))
    knots.sort()
    return _raw([(t, through(inner.eval(t))) for t in knots])


def _common_interval(fs: Sequence[PwlFunction]) -> tuple[float, float]:
    if not fs:
        raise PwlError("envelope of an empty function list")
    lo = max(f.xs[0] for f in fs)
    hi = min(f.xs[-1] for f in fs)
    if hi < lo - MERGE_EPS:
        raise PwlDomainError("functions share no common evaluation interval")
    return lo, max(hi, lo)


def _envelope(fs: Sequence[PwlFunction], upper: bool) -> PwlFunction:
    lo, hi = _common_interval(fs)
    if hi - lo <= MERGE_EPS:
        vals = [f.eval(lo) for f in fs]
        return _raw([(lo, max(vals) if upper else min(vals))])
    knots = {lo, hi}
    for f in fs:
        knots.update(t for t in f.xs if lo < t < hi)
    # crossings of every pair of segments, so connect-the-dots is exact
    for i in range(len(fs)):
        for j in range(i + 1, len(fs)):
            knots.update(_crossings(fs[i], fs[j], lo, hi))
    grid = sorted(knots)
    if upper:
        pts = [(t, max(f.eval(t) for f in fs)) for t in grid]
    else:
        pts = [(t, min(f.eval(t) for f in fs)) for t in grid]
    return _raw(pts)


def _crossings(f: PwlFunction, g: PwlFunction, lo: float, hi: float) -> list[float]:
    """Abscissae where f - g changes sign inside [lo, hi]."""
    knots = sorted({lo, hi, *(t for t in f.xs + g.xs if lo < t < hi)})
    out: list[float] = []
    for t0, t1 in zip(knots, knots[1:]):
        d0 = f.eval(t0) - g.eval(t0)
        d1 = f.eval(t1) - g.eval(t1)
        if d0 * d1 < 0:
            out.append(t0 + (-d0) * (t1 - t0) / (d1 - d0))
    return out


def upper_envelope(fs: Sequence[PwlFunction]) -> PwlFunction:
    """Pointwise max over the common interval, crossings included as breakpoints."""
    return _envelope(fs, upper=True)


def lower_envelope(fs: Sequence[PwlFunction]) -> PwlFunction:
    """Pointwise min over the common interval."""
    return _envelope(fs, upper=False)


def dominates_on(
    f1: PwlFunction,
    f2: PwlFunction,
    lo: float,
    hi: float,
    eps: float = VALUE_TOL,
) -> bool:
    """True iff f1(t) >= f2(t) - eps for all t in [lo, hi].

    Checking the breakpoints of both functions inside the interval plus the
    endpoints is sufficient for PWL functions.  An empty interval
    (lo > hi) is vacuously dominated.
    """
    if lo > hi:
        return True
    knots = {lo, hi}
    knots.update(t for t in f1.xs if lo < t < hi)
    knots.update(t for t in f2.xs if lo < t < hi)
    return all(f1.eval(t) >= f2.eval(t) - eps for t in knots)
