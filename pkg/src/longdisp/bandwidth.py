"""Leave-one-subject-out cross-validation for bandwidth selection.

The CV score of a candidate pair (b1, b2) is the sum of squared prediction
errors over held-out observations: each subject is removed in turn and every
one of its observations is predicted from a fit at (t_ij, Z_i) that excludes
the whole subject.  Holding out whole subjects respects the within-subject
correlation; observation-level CV would not.

Four targets share the machinery: "beta" (the coefficient fit, continuous or
discrete modifier), "beta_time" (the time-only fit with the modifier as a
regressor), "cond_mean" (the conditional mean of covariate r), and
"time_mean" (its time-only marginal).  The time-only targets have no b2
dimension, as with a discrete modifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import LongitudinalDataset
from .errors import EmptyWindowError, GridTooNarrowError, SingularFitError
from .estimators import (
    EPANECHNIKOV,
    FlatGroup,
    _fit_pointwise,
    weight_floor,
)
from .kernels import KernelSpec

TARGETS = ("beta", "beta_time", "cond_mean", "time_mean")


@dataclass(frozen=True)
class BandwidthGrid:
    """Candidate bandwidths, one sorted axis per kernel dimension.

    b2_candidates stays empty for discrete modifiers and time-only targets.
    """

    b1_candidates: tuple[float, ...]
    b2_candidates: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "b1_candidates", tuple(self.b1_candidates))
        object.__setattr__(self, "b2_candidates", tuple(self.b2_candidates))
        for name, cands in (("b1", self.b1_candidates), ("b2", self.b2_candidates)):
            if name == "b1" and not cands:
                raise ValueError("b1_candidates must be nonempty")
            for c in cands:
                if not (math.isfinite(c) and c > 0):
                    raise ValueError(f"{name} candidate {c!r} is not a positive number")
            if any(b <= a for a, b in zip(cands, cands[1:])):
                raise ValueError(f"{name} candidates must be strictly increasing")

    @classmethod
    def default(
        cls,
        dataset: LongitudinalDataset,
        n_points: int = 8,
        include_b2: bool | None = None,
    ) -> "BandwidthGrid":
        """Geometric grids on standardized scales.

        b1 spans 5% to 50% of the observed time range; b2 spans 0.1 to 1.0
        sample SDs of the subject-level modifier.  include_b2 defaults to
        "continuous modifier".
        """
        if n_points < 1:
            raise ValueError("n_points must be at least 1")
        lo, hi = dataset.time_range
        t_range = hi - lo
        if not t_range > 0:
            raise ValueError("cannot build a default grid: zero time range")
        b1 = tuple(np.geomspace(0.05 * t_range, 0.5 * t_range, n_points))
        if include_b2 is None:
            include_b2 = not dataset.modifier.is_discrete
        if not include_b2:
            return cls(b1)
        sd = float(np.std(dataset.subject_modifiers, ddof=1))
        if not sd > 0:
            raise ValueError(
                "modifier has zero variance; supply explicit b2 candidates"
            )
        b2 = tuple(np.geomspace(0.1 * sd, 1.0 * sd, n_points))
        return cls(b1, b2)

    def pairs(self):
        """All candidate pairs in ascending (b1, b2) order; b2 None when absent."""
        if not self.b2_candidates:
            return [(b1, None) for b1 in self.b1_candidates]
        return [(b1, b2) for b1 in self.b1_candidates for b2 in self.b2_candidates]


@dataclass(frozen=True)
class CVCell:
    b1: float
    b2: float | None
    score: float
    n_terms: int
    n_skipped: int
    disqualified: bool


@dataclass(frozen=True)
class CVResult:
    """Outcome of a grid search; selected attains the minimal qualified score."""

    selected: tuple[float, float | None]
    score_table: tuple[CVCell, ...]
    n_skipped: int
    target: str
    r: int | None = None


def _needs_b2(dataset: LongitudinalDataset, target: str) -> bool:
    if target in ("beta_time", "time_mean"):
        return False
    return not dataset.modifier.is_discrete


def _eval_subjects(n: int, cv_subsample: float) -> np.ndarray:
    """Deterministic evenly spaced subject subset; fraction 1.0 keeps all."""
    if not 0 < cv_subsample <= 1:
        raise ValueError("cv_subsample must be in (0, 1]")
    m = max(2, math.ceil(cv_subsample * n))
    if m >= n:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, m)).astype(int))


def _modifier_column(flat: FlatGroup, zi: float, b2, kernel, target: str) -> np.ndarray:
    """Per-observation modifier weight for an evaluation at Z = zi."""
    z_obs = flat.z_subj[flat.subj]
    if target in ("beta_time", "time_mean"):
        return np.ones(len(z_obs))
    if flat.modifier.is_discrete:
        return (z_obs == zi).astype(np.float64)
    return kernel.evaluate((z_obs - zi) / b2)


def _target_arrays(flat: FlatGroup, target: str, r: int | None):
    """(design or None, response) for the requested prediction target."""
    if target == "beta":
        return flat.design(include_modifier=False), flat.outcomes
    if target == "beta_time":
        return flat.design(include_modifier=True), flat.outcomes
    if target in ("cond_mean", "time_mean"):
        if r is None or not 1 <= r <= flat.p:
            raise ValueError(f"target {target!r} needs a covariate index r in 1..{flat.p}")
        return None, flat.covariates[:, r - 1]
    raise ValueError(f"unknown target {target!r}; expected one of {TARGETS}")


def _floor_for(flat: FlatGroup, target: str, X, kernel: KernelSpec) -> float:
    if X is None:
        return 0.0  # means need only positive mass
    factors = 1 if (flat.modifier.is_discrete or target == "beta_time") else 2
    return weight_floor(X.shape[1], kernel, factors)


def _pair_score(flat, X, resp, floor, b1, b2, kernel, target, eval_subjects, ridge):
    """One candidate pair's LOSO score, evaluated term by term.

    The held-out subject is excluded by zeroing its weights, which leaves its
    outcome values with exactly zero influence on every sum.
    """
    total = 0.0
    n_terms = 0
    n_skipped = 0
    for i in eval_subjects:
        zi = float(flat.z_subj[i])
        mz = _modifier_column(flat, zi, b2, kernel, target)
        lo = flat.starts[i]
        hi = lo + flat.counts[i]
        mz[lo:hi] = 0.0
        for j in range(lo, hi):
            t = flat.times[j]
            w = kernel.evaluate((flat.times - t) / b1) * mz
            try:
                if X is None:
                    act = np.flatnonzero(w)
                    if act.size == 0:
                        raise EmptyWindowError(t, zi)
                    sw = float(np.einsum("i->", w[act]))
                    pred = float(np.einsum("i,i->", w[act], resp[act]) / sw)
                else:
                    fit = _fit_pointwise(X, resp, w, floor, t, zi, ridge)
                    pred = float(X[j] @ fit.beta)
            except (EmptyWindowError, SingularFitError):
                n_skipped += 1
                continue
            total += (resp[j] - pred) ** 2
            n_terms += 1
    return total, n_terms, n_skipped


def _pair_viable(flat, X, floor, b1, b2, kernel, target, eval_subjects) -> float:
    """Fraction of prediction points with enough window mass (no solves)."""
    covered = 0
    count = 0
    for i in eval_subjects:
        zi = float(flat.z_subj[i])
        mz = _modifier_column(flat, zi, b2, kernel, target)
        lo = flat.starts[i]
        hi = lo + flat.counts[i]
        mz[lo:hi] = 0.0
        for j in range(lo, hi):
            w = kernel.evaluate((flat.times - flat.times[j]) / b1) * mz
            sw = float(np.einsum("i->", w))
            count += 1
            if (X is None and sw > 0) or (X is not None and sw >= floor):
                covered += 1
    return covered / count if count else 0.0


def select_bandwidths_cv(
    dataset: LongitudinalDataset,
    grid: BandwidthGrid,
    target: str = "beta",
    kernel: KernelSpec = EPANECHNIKOV,
    *,
    r: int | None = None,
    cv_subsample: float = 1.0,
    ridge: bool = False,
) -> CVResult:
    """Grid search minimizing the leave-one-subject-out prediction error.

    A pair whose fits fail (empty window or singular) at more than half of
    the prediction points is disqualified; those terms are dropped from the
    score and counted.  Exact score ties resolve toward the larger b1, then
    the larger b2.
    """
    if dataset.n_subjects < 3:
        raise ValueError("cross-validation needs at least 3 subjects")
    needs_b2 = _needs_b2(dataset, target)
    if needs_b2 and not grid.b2_candidates:
        raise ValueError(f"target {target!r} needs b2 candidates for a continuous modifier")
    if not needs_b2 and grid.b2_candidates:
        raise ValueError(f"target {target!r} takes no b2 dimension; supply an empty b2 axis")
    flat = FlatGroup.from_dataset(dataset)
    X, resp = _target_arrays(flat, target, r)
    floor = _floor_for(flat, target, X, kernel)
    eval_subjects = _eval_subjects(flat.n_subjects, cv_subsample)

    cells = []
    best = None
    best_key = None
    for b1, b2 in grid.pairs():
        score, n_terms, n_skipped = _pair_score(
            flat, X, resp, floor, b1, b2, kernel, target, eval_subjects, ridge
        )
        n_points = n_terms + n_skipped
        disqualified = n_points == 0 or n_skipped > 0.5 * n_points
        cells.append(CVCell(b1, b2, score, n_terms, n_skipped, disqualified))
        if disqualified:
            continue
        # <= keeps the later pair on ties: pairs() ascends, so the larger
        # b1 (then b2) wins as required.
        if best_key is None or score <= best_key:
            best_key = score
            best = cells[-1]
    if best is None:
        suggestion = _viability_suggestion(
            flat, X, floor, grid, kernel, target, eval_subjects
        )
        raise GridTooNarrowError(
            "every candidate bandwidth pair left more than half of the "
            f"prediction points without a usable window; {suggestion}"
        )
    return CVResult(
        selected=(best.b1, best.b2),
        score_table=tuple(cells),
        n_skipped=best.n_skipped,
        target=target,
        r=r,
    )


def _viability_suggestion(flat, X, floor, grid, kernel, target, eval_subjects) -> str:
    """Search upward from the grid maxima for the smallest viable pair."""
    b1 = max(grid.b1_candidates)
    b2 = max(grid.b2_candidates) if grid.b2_candidates else None
    for _ in range(6):
        b1 *= 2.0
        if b2 is not None:
            b2 *= 2.0
        frac = _pair_viable(flat, X, floor, b1, b2, kernel, target, eval_subjects)
        if frac >= 0.5:
            if b2 is None:
                return f"smallest viable candidate found: b1={b1:.6g}"
            return f"smallest viable candidate found: b1={b1:.6g}, b2={b2:.6g}"
    return "no viable candidate found up to 64x the grid maxima"
