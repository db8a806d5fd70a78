"""Bootstrap simultaneous confidence bands for the decomposition curves.

Subjects are resampled with replacement within each group (sizes preserved),
the decomposition is re-estimated per replicate with bandwidths held fixed,
and the band half-width at level alpha is se(t) times the empirical
(1 - alpha) quantile of the per-replicate supremum of |D_b(t) - D(t)| / se(t),
where se(t) is the across-replicate sample standard deviation.  One set of
resamples serves all four components.

Replicate RNG comes from per-replicate substreams of a counter-based
generator, so results do not depend on scheduling or the worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .decomposition import Bandwidths, TimeGrid, estimate_decomposition
from .errors import EstimationError
from .estimators import EPANECHNIKOV, FlatGroup
from .kernels import KernelSpec

COMPONENTS = ("D", "D1", "D2", "D3")


@dataclass(frozen=True)
class SCBResult:
    """Simultaneous band for one component.

    lower/upper equal point -/+ se * Q_alpha everywhere; supported marks the
    grid points that entered the supremum (finite point estimate, at least
    two replicate values, positive bootstrap variance).
    """

    component: str
    grid: TimeGrid
    point: np.ndarray
    se: np.ndarray
    Q_alpha: float
    lower: np.ndarray
    upper: np.ndarray
    B: int
    alpha: float
    seed: int
    supported: np.ndarray
    n_failed: int = 0
    n_degraded: int = 0
    replicate_curves: np.ndarray | None = None


def summarize_replicates(replicates: np.ndarray, point: np.ndarray, alpha: float):
    """Band ingredients from a replicate matrix: (se, Q_alpha, supported, Q_b).

    se is the per-column sample SD (ddof=1) over the finite replicate values.
    Columns with zero variance, a missing point estimate, or fewer than two
    replicate values are excluded from the supremum; replicates skip their
    own missing columns.  Q_alpha is the order statistic at the 1-based index
    ceil((1 - alpha) * B') over the B' replicates with a defined supremum.
    """
    replicates = np.asarray(replicates, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64)
    if replicates.ndim != 2 or replicates.shape[1] != len(point):
        raise ValueError("replicates must be (B, grid) aligned with point")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie strictly between 0 and 1")
    n_b, m = replicates.shape
    finite = np.isfinite(replicates)
    cnt = finite.sum(axis=0)
    se = np.full(m, np.nan)
    enough = cnt >= 2
    if enough.any():
        se[enough] = np.nanstd(replicates[:, enough], axis=0, ddof=1)
    supported = np.isfinite(point) & enough & (se > 0)
    n_excluded = int((np.isfinite(point) & ~supported).sum())
    if n_excluded:
        warnings.warn(
            f"{n_excluded} grid points excluded from the supremum "
            "(zero or undefined bootstrap variance)",
            stacklevel=2,
        )
    if not supported.any():
        raise EstimationError(
            "simultaneous band undefined: no grid point has positive "
            "bootstrap variance"
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.abs(replicates - point[None, :]) / se[None, :]
    ratio[:, ~supported] = np.nan
    q_b = np.full(n_b, np.nan)
    has_any = np.isfinite(ratio).any(axis=1)
    if has_any.any():
        q_b[has_any] = np.nanmax(ratio[has_any], axis=1)
    valid = np.isfinite(q_b)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EstimationError("no bootstrap replicate produced a usable curve")
    k = math.ceil((1.0 - alpha) * n_valid)
    q_alpha = float(np.sort(q_b[valid])[k - 1])
    return se, q_alpha, supported, q_b


def resample_indices(seed: int, b: int, n_majority: int, n_minority: int):
    """First-attempt subject draws of replicate b: (majority idx, minority idx).

    Regenerates exactly what bootstrap_scb uses, majority drawn first.
    """
    child = np.random.SeedSequence(seed).spawn(b + 1)[b]
    rng = np.random.Generator(np.random.Philox(child))
    idx_major = rng.integers(0, n_majority, size=n_majority)
    idx_minor = rng.integers(0, n_minority, size=n_minority)
    return idx_major, idx_minor


def bootstrap_scb(
    majority,
    minority,
    method: str,
    grid: TimeGrid,
    bandwidths: Bandwidths,
    kernel: KernelSpec = EPANECHNIKOV,
    B: int = 500,
    alpha: float = 0.05,
    seed: int = 0,
    *,
    zM: float | None = None,
    zm: float | None = None,
    workers: int = 1,
    ridge: bool = False,
    max_missing_fraction: float = 0.2,
    keep_replicates: bool = False,
) -> list[SCBResult]:
    """Bands for D, D1, D2, D3 from one set of subject-level resamples.

    Bandwidths are the ones selected on the original data; they are not
    re-selected per replicate.  A replicate missing more than 20% of grid
    points is redrawn once from its own substream; a second failure keeps
    whatever the retry produced (gaps and all) or, if estimation failed
    outright, drops the replicate.
    """
    if B < 50:
        raise ValueError("B must be at least 50")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie strictly between 0 and 1")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    flat_major = majority if isinstance(majority, FlatGroup) else FlatGroup.from_dataset(majority)
    flat_minor = minority if isinstance(minority, FlatGroup) else FlatGroup.from_dataset(minority)
    point = estimate_decomposition(
        method,
        flat_major,
        flat_minor,
        grid,
        bandwidths,
        kernel,
        zM=zM,
        zm=zm,
        ridge=ridge,
        max_missing_fraction=max_missing_fraction,
    )
    m = len(grid)
    reps = np.full((B, len(COMPONENTS), m), np.nan)
    failed = np.zeros(B, dtype=bool)
    degraded = np.zeros(B, dtype=bool)
    children = np.random.SeedSequence(seed).spawn(B)

    def run_one(b: int) -> None:
        rng = np.random.Generator(np.random.Philox(children[b]))
        curve = None
        for _attempt in range(2):
            idx_major = rng.integers(0, flat_major.n_subjects, size=flat_major.n_subjects)
            idx_minor = rng.integers(0, flat_minor.n_subjects, size=flat_minor.n_subjects)
            try:
                candidate = estimate_decomposition(
                    method,
                    flat_major.resample(idx_major),
                    flat_minor.resample(idx_minor),
                    grid,
                    bandwidths,
                    kernel,
                    zM=zM,
                    zm=zm,
                    ridge=ridge,
                    max_missing_fraction=1.0,
                )
            except EstimationError:
                continue
            curve = candidate
            if curve.n_missing <= 0.2 * m:
                break
        if curve is None:
            failed[b] = True
            return
        if curve.n_missing > 0.2 * m:
            degraded[b] = True
        for ci, name in enumerate(COMPONENTS):
            reps[b, ci] = getattr(curve, name)

    if workers == 1:
        for b in range(B):
            run_one(b)
    else:
        # Replicates write disjoint rows; substream RNG makes the result
        # independent of how the pool schedules them.
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, range(B)))

    n_failed = int(failed.sum())
    n_degraded = int(degraded.sum())
    if n_failed:
        warnings.warn(
            f"{n_failed} of {B} bootstrap replicates failed twice and were dropped",
            stacklevel=2,
        )
    if n_degraded:
        warnings.warn(
            f"{n_degraded} of {B} bootstrap replicates kept more than 20% gaps "
            "after one redraw",
            stacklevel=2,
        )

    results = []
    for ci, name in enumerate(COMPONENTS):
        pt = getattr(point, name)
        se, q_alpha, supported, _ = summarize_replicates(reps[:, ci, :], pt, alpha)
        results.append(
            SCBResult(
                component=name,
                grid=grid,
                point=pt,
                se=se,
                Q_alpha=q_alpha,
                lower=pt - se * q_alpha,
                upper=pt + se * q_alpha,
                B=B,
                alpha=alpha,
                seed=seed,
                supported=supported,
                n_failed=n_failed,
                n_degraded=n_degraded,
                replicate_curves=reps[:, ci, :].copy() if keep_replicates else None,
            )
        )
    return results
