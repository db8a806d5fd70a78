"""Plug-in estimation of the three disparity decompositions over a time grid.

All three methods split the majority-minority outcome gap D(t) into an
unexplained part D1 (coefficient differences), a covariate-explained part D2,
and a modifier-explained part D3, with D = D1 + D2 + D3 holding exactly
because D is computed as that sum.

* mldd averages coefficient and conditional-mean surfaces over the majority
  group's modifier values (the minority's enter only through D3's second
  term), following the Peters-Belson convention of pricing covariate gaps at
  minority coefficients.
* cmldd is the same contrast at fixed modifier values (zM, zm).
* ldd ignores modifier interactions: coefficients vary with time only and
  the modifier sits in the design as the last regressor; D2 carries the
  covariate part of the explained gap and D3 the modifier part.

Grid points where any required fit fails are reported as gaps, never
interpolated; more than a 20% gap fraction aborts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .data import LongitudinalDataset
from .errors import EmptyLevelError, EstimationError
from .estimators import (
    EPANECHNIKOV,
    FlatGroup,
    batched_beta_curves,
    batched_mean_curves,
    modifier_weights,
)
from .kernels import KernelSpec

METHODS = ("ldd", "mldd", "cmldd")


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing evaluation times inside both groups' support."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or len(pts) == 0:
            raise ValueError("grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if len(pts) > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def default(
        cls,
        majority: LongitudinalDataset | FlatGroup,
        minority: LongitudinalDataset | FlatGroup,
        n_points: int = 50,
        trim: float = 0.05,
    ) -> "TimeGrid":
        """Equally spaced points on the common support, trimmed at both ends.

        Trimming keeps evaluation away from the boundary region where the
        local-constant fits are bias-prone and windows run empty.
        """
        if not 0 <= trim < 0.5:
            raise ValueError("trim must be in [0, 0.5)")
        if n_points < 1:
            raise ValueError("n_points must be at least 1")
        tM = majority.times if isinstance(majority, FlatGroup) else majority.obs_times
        tm = minority.times if isinstance(minority, FlatGroup) else minority.obs_times
        lo = max(float(tM.min()), float(tm.min()))
        hi = min(float(tM.max()), float(tm.max()))
        if not hi > lo:
            raise EstimationError(
                f"groups share no time support: [{tM.min()}, {tM.max()}] vs "
                f"[{tm.min()}, {tm.max()}]"
            )
        width = hi - lo
        return cls(np.linspace(lo + trim * width, hi - trim * width, n_points))


@dataclass(frozen=True)
class GroupBandwidths:
    """One group's smoothing parameters.

    cond_b1/cond_b2 hold per-covariate bandwidths for the conditional means;
    empty tuples fall back to (b1, b2).  b2 stays None for discrete modifiers
    and for the time-only fits of the ldd method.
    """

    b1: float
    b2: float | None = None
    cond_b1: tuple[float, ...] = ()
    cond_b2: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "cond_b1", tuple(self.cond_b1))
        object.__setattr__(self, "cond_b2", tuple(self.cond_b2))
        if not (math.isfinite(self.b1) and self.b1 > 0):
            raise ValueError(f"b1 must be positive, got {self.b1!r}")
        if self.b2 is not None and not (math.isfinite(self.b2) and self.b2 > 0):
            raise ValueError(f"b2 must be positive or None, got {self.b2!r}")
        for name, values in (("cond_b1", self.cond_b1), ("cond_b2", self.cond_b2)):
            for v in values:
                if not (math.isfinite(v) and v > 0):
                    raise ValueError(f"{name} entry {v!r} is not positive")

    def cond_pair(self, r: int) -> tuple[float, float | None]:
        """(time, modifier) bandwidth for covariate r, 1-based."""
        b1 = self.cond_b1[r - 1] if self.cond_b1 else self.b1
        b2 = self.cond_b2[r - 1] if self.cond_b2 else self.b2
        return b1, b2


@dataclass(frozen=True)
class Bandwidths:
    majority: GroupBandwidths
    minority: GroupBandwidths

    @classmethod
    def uniform(cls, b1: float, b2: float | None = None) -> "Bandwidths":
        """Same (b1, b2) for both groups and all conditional means."""
        g = GroupBandwidths(b1=b1, b2=b2)
        return cls(majority=g, minority=g)


@dataclass(frozen=True)
class DecompositionCurve:
    """Estimated components over the grid; gaps carry NaN and a raised flag."""

    method: str
    grid: TimeGrid
    D: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    missing: np.ndarray
    zM: float | None = None
    zm: float | None = None

    @cached_property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    def components(self) -> dict[str, np.ndarray]:
        return {"D": self.D, "D1": self.D1, "D2": self.D2, "D3": self.D3}


def _as_flat(group) -> FlatGroup:
    return group if isinstance(group, FlatGroup) else FlatGroup.from_dataset(group)


def _check_groups(flatM: FlatGroup, flatm: FlatGroup) -> None:
    if flatM.p != flatm.p:
        raise ValueError(
            f"groups disagree on covariate count: {flatM.p} vs {flatm.p}"
        )
    if flatM.modifier.is_discrete != flatm.modifier.is_discrete:
        raise ValueError("groups disagree on modifier kind")


def _check_cond_lengths(bw: GroupBandwidths, p: int, label: str) -> None:
    for name, values in (("cond_b1", bw.cond_b1), ("cond_b2", bw.cond_b2)):
        if values and len(values) != p:
            raise ValueError(
                f"{label} {name} has {len(values)} entries for {p} covariates"
            )


def _augmented_means(flat, z_eval, bw, kernel, grid, M_cache=None):
    """Conditional-mean vectors (1, mu_1..mu_p) at each (grid, z) evaluation.

    The intercept slot is fixed at 1 and never smoothed.  Returns
    (mu (m, q, p+1), valid (m, q)).
    """
    m, q, p = len(grid), len(z_eval), flat.p
    mu = np.ones((m, q, p + 1))
    valid = np.ones((m, q), dtype=bool)
    for r in range(1, p + 1):
        b1, b2 = bw.cond_pair(r)
        if M_cache is not None and (b2 in M_cache):
            M = M_cache[b2]
        else:
            M = modifier_weights(flat, z_eval, b2, kernel)
            if M_cache is not None:
                M_cache[b2] = M
        values, ok = batched_mean_curves(flat, r, grid.points, M, b1, kernel)
        mu[:, :, r] = values
        valid &= ok
    return mu, valid


def _time_means(flat, bw, kernel, grid):
    """Time-only local-constant covariate means for the ldd method."""
    m, p = len(grid), flat.p
    ones = np.ones((flat.n_subjects, 1))
    xbar = np.empty((m, p))
    valid = np.ones(m, dtype=bool)
    for r in range(1, p + 1):
        b1, _ = bw.cond_pair(r)
        values, ok = batched_mean_curves(flat, r, grid.points, ones, b1, kernel)
        xbar[:, r - 1] = values[:, 0]
        valid &= ok[:, 0]
    return xbar, valid


def _finalize(method, grid, D1, D2, D3, ok, zM, zm, max_missing_fraction):
    D = D1 + D2 + D3
    missing = ~ok
    for arr in (D, D1, D2, D3):
        arr[missing] = np.nan
    n_missing = int(missing.sum())
    if n_missing > max_missing_fraction * len(grid):
        raise EstimationError(
            f"{n_missing} of {len(grid)} grid points could not be estimated "
            f"(limit {max_missing_fraction:.0%}); enlarge the bandwidths or "
            "shrink the grid"
        )
    return DecompositionCurve(
        method=method,
        grid=grid,
        D=D,
        D1=D1,
        D2=D2,
        D3=D3,
        missing=missing,
        zM=zM,
        zm=zm,
    )


def estimate_mldd(
    majority: LongitudinalDataset | FlatGroup,
    minority: LongitudinalDataset | FlatGroup,
    grid: TimeGrid,
    bandwidths: Bandwidths,
    kernel: KernelSpec = EPANECHNIKOV,
    *,
    ridge: bool = False,
    max_missing_fraction: float = 0.2,
) -> DecompositionCurve:
    """Marginal decomposition, averaging over the majority's modifier values.

    For a discrete modifier the subject averages collapse to level-frequency
    weighted sums, which is how they are computed.
    """
    flatM, flatm = _as_flat(majority), _as_flat(minority)
    _check_groups(flatM, flatm)
    bwM, bwm = bandwidths.majority, bandwidths.minority
    _check_cond_lengths(bwM, flatM.p, "majority")
    _check_cond_lengths(bwm, flatm.p, "minority")
    if flatM.modifier.is_discrete:
        return _mldd_discrete(flatM, flatm, grid, bwM, bwm, kernel, ridge, max_missing_fraction)
    return _mldd_continuous(flatM, flatm, grid, bwM, bwm, kernel, ridge, max_missing_fraction)


def _mldd_continuous(flatM, flatm, grid, bwM, bwm, kernel, ridge, max_missing_fraction):
    # The minority fits at the majority's z values are computed in their own
    # batch, not as a slice of a wider one, so a bit-copied minority group
    # reproduces the majority's fits bit-for-bit and the null decomposition
    # is exactly zero.
    zM = flatM.z_subj
    zm = flatm.z_subj

    MM = modifier_weights(flatM, zM, bwM.b2, kernel)
    MmM = modifier_weights(flatm, zM, bwm.b2, kernel)
    Mmm = modifier_weights(flatm, zm, bwm.b2, kernel)
    betaM, okM, _ = batched_beta_curves(
        flatM, grid.points, MM, bwM.b1, kernel, ridge=ridge
    )
    bm_at_zM, okm_zM, _ = batched_beta_curves(
        flatm, grid.points, MmM, bwm.b1, kernel, ridge=ridge
    )
    bm_at_zm, okm_zm, _ = batched_beta_curves(
        flatm, grid.points, Mmm, bwm.b1, kernel, ridge=ridge
    )
    muM, mu_okM = _augmented_means(
        flatM, zM, bwM, kernel, grid, M_cache={bwM.b2: MM}
    )
    mum_at_zM, mu_okm_zM = _augmented_means(
        flatm, zM, bwm, kernel, grid, M_cache={bwm.b2: MmM}
    )
    mum_at_zm, mu_okm_zm = _augmented_means(
        flatm, zm, bwm, kernel, grid, M_cache={bwm.b2: Mmm}
    )

    D1 = np.einsum("mik,mik->mi", muM, betaM - bm_at_zM).mean(axis=1)
    D2 = np.einsum("mik,mik->mi", muM - mum_at_zM, bm_at_zM).mean(axis=1)
    D3 = (
        np.einsum("mik,mik->mi", mum_at_zM, bm_at_zM).mean(axis=1)
        - np.einsum("mik,mik->mi", mum_at_zm, bm_at_zm).mean(axis=1)
    )
    ok = (
        okM.all(axis=1)
        & okm_zM.all(axis=1)
        & okm_zm.all(axis=1)
        & mu_okM.all(axis=1)
        & mu_okm_zM.all(axis=1)
        & mu_okm_zm.all(axis=1)
    )
    return _finalize("mldd", grid, D1, D2, D3, ok, None, None, max_missing_fraction)


def _level_frequencies(z_subj: np.ndarray, levels: np.ndarray) -> np.ndarray:
    counts = (z_subj[:, None] == levels[None, :]).sum(axis=0)
    return counts / len(z_subj)


def _mldd_discrete(flatM, flatm, grid, bwM, bwm, kernel, ridge, max_missing_fraction):
    levels = np.array(
        sorted(set(flatM.modifier.levels) | set(flatm.modifier.levels)),
        dtype=np.float64,
    )
    present_M = np.isin(levels, flatM.z_subj)
    present_m = np.isin(levels, flatm.z_subj)
    # beta^m and mu^m are evaluated at every majority level, so the minority
    # group must populate each of them.
    for lev, pM, pm in zip(levels, present_M, present_m):
        if pM and not pm:
            raise EmptyLevelError(float(lev), "minority")
    used = present_M | present_m
    levels = levels[used]
    piM = _level_frequencies(flatM.z_subj, levels)
    pim = _level_frequencies(flatm.z_subj, levels)

    MM = modifier_weights(flatM, levels, None, kernel)
    Mm = modifier_weights(flatm, levels, None, kernel)
    betaM, okM, _ = batched_beta_curves(
        flatM, grid.points, MM, bwM.b1, kernel, ridge=ridge
    )
    betam, okm, _ = batched_beta_curves(
        flatm, grid.points, Mm, bwm.b1, kernel, ridge=ridge
    )
    muM, mu_okM = _augmented_means(flatM, levels, bwM, kernel, grid, M_cache={None: MM})
    mum, mu_okm = _augmented_means(flatm, levels, bwm, kernel, grid, M_cache={None: Mm})

    # Levels the majority never takes enter D1/D2 with weight zero; mask the
    # (possibly invalid) fits there so validity is not dragged down by them.
    wM = piM > 0
    wm = pim > 0
    D1 = np.einsum("l,mlk,mlk->m", piM[wM], muM[:, wM], (betaM - betam)[:, wM])
    D2 = np.einsum("l,mlk,mlk->m", piM[wM], (muM - mum)[:, wM], betam[:, wM])
    D3 = np.einsum("l,mlk,mlk->m", piM[wM], mum[:, wM], betam[:, wM]) - np.einsum(
        "l,mlk,mlk->m", pim[wm], mum[:, wm], betam[:, wm]
    )
    needed_M = wM  # majority fits only matter where piM > 0
    needed_m = wM | wm
    ok = (
        okM[:, needed_M].all(axis=1)
        & mu_okM[:, needed_M].all(axis=1)
        & okm[:, needed_m].all(axis=1)
        & mu_okm[:, needed_m].all(axis=1)
    )
    return _finalize("mldd", grid, D1, D2, D3, ok, None, None, max_missing_fraction)


def estimate_cmldd(
    majority: LongitudinalDataset | FlatGroup,
    minority: LongitudinalDataset | FlatGroup,
    grid: TimeGrid,
    bandwidths: Bandwidths,
    kernel: KernelSpec = EPANECHNIKOV,
    zM: float = 0.0,
    zm: float = 0.0,
    *,
    ridge: bool = False,
    max_missing_fraction: float = 0.2,
) -> DecompositionCurve:
    """The decomposition at fixed modifier values (zM, zm)."""
    flatM, flatm = _as_flat(majority), _as_flat(minority)
    _check_groups(flatM, flatm)
    bwM, bwm = bandwidths.majority, bandwidths.minority
    _check_cond_lengths(bwM, flatM.p, "majority")
    _check_cond_lengths(bwm, flatm.p, "minority")
    zM, zm = float(zM), float(zm)
    if flatM.modifier.is_discrete:
        for z, label in ((zM, "zM"), (zm, "zm")):
            if z not in flatM.modifier.levels and z not in flatm.modifier.levels:
                raise ValueError(f"{label}={z!r} is not a declared modifier level")
        if zM not in flatM.z_subj:
            raise EmptyLevelError(zM, "majority")
        for z in {zM, zm}:
            if z not in flatm.z_subj:
                raise EmptyLevelError(z, "minority")

    # one batch per evaluation point, as in the mldd path, so identical
    # inputs cancel exactly in the null cases
    zM_arr = np.array([zM])
    zm_arr = np.array([zm])
    MM = modifier_weights(flatM, zM_arr, bwM.b2, kernel)
    MmM = modifier_weights(flatm, zM_arr, bwm.b2, kernel)
    Mmm = modifier_weights(flatm, zm_arr, bwm.b2, kernel)
    betaM, okM, _ = batched_beta_curves(
        flatM, grid.points, MM, bwM.b1, kernel, ridge=ridge
    )
    betam_zM, okm_zM, _ = batched_beta_curves(
        flatm, grid.points, MmM, bwm.b1, kernel, ridge=ridge
    )
    betam_zm, okm_zm, _ = batched_beta_curves(
        flatm, grid.points, Mmm, bwm.b1, kernel, ridge=ridge
    )
    muM, mu_okM = _augmented_means(flatM, zM_arr, bwM, kernel, grid, M_cache={bwM.b2: MM})
    mum_zM, mu_okm_zM = _augmented_means(
        flatm, zM_arr, bwm, kernel, grid, M_cache={bwm.b2: MmM}
    )
    mum_zm, mu_okm_zm = _augmented_means(
        flatm, zm_arr, bwm, kernel, grid, M_cache={bwm.b2: Mmm}
    )

    bM = betaM[:, 0, :]
    bm_zM = betam_zM[:, 0, :]
    bm_zm = betam_zm[:, 0, :]
    a_M = muM[:, 0, :]
    a_m_zM = mum_zM[:, 0, :]
    a_m_zm = mum_zm[:, 0, :]

    D1 = np.einsum("mk,mk->m", a_M, bM - bm_zM)
    D2 = np.einsum("mk,mk->m", a_M - a_m_zM, bm_zM)
    D3 = np.einsum("mk,mk->m", a_m_zM, bm_zM) - np.einsum("mk,mk->m", a_m_zm, bm_zm)
    ok = (
        okM[:, 0]
        & okm_zM[:, 0]
        & okm_zm[:, 0]
        & mu_okM[:, 0]
        & mu_okm_zM[:, 0]
        & mu_okm_zm[:, 0]
    )
    return _finalize("cmldd", grid, D1, D2, D3, ok, zM, zm, max_missing_fraction)


def estimate_ldd(
    majority: LongitudinalDataset | FlatGroup,
    minority: LongitudinalDataset | FlatGroup,
    grid: TimeGrid,
    bandwidths: Bandwidths,
    kernel: KernelSpec = EPANECHNIKOV,
    *,
    ridge: bool = False,
    max_missing_fraction: float = 0.2,
) -> DecompositionCurve:
    """Time-only decomposition with the modifier as the last regressor.

    Covariate means are smoothed in time only; the modifier mean is the plain
    subject-level group average.  D2 prices the covariate gap and D3 the
    modifier gap, both at minority coefficients.
    """
    flatM, flatm = _as_flat(majority), _as_flat(minority)
    _check_groups(flatM, flatm)
    bwM, bwm = bandwidths.majority, bandwidths.minority
    _check_cond_lengths(bwM, flatM.p, "majority")
    _check_cond_lengths(bwm, flatm.p, "minority")
    p = flatM.p

    onesM = np.ones((flatM.n_subjects, 1))
    onesm = np.ones((flatm.n_subjects, 1))
    betaM, okM, _ = batched_beta_curves(
        flatM, grid.points, onesM, bwM.b1, kernel, include_modifier=True, ridge=ridge
    )
    betam, okm, _ = batched_beta_curves(
        flatm, grid.points, onesm, bwm.b1, kernel, include_modifier=True, ridge=ridge
    )
    bM = betaM[:, 0, :]
    bm = betam[:, 0, :]
    xbarM, xokM = _time_means(flatM, bwM, kernel, grid)
    xbarm, xokm = _time_means(flatm, bwm, kernel, grid)
    zbarM = float(np.mean(flatM.z_subj))
    zbarm = float(np.mean(flatm.z_subj))

    m = len(grid)
    a_M = np.empty((m, p + 2))
    a_M[:, 0] = 1.0
    a_M[:, 1 : p + 1] = xbarM
    a_M[:, p + 1] = zbarM

    D1 = np.einsum("mk,mk->m", a_M, bM - bm)
    D2 = np.einsum("mr,mr->m", xbarM - xbarm, bm[:, 1 : p + 1])
    D3 = (zbarM - zbarm) * bm[:, p + 1]
    ok = okM[:, 0] & okm[:, 0] & xokM & xokm
    return _finalize("ldd", grid, D1, D2, D3, ok, None, None, max_missing_fraction)


def estimate_decomposition(
    method: str,
    majority,
    minority,
    grid: TimeGrid,
    bandwidths: Bandwidths,
    kernel: KernelSpec = EPANECHNIKOV,
    *,
    zM: float | None = None,
    zm: float | None = None,
    ridge: bool = False,
    max_missing_fraction: float = 0.2,
) -> DecompositionCurve:
    """Dispatch by method name; cmldd requires zM and zm."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    kwargs = dict(ridge=ridge, max_missing_fraction=max_missing_fraction)
    if method == "ldd":
        return estimate_ldd(majority, minority, grid, bandwidths, kernel, **kwargs)
    if method == "mldd":
        return estimate_mldd(majority, minority, grid, bandwidths, kernel, **kwargs)
    if zM is None or zm is None:
        raise ValueError("cmldd requires both zM and zm")
    return estimate_cmldd(
        majority, minority, grid, bandwidths, kernel, zM=zM, zm=zm, **kwargs
    )
