"""Local-constant kernel estimation of varying coefficients and conditional means.

Every fit minimizes a kernel-weighted least-squares objective over a design
with a leading intercept column.  Three smoothing modes exist:

* continuous modifier: product kernel K((t_ij-t)/b1) K((Z_i-z)/b2);
* discrete modifier: time kernel times the exact level indicator I(Z_i = z);
* time-only: time kernel alone, with the modifier appended to the design as
  an ordinary regressor column.

Pointwise fits solve the normal equations through an eigendecomposition of
the weighted Gram matrix so rank deficiency is detected reliably; the
reciprocal condition number travels with every estimate.  The batched
entry points evaluate whole curves by compressing observations into
per-subject moment blocks first, which keeps the cost per grid point at
O(N p^2) + O(n q p^2) instead of O(N q p^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import LongitudinalDataset, ModifierSpec
from .errors import EmptyLevelError, EmptyWindowError, SingularFitError
from .kernels import EPANECHNIKOV, KernelSpec

# Reciprocal condition below this is treated as rank deficient.
RCOND_FLOOR = 1e-12
# Ridge jitter, as a fraction of mean diagonal mass, applied only on request.
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class CoefficientEstimate:
    """Fitted coefficient vector at one (t, z) point.

    beta starts with the intercept.  condition_diagnostic is the reciprocal
    condition number of the weighted Gram matrix before any ridge fallback;
    ridged records whether the fallback was used.
    """

    t: float
    z: float | None
    beta: np.ndarray
    effective_weight: float
    condition_diagnostic: float
    ridged: bool = False


@dataclass(frozen=True)
class CondMeanEstimate:
    """Local-constant conditional mean of covariate r at one (t, z) point."""

    t: float
    z: float | None
    r: int
    value: float
    effective_weight: float


def weight_floor(design_width: int, kernel: KernelSpec, kernel_factors: int) -> float:
    """Default minimum effective weight for a coefficient fit.

    Equals the mass of design_width + 1 observations sitting at full kernel
    height; windows below it are treated as empty rather than risk a
    meaningless near-singular solve.
    """
    return (design_width + 1) * kernel.height**kernel_factors


def _solve_point(Gram, rhs, ridge: bool, t=None, z=None):
    """Solve one weighted normal-equation system, rank-revealing.

    Returns (beta, rcond, ridged).  Raises SingularFitError when the
    reciprocal condition falls below RCOND_FLOOR and ridge is off.
    """
    lam, vec = np.linalg.eigh(Gram)
    lmax = float(lam[-1])
    if not lmax > 0.0:
        raise SingularFitError(t, z, 0.0)
    rcond = max(float(lam[0]), 0.0) / lmax
    ridged = False
    if rcond < RCOND_FLOOR:
        if not ridge:
            raise SingularFitError(t, z, rcond)
        k = Gram.shape[0]
        jitter = RIDGE_SCALE * float(np.trace(Gram)) / k
        lam, vec = np.linalg.eigh(Gram + jitter * np.eye(k))
        ridged = True
    beta = vec @ ((vec.T @ rhs) / lam)
    if not np.all(np.isfinite(beta)):
        raise SingularFitError(t, z, rcond)
    return beta, rcond, ridged


def _check_bandwidth(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


def _obs_modifiers(dataset: LongitudinalDataset) -> np.ndarray:
    return dataset.subject_modifiers[dataset.obs_subject]


def _design_from_dataset(dataset: LongitudinalDataset, include_modifier: bool) -> np.ndarray:
    ones = np.ones((dataset.total_obs, 1))
    cols = [ones, dataset.obs_covariates]
    if include_modifier:
        cols.append(_obs_modifiers(dataset)[:, None])
    return np.hstack(cols)


def _fit_pointwise(X, y, w, floor, t, z, ridge) -> CoefficientEstimate:
    """Weighted least squares on the rows with nonzero weight.

    Compressing to the active rows first makes zero-weight observations
    exactly invisible: appending them cannot perturb the sums bit-for-bit.
    """
    act = np.flatnonzero(w)
    if act.size == 0:
        raise EmptyWindowError(t, z)
    wa = w[act]
    Xa = X[act]
    sw = float(np.einsum("i->", wa))
    if sw < floor:
        raise EmptyWindowError(
            t,
            z,
            f"effective weight {sw:.6g} below floor {floor:.6g} at (t={t}, z={z})",
        )
    Gram = np.einsum("i,ia,ib->ab", wa, Xa, Xa)
    rhs = np.einsum("i,ia,i->a", wa, Xa, y[act])
    beta, rcond, ridged = _solve_point(Gram, rhs, ridge, t, z)
    return CoefficientEstimate(
        t=float(t),
        z=None if z is None else float(z),
        beta=beta,
        effective_weight=sw,
        condition_diagnostic=rcond,
        ridged=ridged,
    )


def fit_beta_continuous(
    dataset: LongitudinalDataset,
    t: float,
    z: float,
    b1: float,
    b2: float,
    kernel: KernelSpec = EPANECHNIKOV,
    *,
    ridge: bool = False,
    min_effective_weight: float | None = None,
) -> CoefficientEstimate:
    """Coefficients beta(t, z) under the product kernel in time and modifier."""
    if dataset.modifier.is_discrete:
        raise ValueError("fit_beta_continuous requires a continuous modifier")
    _check_bandwidth("b1", b1)
    _check_bandwidth("b2", b2)
    w = kernel.evaluate((dataset.obs_times - t) / b1) * kernel.evaluate(
        (_obs_modifiers(dataset) - z) / b2
    )
    X = _design_from_dataset(dataset, include_modifier=False)
    floor = (
        weight_floor(X.shape[1], kernel, 2)
        if min_effective_weight is None
        else min_effective_weight
    )
    return _fit_pointwise(X, dataset.obs_outcomes, w, floor, t, z, ridge)


def fit_beta_discrete(
    dataset: LongitudinalDataset,
    t: float,
    z: float,
    b1: float,
    kernel: KernelSpec = EPANECHNIKOV,
    *,
    ridge: bool = False,
    min_effective_weight: float | None = None,
) -> CoefficientEstimate:
    """Coefficients beta(t, z) at a declared level: only level-z subjects contribute."""
    if not dataset.modifier.is_discrete:
        raise ValueError("fit_beta_discrete requires a discrete modifier")
    if z not in dataset.modifier.levels:
        raise ValueError(f"{z!r} is not a declared modifier level {dataset.modifier.levels}")
    _check_bandwidth("b1", b1)
    at_level = _obs_modifiers(dataset) == z
    if not at_level.any():
        raise EmptyLevelError(z, dataset.group)
    w = kernel.evaluate((dataset.obs_times - t) / b1) * at_level
    X = _design_from_dataset(dataset, include_modifier=False)
    floor = (
        weight_floor(X.shape[1], kernel, 1)
        if min_effective_weight is None
        else min_effective_weight
    )
    return _fit_pointwise(X, dataset.obs_outcomes, w, floor, t, z, ridge)


def fit_intercept_only_time(
    dataset: LongitudinalDataset,
    t: float,
    b1: float,
    kernel: KernelSpec = EPANECHNIKOV,
    *,
    ridge: bool = False,
    min_effective_weight: float | None = None,
) -> CoefficientEstimate:
    """Time-only coefficient fit with the modifier as the last design column.

    All subjects contribute regardless of modifier value; the returned beta
    has length p + 2 (intercept, covariates, modifier).
    """
    _check_bandwidth("b1", b1)
    w = kernel.evaluate((dataset.obs_times - t) / b1)
    X = _design_from_dataset(dataset, include_modifier=True)
    floor = (
        weight_floor(X.shape[1], kernel, 1)
        if min_effective_weight is None
        else min_effective_weight
    )
    return _fit_pointwise(X, dataset.obs_outcomes, w, floor, t, None, ridge)


def _weighted_mean(x, w, t, z, r) -> CondMeanEstimate:
    act = np.flatnonzero(w)
    if act.size == 0:
        raise EmptyWindowError(t, z)
    wa = w[act]
    sw = float(np.einsum("i->", wa))
    # A mean needs only positive mass; the coefficient-fit floor does not apply.
    if not sw > 0.0:
        raise EmptyWindowError(t, z)
    value = float(np.einsum("i,i->", wa, x[act]) / sw)
    return CondMeanEstimate(
        t=float(t),
        z=None if z is None else float(z),
        r=r,
        value=value,
        effective_weight=sw,
    )


def fit_cond_mean(
    dataset: LongitudinalDataset,
    r: int,
    t: float,
    z: float,
    b_r1: float,
    b_r2: float | None = None,
    kernel: KernelSpec = EPANECHNIKOV,
) -> CondMeanEstimate:
    """Local-constant estimate of E{X_r(t) | Z = z}; r is 1-based (X_1..X_p).

    Continuous modifiers need b_r2; discrete ones use the exact level
    indicator and b_r2 must be omitted.
    """
    if not 1 <= r <= dataset.p:
        raise ValueError(f"covariate index r={r} outside 1..{dataset.p}")
    _check_bandwidth("b_r1", b_r1)
    x = dataset.obs_covariates[:, r - 1]
    wt = kernel.evaluate((dataset.obs_times - t) / b_r1)
    if dataset.modifier.is_discrete:
        if b_r2 is not None:
            raise ValueError("b_r2 has no meaning for a discrete modifier")
        if z not in dataset.modifier.levels:
            raise ValueError(
                f"{z!r} is not a declared modifier level {dataset.modifier.levels}"
            )
        at_level = _obs_modifiers(dataset) == z
        if not at_level.any():
            raise EmptyLevelError(z, dataset.group)
        w = wt * at_level
    else:
        if b_r2 is None:
            raise ValueError("b_r2 is required for a continuous modifier")
        _check_bandwidth("b_r2", b_r2)
        w = wt * kernel.evaluate((_obs_modifiers(dataset) - z) / b_r2)
    return _weighted_mean(x, w, t, z, r)


def fit_time_mean(
    dataset: LongitudinalDataset,
    r: int,
    t: float,
    b_r1: float,
    kernel: KernelSpec = EPANECHNIKOV,
) -> CondMeanEstimate:
    """Kernel-in-time local-constant mean of X_r(t), marginal over the modifier."""
    if not 1 <= r <= dataset.p:
        raise ValueError(f"covariate index r={r} outside 1..{dataset.p}")
    _check_bandwidth("b_r1", b_r1)
    w = kernel.evaluate((dataset.obs_times - t) / b_r1)
    return _weighted_mean(dataset.obs_covariates[:, r - 1], w, t, None, r)


# ---------------------------------------------------------------------------
# Batched evaluation layer.
#
# FlatGroup is the array layout the curve estimators consume: observation
# arrays in subject-major order plus per-subject bookkeeping.  It resamples
# in O(N), which is what makes subject-level bootstrap loops affordable.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlatGroup:
    times: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray  # (N, p)
    subj: np.ndarray  # subject index per observation, nondecreasing
    counts: np.ndarray  # observations per subject
    starts: np.ndarray  # first observation row per subject
    z_subj: np.ndarray  # modifier per subject
    modifier: ModifierSpec

    @classmethod
    def from_dataset(cls, dataset: LongitudinalDataset) -> "FlatGroup":
        counts = np.array([s.n_obs for s in dataset.subjects])
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        return cls(
            times=dataset.obs_times,
            outcomes=dataset.obs_outcomes,
            covariates=dataset.obs_covariates,
            subj=dataset.obs_subject,
            counts=counts,
            starts=starts,
            z_subj=dataset.subject_modifiers,
            modifier=dataset.modifier,
        )

    @property
    def n_subjects(self) -> int:
        return len(self.counts)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def design(self, include_modifier: bool = False) -> np.ndarray:
        cols = [np.ones((len(self.times), 1)), self.covariates]
        if include_modifier:
            cols.append(self.z_subj[self.subj][:, None])
        return np.hstack(cols)

    def resample(self, subject_idx: np.ndarray) -> "FlatGroup":
        """New FlatGroup made of the given subjects, repeats allowed."""
        counts = self.counts[subject_idx]
        rows = np.concatenate(
            [np.arange(self.starts[i], self.starts[i] + self.counts[i]) for i in subject_idx]
        )
        return FlatGroup(
            times=self.times[rows],
            outcomes=self.outcomes[rows],
            covariates=self.covariates[rows],
            subj=np.repeat(np.arange(len(subject_idx)), counts),
            counts=counts,
            starts=np.concatenate(([0], np.cumsum(counts)[:-1])),
            z_subj=self.z_subj[subject_idx],
            modifier=self.modifier,
        )


def modifier_weights(
    flat: FlatGroup, z_eval: np.ndarray, b2: float | None, kernel: KernelSpec
) -> np.ndarray:
    """Per-subject weight for each evaluation point: kernel column or indicator."""
    z_eval = np.asarray(z_eval, dtype=np.float64)
    if flat.modifier.is_discrete:
        return (flat.z_subj[:, None] == z_eval[None, :]).astype(np.float64)
    if b2 is None:
        raise ValueError("b2 is required for a continuous modifier")
    return kernel.evaluate((flat.z_subj[:, None] - z_eval[None, :]) / b2)


def _solve_stack(Gram, rhs, ridge):
    """Batched normal-equation solve with 1-norm reciprocal-condition screening.

    Falls back to the rank-revealing pointwise solver when the batched
    inverse fails outright or individual systems screen as deficient.
    """
    try:
        Ginv = np.linalg.inv(Gram)
    except np.linalg.LinAlgError:
        return _solve_stack_loop(Gram, rhs, ridge)
    beta = np.einsum("qab,qb->qa", Ginv, rhs)
    norm = np.abs(Gram).sum(axis=1).max(axis=1)
    inorm = np.abs(Ginv).sum(axis=1).max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rcond = 1.0 / (norm * inorm)
    ok = np.isfinite(beta).all(axis=1) & np.isfinite(rcond) & (rcond >= RCOND_FLOOR)
    ridged = np.zeros(len(ok), dtype=bool)
    bad = np.flatnonzero(~ok)
    if bad.size and ridge:
        for j in bad:
            try:
                beta[j], rcond[j], ridged[j] = _solve_point(Gram[j], rhs[j], ridge=True)
            except SingularFitError:
                continue
            ok[j] = True
    return beta, rcond, ridged, ok


def _solve_stack_loop(Gram, rhs, ridge):
    v, k = Gram.shape[:2]
    beta = np.full((v, k), np.nan)
    rcond = np.full(v, np.nan)
    ridged = np.zeros(v, dtype=bool)
    ok = np.zeros(v, dtype=bool)
    for j in range(v):
        try:
            beta[j], rcond[j], ridged[j] = _solve_point(Gram[j], rhs[j], ridge)
        except SingularFitError as err:
            if err.rcond is not None:
                rcond[j] = err.rcond
            continue
        ok[j] = True
    return beta, rcond, ridged, ok


def _subject_moments(X, y, times, subj, n_subjects, t, b1, kernel):
    """Per-subject weighted moment blocks at grid time t, or None outside support."""
    wt = kernel.evaluate((times - t) / b1)
    act = np.flatnonzero(wt)
    if act.size == 0:
        return None
    ws = wt[act]
    Xs = X[act]
    ss = subj[act]
    k = X.shape[1]
    S = np.bincount(ss, weights=ws, minlength=n_subjects)
    C = np.empty((n_subjects, k))
    G = np.empty((n_subjects, k, k))
    wy = ws * y[act]
    for a in range(k):
        wxa = ws * Xs[:, a]
        C[:, a] = np.bincount(ss, weights=Xs[:, a] * wy, minlength=n_subjects)
        for b in range(a, k):
            gab = np.bincount(ss, weights=wxa * Xs[:, b], minlength=n_subjects)
            G[:, a, b] = gab
            if b != a:
                G[:, b, a] = gab
    return S, C, G


def batched_beta_curves(
    flat: FlatGroup,
    grid: np.ndarray,
    M: np.ndarray,
    b1: float,
    kernel: KernelSpec,
    *,
    include_modifier: bool = False,
    ridge: bool = False,
    min_effective_weight: float | None = None,
):
    """Coefficient surfaces over (grid time, evaluation point).

    M has one column of per-subject modifier weights per evaluation point.
    Returns (beta, valid, ridged) with shapes (m, q, k), (m, q), (m, q).
    """
    X = flat.design(include_modifier)
    y = flat.outcomes
    k = X.shape[1]
    factors = 1 if (flat.modifier.is_discrete or include_modifier) else 2
    floor = (
        weight_floor(k, kernel, factors)
        if min_effective_weight is None
        else min_effective_weight
    )
    m, q = len(grid), M.shape[1]
    beta = np.full((m, q, k), np.nan)
    valid = np.zeros((m, q), dtype=bool)
    ridged = np.zeros((m, q), dtype=bool)
    for gi, t in enumerate(grid):
        moments = _subject_moments(X, y, flat.times, flat.subj, flat.n_subjects, t, b1, kernel)
        if moments is None:
            continue
        S, C, G = moments
        sw = np.einsum("nq,n->q", M, S)
        enough = sw >= floor
        if not enough.any():
            continue
        idx = np.flatnonzero(enough)
        Gram = np.einsum("nq,nab->qab", M[:, idx], G)
        rhs = np.einsum("nq,na->qa", M[:, idx], C)
        sol, _, rj, fit_ok = _solve_stack(Gram, rhs, ridge)
        beta[gi, idx] = sol
        ridged[gi, idx] = rj
        valid[gi, idx] = fit_ok
    return beta, valid, ridged


def batched_mean_curves(
    flat: FlatGroup,
    r: int,
    grid: np.ndarray,
    M: np.ndarray,
    b_r1: float,
    kernel: KernelSpec,
):
    """Conditional-mean curves of covariate r (1-based) over (grid, evaluation point).

    Returns (values, valid) with shapes (m, q), (m, q); validity only needs
    positive weight mass.
    """
    x = flat.covariates[:, r - 1]
    m, q = len(grid), M.shape[1]
    values = np.full((m, q), np.nan)
    valid = np.zeros((m, q), dtype=bool)
    for gi, t in enumerate(grid):
        wt = kernel.evaluate((flat.times - t) / b_r1)
        act = np.flatnonzero(wt)
        if act.size == 0:
            continue
        ws = wt[act]
        ss = flat.subj[act]
        S = np.bincount(ss, weights=ws, minlength=flat.n_subjects)
        T = np.bincount(ss, weights=ws * x[act], minlength=flat.n_subjects)
        den = np.einsum("nq,n->q", M, S)
        num = np.einsum("nq,n->q", M, T)
        good = den > 0.0
        values[gi, good] = num[good] / den[good]
        valid[gi] = good
    return values, valid
