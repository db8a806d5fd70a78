"""Shared builders and independent oracles for the test suite.

The oracles deliberately avoid the library's solver path: weighted least
squares goes through a square-root-scaled lstsq, and the leave-one-subject-out
score is recomputed by physically deleting the held-out subject's rows.
"""

from __future__ import annotations

import numpy as np
import pytest

from longdisp.data import LongitudinalDataset, ModifierSpec, Subject
from longdisp.estimators import RCOND_FLOOR, weight_floor
from longdisp.kernels import EPANECHNIKOV


def make_subject(sid, z, times, outcomes, covariates=None) -> Subject:
    times = np.asarray(times, dtype=np.float64)
    if covariates is None:
        covariates = np.empty((len(times), 0))
    return Subject(
        id=str(sid),
        modifier=float(z),
        times=times,
        outcomes=np.asarray(outcomes, dtype=np.float64),
        covariates=np.asarray(covariates, dtype=np.float64),
    )


def make_dataset(rows, group="g", kind="continuous", levels=()) -> LongitudinalDataset:
    """rows: iterable of (id, z, times, outcomes[, covariates])."""
    subjects = tuple(make_subject(*row) for row in rows)
    return LongitudinalDataset(
        subjects=subjects, group=group, modifier=ModifierSpec(kind, levels)
    )


def random_dataset(
    rng, n_subjects, p, group="g", discrete=False, n_obs=(2, 5), sigma=0.5
) -> LongitudinalDataset:
    """Smooth random instance: outcomes depend mildly on t, z and covariates."""
    rows = []
    for i in range(n_subjects):
        k = int(rng.integers(n_obs[0], n_obs[1] + 1))
        z = float(rng.integers(0, 2)) if discrete else float(rng.normal(0.0, 1.0))
        times = np.sort(rng.uniform(0.0, 1.0, size=k))
        X = rng.normal(0.0, 1.0, size=(k, p))
        y = 1.0 + 0.5 * times + 0.3 * z + X.sum(axis=1) * 0.4 + sigma * rng.normal(size=k)
        rows.append((f"s{i:03d}", z, times, y, X))
    return make_dataset(rows, group=group, kind="discrete" if discrete else "continuous")


def dataset_weights(dataset, t, z, b1, b2=None, kernel=EPANECHNIKOV):
    """Product kernel weights over the flattened observations."""
    w = kernel.evaluate((dataset.obs_times - t) / b1)
    z_obs = dataset.subject_modifiers[dataset.obs_subject]
    if dataset.modifier.is_discrete:
        return w * (z_obs == z)
    return w * kernel.evaluate((z_obs - z) / b2)


def oracle_wls(X, y, w):
    """Weighted least squares via scaled lstsq; None when numerically singular."""
    X = np.asarray(X, dtype=np.float64)
    active = w > 0
    Xa, ya, wa = X[active], np.asarray(y)[active], w[active]
    gram = (Xa * wa[:, None]).T @ Xa
    eigs = np.linalg.eigvalsh(gram)
    if eigs[-1] <= 0 or max(eigs[0], 0.0) / eigs[-1] < RCOND_FLOOR:
        return None
    sw = np.sqrt(wa)
    beta, *_ = np.linalg.lstsq(Xa * sw[:, None], ya * sw, rcond=None)
    return beta


def oracle_beta(dataset, t, z, b1, b2=None, kernel=EPANECHNIKOV):
    """Brute-force local coefficient fit on the (1, X) design."""
    w = dataset_weights(dataset, t, z, b1, b2, kernel)
    X = np.column_stack([np.ones(dataset.total_obs), dataset.obs_covariates])
    return oracle_wls(X, dataset.obs_outcomes, w)


def oracle_beta_time(dataset, t, b1, kernel=EPANECHNIKOV):
    """Time-only fit with the modifier appended as the last regressor."""
    w = kernel.evaluate((dataset.obs_times - t) / b1)
    X = np.column_stack(
        [
            np.ones(dataset.total_obs),
            dataset.obs_covariates,
            dataset.subject_modifiers[dataset.obs_subject],
        ]
    )
    return oracle_wls(X, dataset.obs_outcomes, w)


def oracle_cond_mean(dataset, r, t, z, b_r1, b_r2=None, kernel=EPANECHNIKOV):
    """Weighted average of covariate r; None without positive mass."""
    w = dataset_weights(dataset, t, z, b_r1, b_r2, kernel)
    if not w.sum() > 0:
        return None
    x = dataset.obs_covariates[:, r - 1]
    return float(np.sum(w * x) / np.sum(w))


def oracle_loso_table(dataset, pairs, target="beta", kernel=EPANECHNIKOV):
    """From-scratch leave-one-subject-out score per candidate pair.

    Returns {(b1, b2): (score, n_terms, n_skipped)} with the held-out subject
    physically removed, re-fitting at each of its observations.
    """
    n = dataset.n_subjects
    p = dataset.p
    out = {}
    for b1, b2 in pairs:
        total, n_terms, n_skipped = 0.0, 0, 0
        for i in range(n):
            held = dataset.subjects[i]
            keep = [s for j, s in enumerate(dataset.subjects) if j != i]
            rest_times = np.concatenate([s.times for s in keep])
            rest_y = np.concatenate([s.outcomes for s in keep])
            rest_X = np.vstack([s.covariates for s in keep])
            rest_z = np.concatenate([np.full(s.n_obs, s.modifier) for s in keep])
            design = np.column_stack([np.ones(len(rest_times)), rest_X])
            floor = weight_floor(p + 1, kernel, 1 if dataset.modifier.is_discrete else 2)
            for j in range(held.n_obs):
                t = held.times[j]
                wt = kernel.evaluate((rest_times - t) / b1)
                if dataset.modifier.is_discrete:
                    w = wt * (rest_z == held.modifier)
                else:
                    w = wt * kernel.evaluate((rest_z - held.modifier) / b2)
                if target == "beta":
                    if w.sum() < floor:
                        n_skipped += 1
                        continue
                    beta = oracle_wls(design, rest_y, w)
                    if beta is None:
                        n_skipped += 1
                        continue
                    pred = float(np.concatenate([[1.0], held.covariates[j]]) @ beta)
                    err = held.outcomes[j] - pred
                else:  # cond_mean on covariate 1
                    if not w.sum() > 0:
                        n_skipped += 1
                        continue
                    pred = float(np.sum(w * rest_X[:, 0]) / w.sum())
                    err = held.covariates[j, 0] - pred
                total += err**2
                n_terms += 1
        out[(b1, b2)] = (total, n_terms, n_skipped)
    return out


def oracle_time_mean(dataset, r, t, b1, kernel=EPANECHNIKOV):
    """Time-only weighted average of covariate r; None without positive mass."""
    w = kernel.evaluate((dataset.obs_times - t) / b1)
    if not w.sum() > 0:
        return None
    return float(np.sum(w * dataset.obs_covariates[:, r - 1]) / w.sum())


def _oracle_aug_mean(dataset, t, z, bw, kernel):
    """Conditional-mean vector (1, mu_1..mu_p); asserts every mean exists."""
    mu = np.ones(dataset.p + 1)
    for r in range(1, dataset.p + 1):
        b1, b2 = bw.cond_pair(r)
        m = oracle_cond_mean(dataset, r, t, z, b1, b2, kernel)
        assert m is not None, f"oracle mean undefined at t={t}, z={z}, r={r}"
        mu[r] = m
    return mu


def oracle_mldd(major, minor, t, bandwidths, kernel=EPANECHNIKOV):
    """Brute-force mldd components at one time; assumes every fit succeeds."""
    bwM, bwm = bandwidths.majority, bandwidths.minority

    def beta(ds, bw, z):
        b = oracle_beta(ds, t, z, bw.b1, bw.b2, kernel)
        assert b is not None, f"oracle fit failed at t={t}, z={z}"
        return b

    if major.modifier.is_discrete:
        zM_vals = major.subject_modifiers
        zm_vals = minor.subject_modifiers
        levels = sorted(set(zM_vals) | set(zm_vals))
        D1 = D2 = D3 = 0.0
        for lev in levels:
            piM = float(np.mean(zM_vals == lev))
            pim = float(np.mean(zm_vals == lev))
            bm = beta(minor, bwm, lev)
            mum = _oracle_aug_mean(minor, t, lev, bwm, kernel)
            if piM > 0:
                bM = beta(major, bwM, lev)
                muM = _oracle_aug_mean(major, t, lev, bwM, kernel)
                D1 += piM * float(muM @ (bM - bm))
                D2 += piM * float((muM - mum) @ bm)
                D3 += piM * float(mum @ bm)
            D3 -= pim * float(mum @ bm)
        return D1, D2, D3

    nM = major.n_subjects
    D1 = D2 = accM = 0.0
    for z in major.subject_modifiers:
        bM = beta(major, bwM, z)
        bm = beta(minor, bwm, z)
        muM = _oracle_aug_mean(major, t, z, bwM, kernel)
        mum = _oracle_aug_mean(minor, t, z, bwm, kernel)
        D1 += float(muM @ (bM - bm))
        D2 += float((muM - mum) @ bm)
        accM += float(mum @ bm)
    accm = 0.0
    for z in minor.subject_modifiers:
        bm = beta(minor, bwm, z)
        mum = _oracle_aug_mean(minor, t, z, bwm, kernel)
        accm += float(mum @ bm)
    return D1 / nM, D2 / nM, accM / nM - accm / minor.n_subjects


def oracle_cmldd(major, minor, t, bandwidths, zM, zm, kernel=EPANECHNIKOV):
    """Brute-force cmldd components at one time and fixed modifier values."""
    bwM, bwm = bandwidths.majority, bandwidths.minority
    bM = oracle_beta(major, t, zM, bwM.b1, bwM.b2, kernel)
    bm_zM = oracle_beta(minor, t, zM, bwm.b1, bwm.b2, kernel)
    bm_zm = oracle_beta(minor, t, zm, bwm.b1, bwm.b2, kernel)
    assert bM is not None and bm_zM is not None and bm_zm is not None
    muM = _oracle_aug_mean(major, t, zM, bwM, kernel)
    mum_zM = _oracle_aug_mean(minor, t, zM, bwm, kernel)
    mum_zm = _oracle_aug_mean(minor, t, zm, bwm, kernel)
    D1 = float(muM @ (bM - bm_zM))
    D2 = float((muM - mum_zM) @ bm_zM)
    D3 = float(mum_zM @ bm_zM) - float(mum_zm @ bm_zm)
    return D1, D2, D3


def oracle_ldd(major, minor, t, bandwidths, kernel=EPANECHNIKOV):
    """Brute-force ldd components at one time."""
    bwM, bwm = bandwidths.majority, bandwidths.minority
    p = major.p
    bM = oracle_beta_time(major, t, bwM.b1, kernel)
    bm = oracle_beta_time(minor, t, bwm.b1, kernel)
    assert bM is not None and bm is not None
    xbarM = np.array(
        [oracle_time_mean(major, r, t, bwM.cond_pair(r)[0], kernel) for r in range(1, p + 1)]
    )
    xbarm = np.array(
        [oracle_time_mean(minor, r, t, bwm.cond_pair(r)[0], kernel) for r in range(1, p + 1)]
    )
    zbarM = float(np.mean(major.subject_modifiers))
    zbarm = float(np.mean(minor.subject_modifiers))
    a_M = np.concatenate([[1.0], xbarM, [zbarM]])
    D1 = float(a_M @ (bM - bm))
    D2 = float((xbarM - xbarm) @ bm[1 : p + 1]) if p else 0.0
    D3 = (zbarM - zbarm) * float(bm[p + 1])
    return D1, D2, D3


def oracle_decomposition(method, major, minor, t, bandwidths, kernel=EPANECHNIKOV, zM=None, zm=None):
    if method == "ldd":
        return oracle_ldd(major, minor, t, bandwidths, kernel)
    if method == "mldd":
        return oracle_mldd(major, minor, t, bandwidths, kernel)
    return oracle_cmldd(major, minor, t, bandwidths, zM, zm, kernel)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
