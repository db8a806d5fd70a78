"""Generator determinism, closed-form truth, and scenario sanity."""

import numpy as np
import pytest

from longdisp.decomposition import TimeGrid
from longdisp.simulation import (
    SCENARIOS,
    Bernoulli,
    DGPConfig,
    GroupConfig,
    Surface,
    TruncatedNormal,
    generate,
    scenario,
    true_cmldd,
    true_decomposition,
)

GRID7 = TimeGrid(np.linspace(0.1, 0.9, 7))


def tiny_config(sigma=0.0, x_sd=0.0, seed=4):
    group = dict(
        n_subjects=5,
        modifier=TruncatedNormal(0.0, 1.0, -2.0, 2.0),
        beta0=Surface(1.0, 0.5, 0.3, 0.2),
        betas=(Surface(0.5, -0.3, 0.2, 0.1),),
        x_means=(Surface(0.2, 0.5, 0.4, 0.0),),
        x_sds=(x_sd,),
        sigma=sigma,
        obs_per_subject=(2, 4),
    )
    return DGPConfig(
        majority=GroupConfig(label="majority", **group),
        minority=GroupConfig(label="minority", **group),
        seed=seed,
    )


def test_noiseless_outcomes_follow_the_surfaces_exactly():
    config = tiny_config(sigma=0.0, x_sd=0.0)
    major, minor = generate(config)
    for ds, gc in ((major, config.majority), (minor, config.minority)):
        assert ds.group == gc.label
        for s in ds.subjects:
            expected = gc.beta0(s.times, s.modifier) + s.covariates[:, 0] * gc.betas[0](
                s.times, s.modifier
            )
            np.testing.assert_allclose(s.outcomes, expected, rtol=1e-12)
            np.testing.assert_allclose(
                s.covariates[:, 0], gc.x_means[0](s.times, s.modifier), rtol=1e-12
            )


def test_same_seed_reproduces_bitwise_different_seed_does_not():
    a_major, a_minor = generate(tiny_config(sigma=0.3, x_sd=0.5))
    b_major, b_minor = generate(tiny_config(sigma=0.3, x_sd=0.5))
    for a, b in ((a_major, b_major), (a_minor, b_minor)):
        assert [s.id for s in a.subjects] == [s.id for s in b.subjects]
        for sa, sb in zip(a.subjects, b.subjects):
            assert sa.modifier == sb.modifier
            np.testing.assert_array_equal(sa.times, sb.times)
            np.testing.assert_array_equal(sa.outcomes, sb.outcomes)
            np.testing.assert_array_equal(sa.covariates, sb.covariates)
    c_major, _ = generate(tiny_config(sigma=0.3, x_sd=0.5, seed=5))
    assert any(
        sa.outcomes.shape != sc.outcomes.shape or np.any(sa.outcomes != sc.outcomes)
        for sa, sc in zip(a_major.subjects, c_major.subjects)
    )


def test_subject_layout_respects_config():
    config = tiny_config(sigma=0.3, x_sd=0.5)
    major, _ = generate(config)
    kmin, kmax = config.majority.obs_per_subject
    t0, t1 = config.majority.time_range
    for s in major.subjects:
        assert kmin <= s.n_obs <= kmax
        assert np.all(np.diff(s.times) >= 0)
        assert s.times.min() >= t0 and s.times.max() <= t1
        assert -2.0 <= s.modifier <= 2.0


def test_bernoulli_prevalences_near_nominal():
    config = scenario("discrete", n_majority=400, n_minority=400, seed=9)
    major, minor = generate(config)
    for ds, prob in ((major, 0.77), (minor, 0.26)):
        share = float(np.mean(ds.subject_modifiers == 1.0))
        se = np.sqrt(prob * (1 - prob) / 400)
        assert abs(share - prob) < 4 * se
        assert ds.modifier.levels == (0.0, 1.0)


def test_truth_is_additive_without_being_constructed_so():
    td = true_decomposition(scenario("bilinear"), GRID7)
    np.testing.assert_allclose(td.D, td.D1 + td.D2 + td.D3, atol=1e-8)
    dd = true_decomposition(scenario("discrete"), GRID7)
    np.testing.assert_allclose(dd.D, dd.D1 + dd.D2 + dd.D3, atol=1e-12)


def test_swapping_groups_negates_overall_truth():
    config = scenario("bilinear")
    swapped = DGPConfig(
        majority=config.minority, minority=config.majority, seed=config.seed
    )
    td = true_decomposition(config, GRID7)
    ts = true_decomposition(swapped, GRID7)
    np.testing.assert_allclose(ts.D, -td.D, atol=1e-10)


def test_modifier_only_truth_has_closed_form():
    # no covariates and outcome mean t*z: D(t) = t * (E Z_M - E Z_m),
    # carried entirely by the third component
    def group(label, prob):
        return GroupConfig(
            label=label,
            n_subjects=4,
            modifier=Bernoulli(prob),
            beta0=Surface(0.0, 0.0, 0.0, 1.0),
            betas=(),
            x_means=(),
            x_sds=(),
            sigma=0.1,
        )

    config = DGPConfig(majority=group("majority", 0.77), minority=group("minority", 0.26))
    td = true_decomposition(config, GRID7)
    np.testing.assert_allclose(td.D, 0.51 * GRID7.points, rtol=1e-12)
    np.testing.assert_allclose(td.D3, td.D, rtol=1e-12)
    np.testing.assert_allclose(td.D1, 0.0, atol=1e-15)
    np.testing.assert_allclose(td.D2, 0.0, atol=1e-15)


def test_identical_group_configs_give_zero_truth():
    td = true_decomposition(scenario("null"), GRID7)
    np.testing.assert_array_equal(td.D, np.zeros(7))
    np.testing.assert_array_equal(td.D1, np.zeros(7))
    np.testing.assert_array_equal(td.D2, np.zeros(7))
    np.testing.assert_array_equal(td.D3, np.zeros(7))


def test_true_cmldd_matches_hand_formula():
    config = scenario("bilinear")
    maj, minr = config.majority, config.minority
    tc = true_cmldd(config, GRID7, zM=0.5, zm=-0.5)
    for gi, t in enumerate(GRID7.points):
        D1 = maj.mean_vector(t, 0.5) @ (maj.beta_vector(t, 0.5) - minr.beta_vector(t, 0.5))
        assert tc.D1[gi] == pytest.approx(float(D1), rel=1e-12)
    same = true_cmldd(config, GRID7, zM=0.3, zm=0.3)
    np.testing.assert_array_equal(same.D3, np.zeros(7))
    null = true_cmldd(scenario("null"), GRID7, zM=0.3, zm=0.3)
    np.testing.assert_array_equal(null.D, np.zeros(7))


def test_scenarios_generate_valid_pairs():
    for name in SCENARIOS:
        config = scenario(name, n_majority=6, n_minority=5, seed=1)
        major, minor = generate(config)
        assert major.n_subjects == 6 and minor.n_subjects == 5
        assert major.group == "majority" and minor.group == "minority"
        assert major.modifier.is_discrete == (name == "discrete")
    with pytest.raises(ValueError, match="unknown scenario"):
        scenario("oaxaca")


def test_config_validation():
    law = TruncatedNormal(0.0, 1.0, -2.0, 2.0)
    ok = dict(
        label="g", n_subjects=4, modifier=law, beta0=Surface(1.0),
        betas=(Surface(0.5),), x_means=(Surface(0.0),), x_sds=(0.5,), sigma=0.5,
    )
    with pytest.raises(ValueError, match="equal length"):
        GroupConfig(**{**ok, "x_sds": (0.5, 0.4)})
    with pytest.raises(ValueError, match="nonnegative"):
        GroupConfig(**{**ok, "sigma": -1.0})
    with pytest.raises(ValueError, match="obs_per_subject"):
        GroupConfig(**{**ok, "obs_per_subject": (0, 3)})
    with pytest.raises(ValueError, match="at least 2"):
        GroupConfig(**{**ok, "n_subjects": 1})
    with pytest.raises(ValueError, match="time_range"):
        GroupConfig(**{**ok, "time_range": (1.0, 1.0)})
    g = GroupConfig(**ok)
    g2 = GroupConfig(**{**ok, "betas": (), "x_means": (), "x_sds": ()})
    with pytest.raises(ValueError, match="covariate count"):
        DGPConfig(majority=g, minority=g2)
    disc = GroupConfig(**{**ok, "modifier": Bernoulli(0.5)})
    with pytest.raises(ValueError, match="modifier kind"):
        DGPConfig(majority=g, minority=disc)
    with pytest.raises(ValueError, match="sd"):
        TruncatedNormal(0.0, 0.0, -1.0, 1.0)
    with pytest.raises(ValueError, match="upper"):
        TruncatedNormal(0.0, 1.0, 1.0, -1.0)
    with pytest.raises(ValueError, match="prob"):
        Bernoulli(1.0)
