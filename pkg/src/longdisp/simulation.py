"""Synthetic longitudinal data with fully known ground truth.

The generator instantiates the varying-coefficient model Y(t) = X(t)'beta(t,Z)
+ sigma * eps with bilinear coefficient surfaces, so every expectation the
decompositions estimate has a closed form: expectations over a continuous
modifier reduce to one-dimensional integrals evaluated by adaptive
quadrature, and over a discrete modifier to exhaustive level sums.
true_decomposition computes D independently of D1 + D2 + D3, which makes the
additivity of the truth a real consistency check rather than a tautology.

Draws use a counter-based generator with one substream per group; truncated
normals are drawn by inverse-CDF so the stream stays one-draw-per-value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .data import LongitudinalDataset, ModifierSpec, Subject
from .decomposition import DecompositionCurve, TimeGrid
from .errors import EstimationError

_QUAD_TOL = 1e-10


@dataclass(frozen=True)
class Surface:
    """Bilinear surface a + bt*t + cz*z + dtz*t*z.

    Covers the whole closed-form family used here: constant, linear in t,
    linear in z, and the t*z interaction.
    """

    a: float = 0.0
    bt: float = 0.0
    cz: float = 0.0
    dtz: float = 0.0

    def __call__(self, t, z):
        return self.a + self.bt * t + self.cz * z + self.dtz * t * z

    @property
    def depends_on_z(self) -> bool:
        return self.cz != 0.0 or self.dtz != 0.0


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal(mean, sd) truncated to [lower, upper]."""

    mean: float
    sd: float
    lower: float
    upper: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be positive")
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")
        lo = norm.cdf((self.lower - self.mean) / self.sd)
        hi = norm.cdf((self.upper - self.mean) / self.sd)
        if not hi > lo:
            raise ValueError("truncation interval carries no mass")
        object.__setattr__(self, "_cdf_lo", lo)
        object.__setattr__(self, "_cdf_hi", hi)

    @property
    def is_discrete(self) -> bool:
        return False

    def modifier_spec(self) -> ModifierSpec:
        return ModifierSpec("continuous")

    def draw(self, rng) -> float:
        u = self._cdf_lo + rng.random() * (self._cdf_hi - self._cdf_lo)
        return float(self.mean + self.sd * norm.ppf(u))

    def expect(self, f) -> float:
        """E f(Z) by adaptive quadrature over the truncated support."""
        mass = self._cdf_hi - self._cdf_lo

        def integrand(z):
            return f(z) * norm.pdf((z - self.mean) / self.sd) / (self.sd * mass)

        out = integrate.quad(
            integrand,
            self.lower,
            self.upper,
            epsabs=_QUAD_TOL,
            epsrel=_QUAD_TOL,
            limit=200,
            full_output=1,
        )
        if len(out) > 3:
            raise EstimationError(f"quadrature did not converge: {out[3]}")
        return float(out[0])


@dataclass(frozen=True)
class Bernoulli:
    """Two-point modifier on levels {0, 1} with P(Z = 1) = prob."""

    prob: float

    def __post_init__(self):
        if not 0 < self.prob < 1:
            raise ValueError("prob must lie strictly between 0 and 1")

    @property
    def is_discrete(self) -> bool:
        return True

    def modifier_spec(self) -> ModifierSpec:
        return ModifierSpec("discrete", (0.0, 1.0))

    def draw(self, rng) -> float:
        return 1.0 if rng.random() < self.prob else 0.0

    def expect(self, f) -> float:
        return (1.0 - self.prob) * f(0.0) + self.prob * f(1.0)


@dataclass(frozen=True)
class GroupConfig:
    """One group's sample sizes, laws, and surfaces."""

    label: str
    n_subjects: int
    modifier: TruncatedNormal | Bernoulli
    beta0: Surface
    betas: tuple[Surface, ...]
    x_means: tuple[Surface, ...]
    x_sds: tuple[float, ...]
    sigma: float
    obs_per_subject: tuple[int, int] = (3, 6)
    time_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "x_means", tuple(self.x_means))
        object.__setattr__(self, "x_sds", tuple(float(s) for s in self.x_sds))
        if self.n_subjects < 2:
            raise ValueError("each group needs at least 2 subjects")
        if not (len(self.betas) == len(self.x_means) == len(self.x_sds)):
            raise ValueError("betas, x_means and x_sds must have equal length")
        if any(s < 0 for s in self.x_sds) or self.sigma < 0:
            raise ValueError("noise scales must be nonnegative")
        kmin, kmax = self.obs_per_subject
        if not (1 <= kmin <= kmax):
            raise ValueError("obs_per_subject bounds must satisfy 1 <= min <= max")
        t0, t1 = self.time_range
        if not t1 > t0:
            raise ValueError("time_range must have positive width")

    @property
    def p(self) -> int:
        return len(self.betas)

    def beta_vector(self, t: float, z: float) -> np.ndarray:
        """(beta0, beta1..betap) evaluated at (t, z)."""
        return np.array([self.beta0(t, z)] + [b(t, z) for b in self.betas])

    def mean_vector(self, t: float, z: float) -> np.ndarray:
        """(1, m_1..m_p) evaluated at (t, z)."""
        return np.array([1.0] + [m(t, z) for m in self.x_means])

    def outcome_mean(self, t: float, z: float) -> float:
        return float(self.mean_vector(t, z) @ self.beta_vector(t, z))


@dataclass(frozen=True)
class DGPConfig:
    majority: GroupConfig
    minority: GroupConfig
    seed: int = 0

    def __post_init__(self):
        if self.majority.p != self.minority.p:
            raise ValueError("groups must share the covariate count")
        if self.majority.modifier.is_discrete != self.minority.modifier.is_discrete:
            raise ValueError("groups must share the modifier kind")


def _generate_group(gc: GroupConfig, seed_seq) -> LongitudinalDataset:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    kmin, kmax = gc.obs_per_subject
    t0, t1 = gc.time_range
    subjects = []
    width = len(str(gc.n_subjects))
    for i in range(gc.n_subjects):
        n_obs = int(rng.integers(kmin, kmax + 1))
        z = gc.modifier.draw(rng)
        times = np.sort(rng.uniform(t0, t1, n_obs))
        covariates = np.empty((n_obs, gc.p))
        for r in range(gc.p):
            noise = rng.standard_normal(n_obs)
            covariates[:, r] = gc.x_means[r](times, z) + gc.x_sds[r] * noise
        eps = rng.standard_normal(n_obs)
        outcomes = gc.beta0(times, z) + gc.sigma * eps
        for r in range(gc.p):
            outcomes = outcomes + covariates[:, r] * gc.betas[r](times, z)
        subjects.append(
            Subject(
                id=f"{gc.label}-{i + 1:0{width}d}",
                modifier=z,
                times=times,
                outcomes=outcomes,
                covariates=covariates,
            )
        )
    return LongitudinalDataset(
        subjects=tuple(subjects),
        group=gc.label,
        modifier=gc.modifier.modifier_spec(),
    )


def generate(config: DGPConfig) -> tuple[LongitudinalDataset, LongitudinalDataset]:
    """Draw both groups; one substream per group off config.seed."""
    root = np.random.SeedSequence(config.seed)
    ss_major, ss_minor = root.spawn(2)
    return (
        _generate_group(config.majority, ss_major),
        _generate_group(config.minority, ss_minor),
    )


def true_decomposition(config: DGPConfig, grid: TimeGrid) -> DecompositionCurve:
    """Exact marginal decomposition implied by the configured surfaces.

    D is evaluated from the group outcome means directly, not as D1 + D2 + D3,
    so additivity of the result checks the quadrature rather than itself.
    """
    maj, minr = config.majority, config.minority
    m = len(grid)
    D = np.empty(m)
    D1 = np.empty(m)
    D2 = np.empty(m)
    D3 = np.empty(m)
    for gi, t in enumerate(grid.points):
        D[gi] = maj.modifier.expect(lambda z: maj.outcome_mean(t, z)) - minr.modifier.expect(
            lambda z: minr.outcome_mean(t, z)
        )
        D1[gi] = maj.modifier.expect(
            lambda z: float(
                maj.mean_vector(t, z) @ (maj.beta_vector(t, z) - minr.beta_vector(t, z))
            )
        )
        D2[gi] = maj.modifier.expect(
            lambda z: float(
                (maj.mean_vector(t, z) - minr.mean_vector(t, z)) @ minr.beta_vector(t, z)
            )
        )
        inner = lambda z: float(minr.mean_vector(t, z) @ minr.beta_vector(t, z))
        D3[gi] = maj.modifier.expect(inner) - minr.modifier.expect(inner)
    return DecompositionCurve(
        method="mldd",
        grid=grid,
        D=D,
        D1=D1,
        D2=D2,
        D3=D3,
        missing=np.zeros(m, dtype=bool),
    )


def true_cmldd(
    config: DGPConfig, grid: TimeGrid, zM: float, zm: float
) -> DecompositionCurve:
    """Exact conditional decomposition at fixed (zM, zm); no integration needed."""
    maj, minr = config.majority, config.minority
    m = len(grid)
    D1 = np.empty(m)
    D2 = np.empty(m)
    D3 = np.empty(m)
    for gi, t in enumerate(grid.points):
        aM = maj.mean_vector(t, zM)
        am_zM = minr.mean_vector(t, zM)
        am_zm = minr.mean_vector(t, zm)
        bM = maj.beta_vector(t, zM)
        bm_zM = minr.beta_vector(t, zM)
        bm_zm = minr.beta_vector(t, zm)
        D1[gi] = float(aM @ (bM - bm_zM))
        D2[gi] = float((aM - am_zM) @ bm_zM)
        D3[gi] = float(am_zM @ bm_zM - am_zm @ bm_zm)
    return DecompositionCurve(
        method="cmldd",
        grid=grid,
        D=D1 + D2 + D3,
        D1=D1,
        D2=D2,
        D3=D3,
        missing=np.zeros(m, dtype=bool),
        zM=float(zM),
        zm=float(zm),
    )


SCENARIOS = ("null", "constant", "bilinear", "additive", "discrete")


def scenario(
    name: str,
    n_majority: int = 100,
    n_minority: int = 100,
    seed: int = 0,
    obs_per_subject: tuple[int, int] = (3, 6),
) -> DGPConfig:
    """Named single-covariate configurations used throughout the test suite.

    null      identical groups, so every true component is zero.
    constant  flat surfaces; oversmoothing is optimal.
    bilinear  full t*z interactions in both groups' coefficients.
    additive  modifier enters the outcome linearly, no X-Z interaction,
              so the time-only and modifier-aware decompositions target
              the same overall disparity.
    discrete  two-level modifier with prevalences echoing a bachelor's
              degree gap (0.77 vs 0.26) and a monotone modifier effect.
    """
    common = dict(obs_per_subject=obs_per_subject)
    if name == "null":
        law = TruncatedNormal(0.0, 1.0, -2.0, 2.0)
        group = dict(
            modifier=law,
            beta0=Surface(1.0, 0.5, 0.3, 0.2),
            betas=(Surface(0.5, -0.3, 0.2, 0.0),),
            x_means=(Surface(0.0, 0.5, 0.4, 0.0),),
            x_sds=(0.5,),
            sigma=0.5,
            **common,
        )
        maj = GroupConfig(label="majority", n_subjects=n_majority, **group)
        minr = GroupConfig(label="minority", n_subjects=n_minority, **group)
    elif name == "constant":
        law = TruncatedNormal(0.0, 1.0, -2.0, 2.0)
        group = dict(
            modifier=law,
            beta0=Surface(2.0),
            betas=(Surface(3.0),),
            x_means=(Surface(0.5),),
            x_sds=(1.0,),
            sigma=1.0,
            **common,
        )
        maj = GroupConfig(label="majority", n_subjects=n_majority, **group)
        minr = GroupConfig(label="minority", n_subjects=n_minority, **group)
    elif name == "bilinear":
        maj = GroupConfig(
            label="majority",
            n_subjects=n_majority,
            modifier=TruncatedNormal(0.25, 0.9, -2.0, 2.0),
            beta0=Surface(1.0, 1.0, 0.5, 0.5),
            betas=(Surface(0.8, -0.5, 0.3, 0.4),),
            x_means=(Surface(0.2, 0.6, 0.3, 0.0),),
            x_sds=(0.5,),
            sigma=0.5,
            **common,
        )
        minr = GroupConfig(
            label="minority",
            n_subjects=n_minority,
            modifier=TruncatedNormal(-0.25, 0.9, -2.0, 2.0),
            beta0=Surface(0.6, 0.7, 0.3, 0.3),
            betas=(Surface(0.5, -0.3, 0.2, 0.2),),
            x_means=(Surface(0.0, 0.4, 0.2, 0.0),),
            x_sds=(0.5,),
            sigma=0.5,
            **common,
        )
    elif name == "additive":
        maj = GroupConfig(
            label="majority",
            n_subjects=n_majority,
            modifier=TruncatedNormal(0.3, 0.8, -2.0, 2.0),
            beta0=Surface(1.0, 0.8, 0.4, 0.2),
            betas=(Surface(0.7, -0.4, 0.0, 0.0),),
            x_means=(Surface(0.2, 0.5, 0.2, 0.0),),
            x_sds=(0.5,),
            sigma=0.4,
            **common,
        )
        minr = GroupConfig(
            label="minority",
            n_subjects=n_minority,
            modifier=TruncatedNormal(-0.3, 0.8, -2.0, 2.0),
            beta0=Surface(0.7, 0.6, 0.3, 0.15),
            betas=(Surface(0.5, -0.25, 0.0, 0.0),),
            x_means=(Surface(0.0, 0.4, 0.15, 0.0),),
            x_sds=(0.5,),
            sigma=0.4,
            **common,
        )
    elif name == "discrete":
        maj = GroupConfig(
            label="majority",
            n_subjects=n_majority,
            modifier=Bernoulli(0.77),
            beta0=Surface(1.0, 0.6, 0.5, 0.3),
            betas=(Surface(0.6, -0.3, 0.1, 0.0),),
            x_means=(Surface(0.3, 0.5, 0.2, 0.0),),
            x_sds=(0.5,),
            sigma=0.5,
            **common,
        )
        minr = GroupConfig(
            label="minority",
            n_subjects=n_minority,
            modifier=Bernoulli(0.26),
            beta0=Surface(0.6, 0.4, 0.3, 0.2),
            betas=(Surface(0.4, -0.2, 0.05, 0.0),),
            x_means=(Surface(0.1, 0.4, 0.15, 0.0),),
            x_sds=(0.5,),
            sigma=0.5,
            **common,
        )
    else:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return DGPConfig(majority=maj, minority=minr, seed=seed)
