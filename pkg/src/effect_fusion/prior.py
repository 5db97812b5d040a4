"""The effect fusion prior: structure matrices, indicator prior, diagnostics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, linalg, special, stats

from .design import CovariateSpec, FusionPattern, Scale
from .exceptions import NumericalError

DEFAULT_R = 20000.0
DEFAULT_G0_SHAPE = 5.0
LOG_CLAMP = 700.0


@dataclass(frozen=True)
class HyperParams:
    """Per-covariate prior hyperparameters.

    ``G0_lambda`` switches on the exponential hyperprior on ``G0`` (given by
    its mean); ``G0`` is then only the starting value.
    """

    r: float = DEFAULT_R
    g0: float = DEFAULT_G0_SHAPE
    G0: float = 20.0
    G0_lambda: float | None = None

    def __post_init__(self):
        # integer inputs from TOML would otherwise leak into the chain state dtype
        for name in ("r", "g0", "G0"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.G0_lambda is not None:
            object.__setattr__(self, "G0_lambda", float(self.G0_lambda))
        if not self.r > 1:
            raise ValueError(f"precision ratio r must exceed 1, got {self.r}")
        if not self.g0 > 0:
            raise ValueError(f"g0 must be positive, got {self.g0}")
        if not self.G0 > 0:
            raise ValueError(f"G0 must be positive, got {self.G0}")
        if self.G0_lambda is not None and not self.G0_lambda > 0:
            raise ValueError(f"hyperprior mean must be positive, got {self.G0_lambda}")

    @classmethod
    def default_for(cls, scale: Scale | str, **overrides) -> "HyperParams":
        scale = Scale.parse(scale)
        G0 = 2.0 if scale is Scale.NOMINAL else 20.0
        return cls(**{"G0": G0, **overrides})

    def to_dict(self) -> dict:
        return {"r": self.r, "g0": self.g0, "G0": self.G0, "G0_lambda": self.G0_lambda}


@dataclass
class IndicatorState:
    """Indicator bits over the fusable pairs of one covariate.

    ``delta[i] == 1`` keeps the difference of ``pattern.pairs[i]`` in the slab.
    Frozen pairs are soft restrictions and always hold 1.
    """

    pattern: FusionPattern
    delta: np.ndarray
    frozen: np.ndarray = field(default=None)

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.int8).copy()
        if self.delta.shape != (self.pattern.d,):
            raise ValueError(
                f"indicator vector has shape {self.delta.shape}, pattern needs ({self.pattern.d},)"
            )
        if not np.isin(self.delta, (0, 1)).all():
            raise ValueError("indicators must be 0 or 1")
        if self.frozen is None:
            self.frozen = np.zeros(self.pattern.d, dtype=bool)
        self.frozen = np.asarray(self.frozen, dtype=bool)
        if (self.delta[self.frozen] != 1).any():
            raise ValueError("frozen pairs must have indicator 1")

    @classmethod
    def ones(cls, spec: CovariateSpec) -> "IndicatorState":
        return cls(spec.fusion_pattern, np.ones(spec.fusion_pattern.d), spec.frozen_mask)

    @classmethod
    def from_pairs(cls, spec: CovariateSpec, values: dict[tuple[int, int], int],
                   default: int = 1) -> "IndicatorState":
        bits = [values.get(p, default) for p in spec.pairs]
        return cls(spec.fusion_pattern, np.array(bits), spec.frozen_mask)

    def __getitem__(self, pair: tuple[int, int]) -> int:
        return int(self.delta[self.pattern.index(*pair)])

    @property
    def d(self) -> int:
        return self.pattern.d


@dataclass(frozen=True)
class StructureMatrix:
    Q: np.ndarray
    gamma: float
    r: float

    @property
    def c(self) -> int:
        return self.Q.shape[0]


def kappa(delta: np.ndarray, r: float) -> np.ndarray:
    """Pair precision weights: 1 in the slab, ``r`` in the spike."""
    delta = np.asarray(delta, dtype=float)
    return delta + r * (1.0 - delta)


def build_structure_matrix(spec: CovariateSpec, delta: IndicatorState | np.ndarray,
                           r: float) -> StructureMatrix:
    """Assemble ``Q(delta)`` entry by entry.

    Off-diagonals are ``-kappa_kj`` for fusable pairs and 0 otherwise; each
    diagonal is the negated off-diagonal row sum plus ``kappa_k0`` when the
    pair ``(k, 0)`` is fusable.
    """
    if not r > 1:
        raise ValueError("precision ratio r must exceed 1")
    pattern = spec.fusion_pattern
    bits = delta.delta if isinstance(delta, IndicatorState) else np.asarray(delta)
    if isinstance(delta, IndicatorState) and delta.pattern != pattern:
        raise ValueError("indicator pairs do not match the covariate's fusion pattern")
    if len(bits) != pattern.d:
        raise ValueError(f"expected {pattern.d} indicators, got {len(bits)}")
    if not pattern.is_connected():
        raise ValueError("singular structure: fusion pattern graph is disconnected")
    c = pattern.c
    Q = np.zeros((c, c))
    for (k, j), kap in zip(pattern.pairs, kappa(bits, r)):
        Q[k - 1, k - 1] += kap
        if j > 0:
            Q[j - 1, j - 1] += kap
            Q[k - 1, j - 1] -= kap
            Q[j - 1, k - 1] -= kap
    try:
        linalg.cholesky(Q, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"structure matrix is not positive definite: {exc}") from exc
    return StructureMatrix(Q=Q, gamma=spec.gamma, r=float(r))


def restriction_matrix(c: int) -> np.ndarray:
    """Coefficients ``U`` with ``theta_kj = theta_k0 - theta_j0`` for ``1 <= j < k <= c``.

    Rows follow the nominal pair order restricted to ``j > 0``.
    """
    rows = [(k, j) for k in range(1, c + 1) for j in range(1, k)]
    U = np.zeros((len(rows), c))
    for i, (k, j) in enumerate(rows):
        U[i, k - 1] = 1.0
        U[i, j - 1] = -1.0
    return U


def structure_matrix_via_restriction(spec: CovariateSpec, delta: IndicatorState | np.ndarray,
                                     r: float) -> StructureMatrix:
    """``Q = kappa_0 + U' kappa_rest U`` from independent priors on all differences.

    Starting from independent Normal priors on every difference ``theta_kj``
    and conditioning on the linear restrictions among them gives this closed
    form. Used as an independent check of :func:`build_structure_matrix`.
    """
    if spec.scale is not Scale.NOMINAL or spec.fusion_pattern != FusionPattern.nominal(spec.c):
        raise ValueError("restriction route applies to unrestricted (nominal) fusion only")
    bits = delta.delta if isinstance(delta, IndicatorState) else np.asarray(delta)
    c = spec.c
    lookup = dict(zip(spec.pairs, kappa(bits, r)))
    kappa_base = np.diag([lookup[(k, 0)] for k in range(1, c + 1)])
    kappa_rest = np.diag([lookup[(k, j)] for k in range(1, c + 1) for j in range(1, k)])
    U = restriction_matrix(c)
    Q = kappa_base + U.T @ kappa_rest @ U
    return StructureMatrix(Q=Q, gamma=spec.gamma, r=float(r))


def restricted_covariance(spec: CovariateSpec, delta: np.ndarray, r: float) -> np.ndarray:
    """Covariance of ``beta`` (in units of ``gamma tau^2``) after conditioning.

    Conditions the independent difference prior ``theta ~ N(0, diag(1/kappa))``
    on ``U theta_0 - theta_rest = 0`` and returns the leading ``c x c`` block.
    """
    c = spec.c
    lookup = dict(zip(spec.pairs, kappa(np.asarray(delta), r)))
    order = [(k, 0) for k in range(1, c + 1)] + [
        (k, j) for k in range(1, c + 1) for j in range(1, k)]
    Sigma = np.diag([1.0 / lookup[p] for p in order])
    U = restriction_matrix(c)
    R = np.hstack([U, -np.eye(U.shape[0])])
    if R.shape[0] == 0:
        return Sigma[:c, :c]
    SR = Sigma @ R.T
    Omega = Sigma - SR @ np.linalg.solve(R @ SR, SR.T)
    return Omega[:c, :c]


def partial_moments(structure: StructureMatrix, tau2: float) -> tuple[np.ndarray, np.ndarray]:
    """Prior partial precisions and partial correlations of the level effects."""
    if not tau2 > 0:
        raise ValueError("tau2 must be positive")
    Q = structure.Q
    diag = np.diag(Q)
    precision = diag / (structure.gamma * tau2)
    corr = -Q / np.sqrt(np.outer(diag, diag))
    np.fill_diagonal(corr, 1.0)
    return precision, corr


def log_prior_odds_null_vs_full(c: int, r: float) -> float:
    """Log prior odds of all-spike versus all-slab for a nominal covariate.

    ``|Q(0)| = r^c |Q(1)|`` and there are ``d = c(c+1)/2`` pairs, so the odds
    are ``r^{(d - c)/2} = r^{c(c-1)/4}``.
    """
    if c < 1 or not r > 1:
        raise ValueError("need c >= 1 and r > 1")
    return c * (c - 1) / 4.0 * np.log(r)


def log_indicator_weight(spec: CovariateSpec, delta: np.ndarray, r: float) -> float:
    """Unnormalised ``log p(delta) = -log|Q(delta)|/2 + (#spike/2) log r``."""
    Q = build_structure_matrix(spec, np.asarray(delta), r).Q
    sign, logdet = np.linalg.slogdet(Q)
    if sign <= 0:
        raise NumericalError("structure matrix determinant is not positive")
    n_spike = float(np.sum(1 - np.asarray(delta)))
    return -0.5 * logdet + 0.5 * n_spike * np.log(r)


def log_prior_odds_numeric(c: int, r: float) -> float:
    """Determinant route to :func:`log_prior_odds_null_vs_full`."""
    spec = CovariateSpec("x", tuple(str(i) for i in range(c + 1)), Scale.NOMINAL)
    d = spec.fusion_pattern.d
    return log_indicator_weight(spec, np.zeros(d), r) - log_indicator_weight(spec, np.ones(d), r)


class UniformityCheck(NamedTuple):
    is_uniform: bool
    spread: float
    n_configs: int


def indicator_prior_is_uniform(spec: CovariateSpec, r: float = DEFAULT_R,
                               tol: float = 1e-9, n_random: int = 512,
                               seed: int = 0) -> UniformityCheck:
    """Check that ``p(delta)`` is flat over indicator configurations.

    Holds for ordinal and selection-only patterns, whose determinant is the
    product of the pair weights. All ``2^c`` configurations are swept for
    ``c <= 12``, otherwise ``n_random`` random ones.
    """
    if spec.scale is Scale.NOMINAL:
        raise ValueError("uniformity holds only for restricted patterns")
    d = spec.fusion_pattern.d
    if d <= 12:
        configs = np.array(list(itertools.product((0, 1), repeat=d)), dtype=float)
    else:
        configs = np.random.default_rng(seed).integers(0, 2, size=(n_random, d)).astype(float)
    logw = np.array([log_indicator_weight(spec, cfg, r) for cfg in configs])
    w = np.exp(logw - logw[0])
    spread = float((w.max() - w.min()) / w.mean())
    return UniformityCheck(spread < tol, spread, len(configs))


def conditional_delta_probability(theta, tau2, gamma, r):
    """``P(delta = 1 | theta)``: slab density over slab plus spike density.

    Evaluated in log space; safe for large ``r`` and ``|theta|``.
    """
    theta = np.asarray(theta, dtype=float)
    log_L = 0.5 * np.log(r) - (r - 1.0) * theta**2 / (2.0 * gamma * tau2)
    log_L = np.clip(log_L, -LOG_CLAMP, LOG_CLAMP)
    out = special.expit(-log_L)
    return out if out.ndim else float(out)


def marginal_fusion_probability_curve(theta_grid, g0: float, G0: float, r: float) -> np.ndarray:
    """``P(delta = 0 | theta)`` with ``tau^2`` integrated out.

    Spike and slab become scaled t densities with ``2 g0`` degrees of freedom
    and scales ``sigma / sqrt(r)`` and ``sigma``, ``sigma = sqrt(G0 / g0)``.
    """
    if not (g0 > 0 and G0 > 0 and r > 0):
        raise ValueError("g0, G0 and r must be positive")
    theta = np.asarray(theta_grid, dtype=float)
    if not np.isfinite(theta).all():
        raise ValueError("theta grid must be finite")
    sigma = np.sqrt(G0 / g0)
    df = 2.0 * g0
    log_ratio = (stats.t.logpdf(theta / sigma, df)
                 - 0.5 * np.log(r) - stats.t.logpdf(np.sqrt(r) * theta / sigma, df))
    return special.expit(-log_ratio)


def _all_configs(d: int) -> np.ndarray:
    return ((np.arange(2**d)[:, None] >> np.arange(d - 1, -1, -1)) & 1).astype(np.int8)


def indicator_prior_table(spec: CovariateSpec, r: float, max_dim: int = 20,
                          chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Enumerate all configurations and their normalised prior probabilities."""
    d = spec.fusion_pattern.d
    if d > max_dim:
        raise ValueError(f"enumeration infeasible: {d} indicators (limit {max_dim})")
    configs = _all_configs(d)
    D = spec.fusion_pattern.difference_matrix()
    logw = np.empty(len(configs))
    for start in range(0, len(configs), chunk):
        block = configs[start:start + chunk].astype(float)
        kap = kappa(block, r)
        Qs = np.einsum("pc,np,pe->nce", D, kap, D)
        sign, logdet = np.linalg.slogdet(Qs)
        if (sign <= 0).any():
            raise NumericalError("non-positive structure determinant during enumeration")
        logw[start:start + chunk] = -0.5 * logdet + 0.5 * (1 - block).sum(axis=1) * np.log(r)
    probs = np.exp(logw - special.logsumexp(logw))
    return configs, probs


@dataclass
class PriorDraws:
    beta: np.ndarray
    delta: np.ndarray
    tau2: np.ndarray
    spec: CovariateSpec


def simulate_prior(spec: CovariateSpec, hyper: HyperParams, n_draws: int,
                   seed: int) -> PriorDraws:
    """Forward draws ``delta -> tau^2 -> beta`` from the fusion prior.

    ``p(delta)`` is normalised exactly by enumeration, so the pattern may
    have at most 20 fusable pairs.
    """
    configs, probs = indicator_prior_table(spec, hyper.r)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    which = rng.choice(len(configs), size=n_draws, p=probs)
    tau2 = hyper.G0 / rng.gamma(hyper.g0, 1.0, size=n_draws)
    z = rng.standard_normal((n_draws, spec.c))
    beta = np.empty((n_draws, spec.c))
    factors: dict[int, np.ndarray] = {}
    for i, idx in enumerate(which):
        L = factors.get(idx)
        if L is None:
            Q = build_structure_matrix(spec, configs[idx], hyper.r).Q
            L = factors[idx] = linalg.cholesky(Q, lower=True)
        # Q = L L'  =>  L'^{-1} z ~ N(0, Q^{-1})
        beta[i] = np.sqrt(spec.gamma * tau2[i]) * linalg.solve_triangular(L.T, z[i], lower=False)
    return PriorDraws(beta=beta, delta=configs[which], tau2=tau2, spec=spec)


def axis_band_mass(beta: np.ndarray, width: float = 0.05) -> float:
    """Fraction of ``(beta_1, beta_2)`` points near an axis or the diagonal."""
    b1, b2 = beta[:, 0], beta[:, 1]
    near = (np.abs(b1) < width) | (np.abs(b2) < width) | (np.abs(b1 - b2) < width)
    return float(near.mean())


def _normal_interval(a: float, b: float, sd: float) -> float:
    """``P(a < Z < b)`` for ``Z ~ N(0, sd^2)``, accurate far in either tail."""
    if b <= a:
        return 0.0
    if a >= 0:
        return float(stats.norm.sf(a, scale=sd) - stats.norm.sf(b, scale=sd))
    return float(stats.norm.cdf(b, scale=sd) - stats.norm.cdf(a, scale=sd))


def normal_band_outside_mass(sd1: float, sd2: float, width: float = 0.05) -> float:
    """Mass of independent ``N(0, sd1^2) x N(0, sd2^2)`` outside all three bands.

    Computed directly rather than as ``1 - inside`` so that tiny tails stay
    distinguishable from zero.
    """
    def outside(b1):
        # b2 must avoid [-w, w] and [b1 - w, b1 + w]
        lo, hi = sorted((0.0, b1))
        p = stats.norm.cdf(lo - width, scale=sd2) + stats.norm.sf(hi + width, scale=sd2)
        p += _normal_interval(lo + width, hi - width, sd2)
        return p * stats.norm.pdf(b1, scale=sd1)

    return float(sum(integrate.quad(outside, a, b, limit=200, epsabs=0.0, epsrel=1e-10)[0]
                     for a, b in ((-np.inf, -width), (width, np.inf))))


def normal_band_mass(sd1: float, sd2: float, width: float = 0.05) -> float:
    """Exact :func:`axis_band_mass` for independent ``N(0, sd1^2) x N(0, sd2^2)``."""
    return 1.0 - normal_band_outside_mass(sd1, sd2, width)


def concentration_check(beta: np.ndarray, width: float = 0.05) -> tuple[float, float, bool]:
    """Band mass of prior draws against independent normals of matched variance.

    Returns ``(mass, reference, passes)``; passes when the draws put strictly
    less mass outside the bands than the normal reference. The comparison
    uses outside masses, since both band masses approach 1 for small scales.
    """
    mass = axis_band_mass(beta, width)
    sd = beta[:, :2].std(axis=0)
    ref_outside = normal_band_outside_mass(sd[0], sd[1], width)
    b1, b2 = beta[:, 0], beta[:, 1]
    far = (np.abs(b1) >= width) & (np.abs(b2) >= width) & (np.abs(b1 - b2) >= width)
    return mass, 1.0 - ref_outside, float(far.mean()) < ref_outside


def fusion_curve_table(theta_grid: Sequence[float], g0: float, G0: float,
                       r: float) -> np.ndarray:
    theta = np.asarray(theta_grid, dtype=float)
    return np.column_stack([theta, marginal_fusion_probability_curve(theta, g0, G0, r)])
