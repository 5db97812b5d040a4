"""Gibbs sampler for linear regression under the effect fusion prior.

One sweep runs, in order: regression effects, error variance, scales,
hyperprior scales, indicators, prior precision refresh.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .design import CovariateSpec, DesignMatrix, check_propriety, spec_hash
from .exceptions import DataError, NumericalError, ProvenanceError
from .prior import HyperParams, conditional_delta_probability, kappa

logger = logging.getLogger(__name__)

STEPS = ("beta", "sigma2", "tau2", "G0", "delta", "prior_precision")


@dataclass
class SamplerConfig:
    n_burnin: int = 5000
    n_iter: int = 10000
    unrestricted_warm_start: int | None = None
    seed: int = 0
    thinning: int = 1
    M0: float = 10000.0
    s0: float = 0.0
    S0: float = 0.0

    def __post_init__(self):
        if self.unrestricted_warm_start is None:
            self.unrestricted_warm_start = min(500, self.n_burnin)
        if self.n_iter <= 0:
            raise ValueError("n_iter must be positive")
        if self.n_burnin < 0:
            raise ValueError("n_burnin must be non-negative")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if not 0 <= self.unrestricted_warm_start <= self.n_burnin:
            raise ValueError("unrestricted_warm_start must lie in [0, n_burnin]")
        if not self.M0 > 0:
            raise ValueError("M0 must be positive")
        if self.s0 < 0 or self.S0 < 0:
            raise ValueError("s0 and S0 must be non-negative")

    @property
    def n_kept(self) -> int:
        return self.n_iter // self.thinning


@dataclass
class ChainState:
    beta: np.ndarray
    sigma2: float
    tau2: np.ndarray
    delta: np.ndarray  # all covariates' indicators, concatenated in (h, k, j) order
    G0: np.ndarray
    prior_precision: np.ndarray = field(repr=False, default=None)

    def copy(self) -> "ChainState":
        return ChainState(self.beta.copy(), self.sigma2, self.tau2.copy(),
                          self.delta.copy(), self.G0.copy(),
                          None if self.prior_precision is None else self.prior_precision.copy())


class GibbsModel:
    """Data, specs and hyperparameters with everything a sweep reuses precomputed."""

    def __init__(self, design: DesignMatrix, response: np.ndarray,
                 hyper: Sequence[HyperParams] | HyperParams, config: SamplerConfig):
        self.design = design
        self.specs: tuple[CovariateSpec, ...] = tuple(design.specs)
        if isinstance(hyper, HyperParams):
            hyper = [hyper] * len(self.specs)
        self.hyper = tuple(hyper)
        if len(self.hyper) != len(self.specs):
            raise ValueError("one HyperParams per covariate required")
        self.config = config
        self.X = design.X
        self.dim = self.X.shape[1]
        self.set_response(response)

        p = len(self.specs)
        self.blocks = [design.block(h) for h in range(p)]
        self.diffs = [s.fusion_pattern.difference_matrix() for s in self.specs]
        self.gamma = np.array([s.gamma for s in self.specs])
        self.c = np.array([s.c for s in self.specs], dtype=float)
        self.g0 = np.array([hp.g0 for hp in self.hyper])
        self.r = np.array([hp.r for hp in self.hyper])
        self.has_hyperprior = np.array([hp.G0_lambda is not None for hp in self.hyper])
        self.lam = np.array([hp.G0_lambda if hp.G0_lambda else np.inf for hp in self.hyper])

        d = [s.fusion_pattern.d for s in self.specs]
        self.pair_offsets = np.concatenate([[0], np.cumsum(d)]).astype(int)
        self.pair_owner = np.repeat(np.arange(p), d)
        self.frozen = np.concatenate([s.frozen_mask for s in self.specs]) if p else np.zeros(0, bool)
        # Stacked difference operator on the full coefficient vector.
        self.diff_full = np.zeros((int(self.pair_offsets[-1]), self.dim))
        for h in range(p):
            rows = slice(self.pair_offsets[h], self.pair_offsets[h + 1])
            self.diff_full[rows, self.blocks[h]] = self.diffs[h]

    def set_response(self, response: np.ndarray) -> None:
        y = np.asarray(response, dtype=float)
        if y.shape != (self.design.n,):
            raise DataError(f"response has shape {y.shape}, expected ({self.design.n},)")
        self.y = y
        self.n = y.shape[0]
        self.XtX = self.X.T @ self.X
        self.Xty = self.X.T @ y

    def delta_block(self, delta: np.ndarray, h: int) -> np.ndarray:
        return delta[self.pair_offsets[h]:self.pair_offsets[h + 1]]

    def initial_state(self) -> ChainState:
        G0 = np.array([hp.G0 for hp in self.hyper], dtype=float)
        tau2 = np.where(self.g0 > 1, G0 / np.maximum(self.g0 - 1, 1e-300), G0)
        sigma2 = float(np.var(self.y, ddof=1)) if self.n > 1 else 1.0
        if not sigma2 > 0:
            sigma2 = 1.0
        state = ChainState(
            beta=np.zeros(self.dim), sigma2=sigma2, tau2=tau2,
            delta=np.ones(int(self.pair_offsets[-1]), dtype=np.int8), G0=G0,
        )
        update_prior_precision(state, self)
        return state


def _rng(seed: int, chain: int = 0, *extra: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chain, *extra))))


def structure_block(model: GibbsModel, h: int, delta_h: np.ndarray) -> np.ndarray:
    D = model.diffs[h]
    kap = kappa(delta_h, model.r[h])
    return (D.T * kap) @ D


def update_prior_precision(state: ChainState, model: GibbsModel) -> np.ndarray:
    """Refresh the block-diagonal prior precision from the current delta and tau2.

    Each covariate block is ``Q_h(delta_h) / (gamma_h tau2_h)``; the inverse
    covariance is never formed.
    """
    P = np.zeros((model.dim, model.dim))
    P[0, 0] = 1.0 / model.config.M0
    for h, blk in enumerate(model.blocks):
        Q = structure_block(model, h, model.delta_block(state.delta, h))
        P[blk, blk] = Q / (model.gamma[h] * state.tau2[h])
    state.prior_precision = P
    return P


def beta_conditional(state: ChainState, model: GibbsModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``b`` and lower Cholesky factor of the precision ``B^{-1}``.

    ``B^{-1} = B0^{-1} + X'X / sigma2`` and ``b = B X'y / sigma2``. A failed
    factorization is retried once with a relative jitter of 1e-10.
    """
    precision = state.prior_precision + model.XtX / state.sigma2
    rhs = model.Xty / state.sigma2
    try:
        L = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError:
        jitter = 1e-10 * np.mean(np.diag(precision))
        try:
            L = linalg.cholesky(precision + jitter * np.eye(model.dim), lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"posterior precision not positive definite: {exc}") from exc
    return linalg.cho_solve((L, True), rhs), L


def sample_beta(state: ChainState, model: GibbsModel, rng: np.random.Generator) -> np.ndarray:
    """Draw effects from ``N(b, B)``; see :func:`beta_conditional`."""
    mean, L = beta_conditional(state, model)
    z = rng.standard_normal(model.dim)
    state.beta = mean + linalg.solve_triangular(L.T, z, lower=False)
    return state.beta


def sample_sigma2(state: ChainState, model: GibbsModel, rng: np.random.Generator) -> float:
    cfg = model.config
    resid = model.y - model.X @ state.beta
    shape = cfg.s0 + model.n / 2.0
    scale = cfg.S0 + 0.5 * float(resid @ resid)
    if not (shape > 0 and scale > 0):
        raise NumericalError("degenerate residuals: inverse gamma full conditional is improper")
    state.sigma2 = scale / rng.gamma(shape)
    return state.sigma2


def pair_differences(state: ChainState, model: GibbsModel) -> np.ndarray:
    """Effect differences of all fusable pairs; the baseline effect is 0."""
    return model.diff_full @ state.beta


def sample_tau2(state: ChainState, model: GibbsModel, rng: np.random.Generator) -> np.ndarray:
    """Independent inverse gamma draws per covariate.

    Uses ``beta_h' Q beta_h = sum kappa * theta^2`` over fusable pairs, so
    each update only reads its own block.
    """
    theta = pair_differences(state, model)
    weights = kappa(state.delta, model.r[model.pair_owner]) * theta**2
    quad = np.bincount(model.pair_owner, weights=weights, minlength=len(model.specs))
    shape = model.g0 + model.c / 2.0
    scale = state.G0 + quad / (2.0 * model.gamma)
    state.tau2 = scale / rng.gamma(shape)
    return state.tau2


def sample_G0(state: ChainState, model: GibbsModel, rng: np.random.Generator) -> np.ndarray:
    """Gamma full conditional for covariates with an exponential hyperprior on G0."""
    idx = np.flatnonzero(model.has_hyperprior)
    if idx.size:
        # tau2 | G0 ~ IG(g0, G0) contributes G0^{g0} exp(-G0 / tau2).
        shape = model.g0[idx] + 1.0
        rate = 1.0 / model.lam[idx] + 1.0 / state.tau2[idx]
        state.G0[idx] = rng.gamma(shape) / rate
    return state.G0


def sample_delta(state: ChainState, model: GibbsModel, rng: np.random.Generator) -> np.ndarray:
    """Resample all indicators independently; frozen pairs stay in the slab.

    Uniforms are drawn for every pair in ``(h, k, j)`` order so the RNG
    consumption does not depend on which pairs are frozen.
    """
    theta = pair_differences(state, model)
    owner = model.pair_owner
    p1 = conditional_delta_probability(theta, state.tau2[owner], model.gamma[owner], model.r[owner])
    u = rng.random(theta.shape[0])
    delta = (u < p1).astype(np.int8)
    delta[model.frozen] = 1
    state.delta = delta
    return delta


def gibbs_sweep(state: ChainState, model: GibbsModel, rng: np.random.Generator,
                update_delta: bool = True, trace: list | None = None) -> ChainState:
    steps: list[tuple[str, Callable]] = [
        ("beta", sample_beta),
        ("sigma2", sample_sigma2),
        ("tau2", sample_tau2),
        ("G0", sample_G0),
        ("delta", sample_delta),
        ("prior_precision", lambda s, m, _rng: update_prior_precision(s, m)),
    ]
    for name, step in steps:
        if name == "delta" and not update_delta:
            continue
        step(state, model, rng)
        if trace is not None:
            trace.append(name)
    return state


@dataclass
class PosteriorDraws:
    """Kept sweeps of one chain. ``delta`` is ``(M, sum d_h)`` of 0/1."""

    beta: np.ndarray
    sigma2: np.ndarray
    tau2: np.ndarray
    delta: np.ndarray
    G0: np.ndarray
    specs: tuple[CovariateSpec, ...]
    hyper: tuple[HyperParams, ...]
    config: SamplerConfig
    chain: int = 0
    spec_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.spec_hash:
            self.spec_hash = spec_hash(self.specs)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def pair_offsets(self) -> np.ndarray:
        d = [s.fusion_pattern.d for s in self.specs]
        return np.concatenate([[0], np.cumsum(d)]).astype(int)

    def delta_block(self, h: int) -> np.ndarray:
        off = self.pair_offsets
        return self.delta[:, off[h]:off[h + 1]]

    def verify(self) -> None:
        if spec_hash(self.specs) != self.spec_hash:
            raise ProvenanceError("spec hash mismatch: draws do not belong to these covariate specs")

    def metadata(self) -> dict:
        return {
            "spec_hash": self.spec_hash,
            "seed": self.config.seed,
            "chain": self.chain,
            "config": asdict(self.config),
            "hyper": [hp.to_dict() for hp in self.hyper],
            "specs": [s.to_dict() for s in self.specs],
            "n_draws": self.n_draws,
            "extra": self.extra,
        }

    def column_names(self) -> list[str]:
        names = ["mu"]
        for s in self.specs:
            names += [f"beta[{s.name}={lv}]" for lv in s.levels[1:]]
        names.append("sigma2")
        names += [f"tau2[{s.name}]" for s in self.specs]
        names += [f"G0[{s.name}]" for s in self.specs]
        for s in self.specs:
            names += [f"delta[{s.name}:{k}-{j}]" for k, j in s.pairs]
        return names

    def save(self, directory: str | Path, fmt: str = "npz", stem: str | None = None) -> Path:
        """Write draws plus a JSON metadata sidecar. Output is byte-stable."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or f"draws_chain{self.chain}"
        meta = self.metadata()
        meta["format"] = fmt
        if fmt == "npz":
            path = directory / f"{stem}.npz"
            arrays = {
                "beta": self.beta, "sigma2": self.sigma2, "tau2": self.tau2, "G0": self.G0,
                "delta_packed": np.packbits(self.delta.astype(np.uint8), axis=1),
                "delta_width": np.array([self.delta.shape[1]]),
                "spec_hash": np.frombuffer(self.spec_hash.encode("ascii"), dtype=np.uint8),
            }
            _write_npz(path, arrays)
        elif fmt == "csv":
            path = directory / f"{stem}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(self.column_names())
                table = np.column_stack([self.beta, self.sigma2, self.tau2, self.G0])
                for row, bits in zip(table, self.delta):
                    writer.writerow([repr(float(v)) for v in row] + [int(b) for b in bits])
        else:
            raise ValueError(f"unknown draws format {fmt!r}")
        meta["file"] = path.name
        (directory / f"{stem}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, sidecar: str | Path) -> "PosteriorDraws":
        sidecar = Path(sidecar)
        meta = json.loads(sidecar.read_text())
        specs = tuple(CovariateSpec.from_dict(s) for s in meta["specs"])
        stored = meta["spec_hash"]
        if spec_hash(specs) != stored:
            raise ProvenanceError(f"{sidecar}: spec hash does not match the stored covariate specs")
        hyper = tuple(HyperParams(**h) for h in meta["hyper"])
        config = SamplerConfig(**meta["config"])
        path = sidecar.parent / meta["file"]
        p = len(specs)
        dim = 1 + sum(s.c for s in specs)
        if meta["format"] == "npz":
            with np.load(path) as data:
                file_hash = bytes(data["spec_hash"]).decode("ascii")
                if file_hash != stored:
                    raise ProvenanceError(f"{path}: spec hash differs from its sidecar")
                width = int(data["delta_width"][0])
                delta = np.unpackbits(data["delta_packed"], axis=1, count=width).astype(np.int8)
                beta, sigma2, tau2, G0 = (data[k] for k in ("beta", "sigma2", "tau2", "G0"))
        else:
            raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            beta = raw[:, :dim]
            sigma2 = raw[:, dim]
            tau2 = raw[:, dim + 1:dim + 1 + p]
            G0 = raw[:, dim + 1 + p:dim + 1 + 2 * p]
            delta = raw[:, dim + 1 + 2 * p:].astype(np.int8)
        return cls(beta=beta, sigma2=sigma2, tau2=tau2, delta=delta, G0=G0, specs=specs,
                   hyper=hyper, config=config, chain=meta["chain"], spec_hash=stored,
                   extra=meta.get("extra", {}))


def _write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    # np.savez stamps the current time into the zip headers; fix it instead.
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def run_chain(design: DesignMatrix, response: np.ndarray,
              hyper: Sequence[HyperParams] | HyperParams, config: SamplerConfig,
              chain: int = 0, force: bool = False, progress: Callable | None = None) -> PosteriorDraws:
    """Warm start with all indicators at 1, burn in, then keep every ``thinning``-th sweep."""
    model = GibbsModel(design, response, hyper, config)
    if not force:
        report = check_propriety(design, [(hp.g0, hp.G0) for hp in model.hyper],
                                 config.s0, config.S0, y=model.y)
        if not report.ok:
            failed = [k for k, v in report.conditions.items() if not v]
            raise DataError(f"posterior propriety conditions fail: {failed}; use force to override")
    rng = _rng(config.seed, chain)
    state = model.initial_state()
    M = config.n_kept
    p = len(model.specs)
    out_beta = np.empty((M, model.dim))
    out_sigma2 = np.empty(M)
    out_tau2 = np.empty((M, p))
    out_G0 = np.empty((M, p))
    out_delta = np.empty((M, state.delta.shape[0]), dtype=np.int8)
    total = config.n_burnin + config.n_iter
    kept = 0
    for sweep in range(total):
        try:
            gibbs_sweep(state, model, rng, update_delta=sweep >= config.unrestricted_warm_start)
        except NumericalError as exc:
            raise NumericalError(f"sweep {sweep}: {exc}") from exc
        post = sweep - config.n_burnin
        if post >= 0 and (post + 1) % config.thinning == 0 and kept < M:
            out_beta[kept] = state.beta
            out_sigma2[kept] = state.sigma2
            out_tau2[kept] = state.tau2
            out_G0[kept] = state.G0
            out_delta[kept] = state.delta
            kept += 1
        if progress is not None:
            progress(sweep, total)
    return PosteriorDraws(beta=out_beta, sigma2=out_sigma2, tau2=out_tau2, delta=out_delta,
                          G0=out_G0, specs=model.specs, hyper=model.hyper, config=config,
                          chain=chain)


def _run_chain_job(args):
    return run_chain(*args)


def run_chains(design: DesignMatrix, response: np.ndarray,
               hyper: Sequence[HyperParams] | HyperParams, config: SamplerConfig,
               n_chains: int = 1, max_workers: int = 1, force: bool = False) -> list[PosteriorDraws]:
    """Independent chains on streams ``(seed, chain)``; results do not depend on ``max_workers``."""
    jobs = [(design, response, hyper, config, i, force) for i in range(n_chains)]
    if max_workers <= 1 or n_chains == 1:
        return [_run_chain_job(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_chain_job, jobs))


def autocorrelation(series: np.ndarray) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def integrated_autocorrelation_time(series: np.ndarray) -> float:
    """Geyer's initial positive sequence estimator, ``1 + 2 * sum of rho``.

    Sums of adjacent autocorrelation pairs are accumulated while positive.
    A constant series returns 1 with a warning.
    """
    x = np.asarray(series, dtype=float)
    if x.shape[0] < 4 or np.ptp(x) == 0:
        warnings.warn("degenerate series: integrated autocorrelation time set to 1",
                      RuntimeWarning, stacklevel=2)
        return 1.0
    rho = autocorrelation(x)
    n_pairs = (rho.shape[0] - 1) // 2
    pair_sums = rho[: 2 * n_pairs : 2] + rho[1 : 2 * n_pairs : 2]
    nonpos = np.flatnonzero(pair_sums <= 0)
    m = nonpos[0] if nonpos.size else n_pairs
    return float(max(-1.0 + 2.0 * pair_sums[:m].sum(), 1e-12))


def iat_summary(draws: PosteriorDraws) -> dict:
    """Median and range of IATs over all regression effects."""
    taus = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for col in range(1, draws.beta.shape[1]):
            taus.append(integrated_autocorrelation_time(draws.beta[:, col]))
    taus = np.array(taus) if taus else np.array([1.0])
    return {"median": float(np.median(taus)), "min": float(taus.min()),
            "max": float(taus.max()), "per_effect": [float(t) for t in taus]}
