"""Synthetic experiment with four ordinal and four nominal covariates.

Generates replicated data sets, runs fusion + selection + refit, and scores
estimation (MSE), prediction (MSPE) and pairwise selection (TPR/TNR/PPV/NPV).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import CovariateSpec, DesignMatrix, Scale, design_from_codes
from .gibbs import SamplerConfig, run_chain
from .prior import HyperParams
from .select import Partition, refit_selected, select_partitions

logger = logging.getLogger(__name__)

PROBS_8 = (0.1, 0.1, 0.2, 0.05, 0.2, 0.1, 0.2, 0.05)
PROBS_4 = (0.1, 0.4, 0.2, 0.3)


def _default_effects() -> list[tuple[float, ...]]:
    return [
        (0, 1, 1, 2, 2, 4, 4),
        (0,) * 7,
        (0, -2, -2),
        (0,) * 3,
        (0, 1, 1, 1, 1, -2, -2),
        (0,) * 7,
        (0, 2, 2),
        (0,) * 3,
    ]


@dataclass
class SimulationDesign:
    """True effects exclude the baseline level, which is always 0."""

    n: int = 500
    n_new: int = 500
    intercept: float = 1.0
    error_sd: float = 1.0
    effects: list[tuple[float, ...]] = field(default_factory=_default_effects)
    scales: list[str] = field(default_factory=lambda: ["ordinal"] * 4 + ["nominal"] * 4)
    level_probs: list[tuple[float, ...]] | None = None
    n_replicates: int = 10
    seed: int = 2024

    def __post_init__(self):
        if len(self.effects) != len(self.scales):
            raise ValueError("one scale per covariate required")
        if self.level_probs is None:
            self.level_probs = [PROBS_8 if len(b) == 7 else PROBS_4 for b in self.effects]
        for b, pr in zip(self.effects, self.level_probs):
            if len(pr) != len(b) + 1:
                raise ValueError("level probabilities must cover baseline plus every effect")
            if not np.isclose(sum(pr), 1.0):
                raise ValueError("level probabilities must sum to 1")

    @property
    def specs(self) -> tuple[CovariateSpec, ...]:
        return tuple(
            CovariateSpec(f"x{h + 1}", tuple(str(k) for k in range(len(b) + 1)), s)
            for h, (b, s) in enumerate(zip(self.effects, self.scales))
        )

    def level_effects(self) -> list[np.ndarray]:
        return [np.concatenate([[0.0], np.asarray(b, float)]) for b in self.effects]

    def coef_vector(self) -> np.ndarray:
        return np.concatenate([[self.intercept]] + [np.asarray(b, float) for b in self.effects])


@dataclass
class SimulatedData:
    design: DesignMatrix
    y: np.ndarray


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _draw(sim: SimulationDesign, n: int, rng: np.random.Generator, noise: bool,
          check_rank: bool = True, noise_rng: np.random.Generator | None = None) -> SimulatedData:
    codes = np.column_stack([rng.choice(len(pr), size=n, p=pr) for pr in sim.level_probs])
    design = design_from_codes(codes, sim.specs, check_rank)
    eps = (noise_rng or rng).standard_normal(n) * sim.error_sd
    y = design.X @ sim.coef_vector() + (eps if noise else 0.0)
    return SimulatedData(design, y)


def generate_dataset(sim: SimulationDesign, replicate: int, noise: bool = True) -> SimulatedData:
    """Replicate ``replicate`` under the design's master seed.

    Covariate draws depend only on ``(seed, replicate)``, so every
    hyperparameter setting sees the same design matrix for a replicate.
    """
    return _draw(sim, sim.n, _stream(sim.seed, 0, replicate), noise)


def generate_prediction_sample(sim: SimulationDesign, replicate: int) -> SimulatedData:
    """``n_new`` new observations: regressors shared by all replicates, fresh noise each."""
    return _draw(sim, sim.n_new, _stream(sim.seed, 1), True, check_rank=False,
                 noise_rng=_stream(sim.seed, 1, replicate))


@dataclass(frozen=True)
class SelectionTruth:
    positives: frozenset
    negatives: frozenset

    @classmethod
    def from_effects(cls, spec: CovariateSpec, effects: Sequence[float]) -> "SelectionTruth":
        pos, neg = set(), set()
        for k, j in spec.pairs:
            (pos if effects[k] != effects[j] else neg).add((k, j))
        return cls(frozenset(pos), frozenset(neg))


@dataclass
class SelectionMetrics:
    tp: int
    fn: int
    tn: int
    fp: int

    @staticmethod
    def _rate(num: int, den: int) -> float | None:
        return 100.0 * num / den if den else None

    @property
    def tpr(self):
        return self._rate(self.tp, self.tp + self.fn)

    @property
    def tnr(self):
        return self._rate(self.tn, self.tn + self.fp)

    @property
    def ppv(self):
        return self._rate(self.tp, self.tp + self.fp)

    @property
    def npv(self):
        return self._rate(self.tn, self.tn + self.fn)


def selection_metrics(partition: Partition, truth: SelectionTruth) -> SelectionMetrics:
    """A pair counts as fused when both levels share a cluster.

    True positives are non-zero differences kept apart; true negatives are
    zero differences fused.
    """
    tp = sum(not partition.same(k, j) for k, j in truth.positives)
    tn = sum(partition.same(k, j) for k, j in truth.negatives)
    return SelectionMetrics(tp=tp, fn=len(truth.positives) - tp, tn=tn, fp=len(truth.negatives) - tn)


def mse(estimate: Sequence[float], truth: Sequence[float]) -> float:
    """Mean squared error over the non-baseline levels (inputs exclude the baseline)."""
    est, tru = np.asarray(estimate, float), np.asarray(truth, float)
    if est.shape != tru.shape:
        raise ValueError("estimate and truth must have the same length")
    return float(np.mean((est - tru) ** 2))


def mspe(predictions: np.ndarray, response: np.ndarray) -> float:
    pred, z = np.asarray(predictions, float), np.asarray(response, float)
    return float(np.mean((z - pred) ** 2))


@dataclass(frozen=True)
class StudySetting:
    name: str = "default"
    r: float = 20000.0
    g0: float = 5.0
    G0_nominal: float = 2.0
    G0_ordinal: float = 20.0
    G0_lambda: float | None = None

    def hyper_for(self, spec: CovariateSpec) -> HyperParams:
        G0 = self.G0_nominal if spec.scale is Scale.NOMINAL else self.G0_ordinal
        return HyperParams(r=self.r, g0=self.g0, G0=G0, G0_lambda=self.G0_lambda)


@dataclass
class RefitOptions:
    B0: float = 10000.0
    n_iter: int = 3000
    n_burnin: int = 1000


@dataclass
class ReplicateResult:
    replicate: int
    setting: str
    partitions: list[tuple[int, ...]]
    metrics: list[SelectionMetrics]
    mse: dict[str, list[float]]
    mspe: dict[str, float]

    @property
    def excluded(self) -> list[bool]:
        return [max(p) == 0 for p in self.partitions]


def _child_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, np.uint64)[0])


def run_replicate(sim: SimulationDesign, config: SamplerConfig, setting: StudySetting,
                  setting_index: int, replicate: int, refit: RefitOptions | None = None,
                  baselines: bool = True) -> ReplicateResult:
    refit = refit or RefitOptions()
    data = generate_dataset(sim, replicate)
    new = generate_prediction_sample(sim, replicate)
    specs = sim.specs
    truth_effects = sim.level_effects()
    hyper = [setting.hyper_for(s) for s in specs]
    cfg = replace(config, seed=_child_seed(sim.seed, 2, replicate, setting_index))
    draws = run_chain(data.design, data.y, hyper, cfg)
    _, parts = select_partitions(draws)
    refit_seed = _child_seed(sim.seed, 3, replicate)
    fits = {"fusion": refit_selected(data.design, data.y, parts, refit.B0, refit.n_iter,
                                     refit.n_burnin, refit_seed)}
    if baselines:
        full = [Partition.singletons(s.c + 1) for s in specs]
        true = [Partition.from_effects(e) for e in truth_effects]
        for name, pp in (("full", full), ("true", true)):
            fits[name] = refit_selected(data.design, data.y, pp, refit.B0, refit.n_iter,
                                        refit.n_burnin, refit_seed)
    errors = {
        name: [mse(est[1:], tru[1:]) for est, tru in zip(fit.level_effects(), truth_effects)]
        for name, fit in fits.items()
    }
    pred = {name: mspe(fit.predict(new.design), new.y) for name, fit in fits.items()}
    pred["oracle"] = mspe(new.design.X @ sim.coef_vector(), new.y)
    metrics = [selection_metrics(p, SelectionTruth.from_effects(s, e))
               for p, s, e in zip(parts, specs, truth_effects)]
    return ReplicateResult(replicate, setting.name, [p.labels for p in parts], metrics, errors, pred)


def _job(args):
    return run_replicate(*args)


@dataclass
class StudyReport:
    results: list[ReplicateResult]
    settings: list[StudySetting]
    specs: tuple[CovariateSpec, ...]

    def for_setting(self, name: str) -> list[ReplicateResult]:
        return [r for r in self.results if r.setting == name]

    def metrics_table(self) -> list[dict]:
        """Replicate-averaged selection rates per (setting, covariate)."""
        rows = []
        for st in self.settings:
            res = self.for_setting(st.name)
            for h, spec in enumerate(self.specs):
                row = {"setting": st.name, "covariate": spec.name, "n_replicates": len(res)}
                for key in ("tpr", "tnr", "ppv", "npv"):
                    vals = [getattr(r.metrics[h], key) for r in res]
                    vals = [v for v in vals if v is not None]
                    row[key.upper()] = float(np.mean(vals)) if vals else None
                row["FNR"] = None if row["TPR"] is None else 100.0 - row["TPR"]
                row["FPR"] = None if row["TNR"] is None else 100.0 - row["TNR"]
                row["n_excluded"] = sum(r.excluded[h] for r in res)
                rows.append(row)
        return rows

    def error_table(self) -> list[dict]:
        rows = []
        for r in self.results:
            for method, vals in r.mse.items():
                for spec, v in zip(self.specs, vals):
                    rows.append({"setting": r.setting, "replicate": r.replicate,
                                 "covariate": spec.name, "method": method, "mse": v,
                                 "mspe": None})
            for method, v in r.mspe.items():
                rows.append({"setting": r.setting, "replicate": r.replicate, "covariate": "all",
                             "method": method, "mse": None, "mspe": v})
        return rows

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        _write_rows(directory / "metrics.csv", self.metrics_table(),
                    ["setting", "covariate", "TPR", "TNR", "PPV", "NPV", "FNR", "FPR",
                     "n_excluded", "n_replicates"])
        _write_rows(directory / "errors.csv", self.error_table(),
                    ["setting", "replicate", "covariate", "method", "mse", "mspe"])
        parts = [{"setting": r.setting, "replicate": r.replicate, "covariate": s.name,
                  "partition": " ".join(map(str, p))}
                 for r in self.results for s, p in zip(self.specs, r.partitions)]
        _write_rows(directory / "partitions.csv", parts,
                    ["setting", "replicate", "covariate", "partition"])


def _write_rows(path: Path, rows: list[dict], fields: list[str]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else
                                 repr(row[k]) if isinstance(row[k], float) else row[k])
                             for k in fields})


def run_study(sim: SimulationDesign, config: SamplerConfig,
              settings: Sequence[StudySetting] = (StudySetting(),),
              refit: RefitOptions | None = None, max_workers: int = 1,
              baselines: bool = True) -> StudyReport:
    """Loop replicates x settings. Output does not depend on ``max_workers``."""
    settings = list(settings)
    jobs = [(sim, config, st, i, rep, refit, baselines)
            for i, st in enumerate(settings) for rep in range(sim.n_replicates)]
    if max_workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = []
        for job in jobs:
            logger.info("setting %s replicate %d", job[2].name, job[4])
            results.append(_job(job))
    return StudyReport(results, settings, sim.specs)


def study_settings_to_dict(settings: Sequence[StudySetting]) -> list[dict]:
    return [asdict(s) for s in settings]
