"""Model selection: posterior similarity, Binder loss minimisation and refit."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

from .design import CovariateSpec, DesignMatrix, Scale, spec_hash
from .exceptions import DataError, NumericalError, ProvenanceError
from .gibbs import PosteriorDraws

EXACT_MAX_ITEMS = 11
TIE_TOL = 1e-12


@dataclass(frozen=True)
class Partition:
    """Cluster label per level ``0..c`` in restricted-growth form (level 0 gets 0)."""

    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", canonical_labels(self.labels))

    @classmethod
    def singletons(cls, n_items: int) -> "Partition":
        return cls(tuple(range(n_items)))

    @classmethod
    def single(cls, n_items: int) -> "Partition":
        return cls((0,) * n_items)

    @classmethod
    def from_effects(cls, effects: Sequence[float]) -> "Partition":
        """Group levels with identical effects."""
        seen: dict[float, int] = {}
        return cls(tuple(seen.setdefault(float(e), len(seen)) for e in effects))

    @property
    def n_items(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return max(self.labels) + 1

    def clusters(self) -> list[tuple[int, ...]]:
        groups: dict[int, list[int]] = {}
        for item, lab in enumerate(self.labels):
            groups.setdefault(lab, []).append(item)
        return [tuple(groups[k]) for k in sorted(groups)]

    @property
    def baseline_cluster(self) -> tuple[int, ...]:
        return self.clusters()[0]

    @property
    def excluded(self) -> bool:
        """All levels fused with the baseline: the covariate drops out."""
        return self.n_clusters == 1

    def same(self, k: int, j: int) -> bool:
        return self.labels[k] == self.labels[j]

    def is_contiguous(self) -> bool:
        return all(max(c) - min(c) + 1 == len(c) for c in self.clusters())


def canonical_labels(labels: Sequence[int]) -> tuple[int, ...]:
    mapping: dict[int, int] = {}
    return tuple(mapping.setdefault(int(lab), len(mapping)) for lab in labels)


@dataclass
class SimilarityMatrix:
    """Co-fusion frequencies over levels ``0..c`` (baseline included)."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.allclose(pi, pi.T, atol=1e-12):
            raise ValueError("similarity matrix must be symmetric")
        if (pi < -1e-12).any() or (pi > 1 + 1e-12).any():
            raise ValueError("similarity entries must lie in [0, 1]")
        if not np.allclose(np.diag(pi), 1.0):
            raise ValueError("similarity matrix must have a unit diagonal")
        self.pi = pi

    @property
    def n_items(self) -> int:
        return self.pi.shape[0]


def sweep_components(n_items: int, pairs: Sequence[tuple[int, int]], delta: np.ndarray) -> tuple[int, ...]:
    """Connected components of levels joined by spike (``delta == 0``) pairs."""
    parent = list(range(n_items))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (k, j), bit in zip(pairs, delta):
        if bit == 0:
            ra, rb = find(k), find(j)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    return canonical_labels([find(a) for a in range(n_items)])


def similarity_from_delta(spec: CovariateSpec, delta: np.ndarray) -> SimilarityMatrix:
    """Fraction of sweeps in which two levels share a fused component."""
    delta = np.asarray(delta)
    n_items = spec.c + 1
    if delta.shape[0] == 0:
        raise DataError("no draws to compute similarities from")
    patterns, counts = np.unique(delta, axis=0, return_counts=True)
    pi = np.zeros((n_items, n_items))
    for row, count in zip(patterns, counts):
        labels = np.array(sweep_components(n_items, spec.pairs, row))
        pi += count * (labels[:, None] == labels[None, :])
    return SimilarityMatrix(pi / delta.shape[0])


def posterior_similarity(draws: PosteriorDraws | Sequence[PosteriorDraws], h: int) -> SimilarityMatrix:
    if isinstance(draws, PosteriorDraws):
        draws = [draws]
    hashes = {d.spec_hash for d in draws}
    if len(hashes) != 1:
        raise ProvenanceError("draws come from chains with different covariate specs")
    for d in draws:
        d.verify()
    spec = draws[0].specs[h]
    delta = np.vstack([d.delta_block(h) for d in draws])
    return similarity_from_delta(spec, delta)


def binder_objective(pi: np.ndarray | SimilarityMatrix, labels: Sequence[int]) -> float:
    """``sum_{j != k} I{z_k = z_j} (1/2 - pi_kj)`` over ordered pairs."""
    pi = pi.pi if isinstance(pi, SimilarityMatrix) else np.asarray(pi)
    z = np.asarray(labels)
    same = z[:, None] == z[None, :]
    np.fill_diagonal(same, False)
    return float(np.sum(same * (0.5 - pi)))


def expected_binder_loss(pi: np.ndarray | SimilarityMatrix, labels: Sequence[int]) -> float:
    pi = pi.pi if isinstance(pi, SimilarityMatrix) else np.asarray(pi)
    z = np.asarray(labels)
    same = (z[:, None] == z[None, :]).astype(float)
    off = ~np.eye(len(z), dtype=bool)
    return float(np.abs(same - pi)[off].sum())


@lru_cache(maxsize=None)
def set_partitions(n_items: int) -> np.ndarray:
    """All restricted growth strings of length ``n_items``, lexicographic order."""
    rgs = np.zeros((1, 1), dtype=np.int8)
    for _ in range(1, n_items):
        top = rgs.max(axis=1)
        reps = top + 2
        parents = np.repeat(np.arange(rgs.shape[0]), reps)
        starts = np.repeat(np.cumsum(reps) - reps, reps)
        child = (np.arange(parents.shape[0]) - starts).astype(np.int8)
        rgs = np.column_stack([rgs[parents], child])
    rgs.setflags(write=False)
    return rgs


def _pick(objectives: np.ndarray, n_clusters: np.ndarray) -> int:
    """Lowest objective; ties go to fewer clusters, then the earliest labelling."""
    best = objectives.min()
    tied = np.flatnonzero(objectives <= best + TIE_TOL * max(1.0, abs(best)))
    fewest = n_clusters[tied].min()
    return int(tied[n_clusters[tied] == fewest][0])


def minimize_binder_exact(pi: np.ndarray) -> Partition:
    n = pi.shape[0]
    if n > EXACT_MAX_ITEMS:
        raise ValueError(f"exact enumeration limited to {EXACT_MAX_ITEMS} items")
    rgs = set_partitions(n)
    obj = np.zeros(rgs.shape[0])
    for k in range(1, n):
        for j in range(k):
            w = 2.0 * (0.5 - pi[k, j])
            if w != 0.0:
                obj += w * (rgs[:, k] == rgs[:, j])
    idx = _pick(obj, rgs.max(axis=1) + 1)
    return Partition(tuple(int(v) for v in rgs[idx]))


def minimize_binder_contiguous(pi: np.ndarray) -> Partition:
    """Exact interval dynamic program over partitions into runs of adjacent items."""
    n = pi.shape[0]
    w = 2.0 * (0.5 - pi)
    # seg[a, b]: objective of one cluster covering items a..b (inclusive).
    seg = np.zeros((n, n))
    for a in range(n):
        acc = 0.0
        for b in range(a + 1, n):
            acc += w[b, a:b].sum()
            seg[a, b] = acc
    # suffix[i, m]: best objective for items i..n-1 split into m runs.
    inf = np.inf
    suffix = np.full((n + 1, n + 1), inf)
    suffix[n, 0] = 0.0
    for i in range(n - 1, -1, -1):
        for m in range(1, n - i + 1):
            best = inf
            for e in range(i, n):
                val = seg[i, e] + suffix[e + 1, m - 1]
                if val < best:
                    best = val
            suffix[i, m] = best
    totals = suffix[0, 1:]
    best = totals.min()
    tol = TIE_TOL * max(1.0, abs(best))
    m = int(np.flatnonzero(totals <= best + tol)[0]) + 1
    target = suffix[0, m]
    labels = []
    i, lab = 0, 0
    while i < n:
        # Longest first run consistent with the optimum gives the smallest labelling.
        for e in range(n - 1, i - 1, -1):
            if seg[i, e] + suffix[e + 1, m - 1] <= target + tol:
                break
        labels.extend([lab] * (e - i + 1))
        target -= seg[i, e]
        i, m, lab = e + 1, m - 1, lab + 1
    return Partition(tuple(labels))


def _merge_phase(w: np.ndarray, labels: np.ndarray) -> bool:
    """Merge the best pair of clusters while some merge lowers the objective."""
    changed = False
    while True:
        labs = np.unique(labels)
        best_gain, best_pair = -TIE_TOL, None
        for ai, a in enumerate(labs):
            rows = labels == a
            for b in labs[ai + 1:]:
                gain = w[np.ix_(rows, labels == b)].sum()
                if gain < best_gain:
                    best_gain, best_pair = gain, (a, b)
        if best_pair is None:
            return changed
        labels[labels == best_pair[1]] = best_pair[0]
        changed = True


def _move_phase(w: np.ndarray, labels: np.ndarray, max_rounds: int) -> bool:
    """Move single items to another (or a new) cluster while that strictly improves."""
    changed = False
    for _ in range(max_rounds):
        improved = False
        for i in range(labels.shape[0]):
            current = labels[i]
            leave = -w[i, labels == current].sum()
            best_lab, best_delta = current, -TIE_TOL
            for lab in np.unique(labels):
                if lab != current:
                    delta = leave + w[i, labels == lab].sum()
                    if delta < best_delta:
                        best_lab, best_delta = lab, delta
            if np.sum(labels == current) > 1 and leave < best_delta:
                best_lab, best_delta = labels.max() + 1, leave
            if best_lab != current:
                labels[i] = best_lab
                improved = changed = True
        if not improved:
            break
    return changed


def _swap_phase(w: np.ndarray, labels: np.ndarray) -> bool:
    """Exchange two items between clusters when that strictly improves."""
    changed = False
    n = labels.shape[0]
    improved = True
    while improved:
        improved = False
        for i in range(n):
            for j in range(i + 1, n):
                a, b = labels[i], labels[j]
                if a == b:
                    continue
                # i leaves a for b, j leaves b for a; w[i, j] is counted in neither.
                delta = (-w[i, labels == a].sum() + w[i, labels == b].sum() - w[i, j]
                         - w[j, labels == b].sum() + w[j, labels == a].sum() - w[j, i])
                if delta < -TIE_TOL:
                    labels[i], labels[j] = b, a
                    improved = changed = True
    return changed


def _split_phase(w: np.ndarray, labels: np.ndarray, max_size: int = 12) -> bool:
    """Replace a cluster by its best bipartition when that strictly improves."""
    changed = False
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        m = members.shape[0]
        if m < 2 or m > max_size:
            continue
        sub = w[np.ix_(members, members)]
        # Item 0 stays; enumerate which of the rest leave. Removing cross
        # terms changes the objective by -sum over the cut.
        masks = ((np.arange(1, 2 ** (m - 1))[:, None] >> np.arange(m - 1)) & 1).astype(bool)
        side = np.column_stack([np.zeros(len(masks), dtype=bool), masks])
        cut = np.einsum("si,ij,sj->s", side.astype(float), sub, (~side).astype(float))
        best = int(np.argmax(cut))
        if cut[best] > TIE_TOL:
            labels[members[side[best]]] = labels.max() + 1
            changed = True
    return changed


def minimize_binder_greedy(pi: np.ndarray, max_rounds: int = 100, n_restarts: int = 16,
                          seed: int = 0) -> Partition:
    """Agglomerative merging followed by local search.

    Merges, single-item moves, pairwise swaps and cluster bipartitions
    alternate until none improves. The search runs
    from all singletons and from one cluster; the better result wins, using
    the same tie rule as the exact solver.
    """
    n = pi.shape[0]
    w = 2.0 * (0.5 - pi)
    np.fill_diagonal(w, 0.0)
    pairs = [(k, j) for k in range(n) for j in range(k)]
    majority = np.array(sweep_components(n, pairs, np.array([0 if pi[k, j] > 0.5 else 1 for k, j in pairs])))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    starts = [np.arange(n), np.zeros(n, dtype=int), majority]
    starts += [rng.integers(0, max(1, int(np.sqrt(n)) + 1), size=n) for _ in range(n_restarts)]
    candidates = []
    for start in starts:
        labels = start.copy()
        for _ in range(max_rounds):
            merged = _merge_phase(w, labels)
            moved = _move_phase(w, labels, max_rounds)
            swapped = _swap_phase(w, labels)
            split = _split_phase(w, labels)
            if not (merged or moved or swapped or split):
                break
        candidates.append(Partition(tuple(int(v) for v in labels)))
    obj = np.array([binder_objective(pi, p.labels) for p in candidates])
    k = np.array([p.n_clusters for p in candidates])
    best = _pick(obj, k)
    tied = [p for p, o, c in zip(candidates, obj, k) if c == k[best] and o <= obj[best] + TIE_TOL * max(1.0, abs(obj[best]))]
    return min(tied, key=lambda p: p.labels)


def minimize_binder(pi: np.ndarray | SimilarityMatrix, contiguous: bool = False) -> Partition:
    """Partition of levels minimising expected Binder loss (equal costs).

    Ordinal covariates use the exact interval DP; otherwise exact enumeration
    up to 11 items and a greedy search with local moves beyond.
    """
    pi = pi.pi if isinstance(pi, SimilarityMatrix) else np.asarray(pi, dtype=float)
    if contiguous:
        return minimize_binder_contiguous(pi)
    if pi.shape[0] <= EXACT_MAX_ITEMS:
        return minimize_binder_exact(pi)
    return minimize_binder_greedy(pi)


def fused_design(design: DesignMatrix, partitions: Sequence[Partition]) -> tuple[np.ndarray, list[tuple[int, tuple[int, ...]]]]:
    """Collapse dummy columns per cluster; the baseline cluster gets no column."""
    if len(partitions) != len(design.specs):
        raise ValueError("one partition per covariate required")
    cols = [design.X[:, 0]]
    groups: list[tuple[int, tuple[int, ...]]] = [(-1, (0,))]
    for h, (spec, part) in enumerate(zip(design.specs, partitions)):
        if part.n_items != spec.c + 1:
            raise ValueError(f"partition for {spec.name!r} has {part.n_items} items, expected {spec.c + 1}")
        blk = design.X[:, design.block(h)]
        for members in part.clusters()[1:]:
            cols.append(blk[:, [k - 1 for k in members]].sum(axis=1))
            groups.append((h, members))
    return np.column_stack(cols), groups


@dataclass
class RefitResult:
    """Flat-prior fit of a (possibly fused) model.

    ``mean`` holds posterior means of the intercept and one coefficient per
    non-baseline cluster, in the order of ``groups``.
    """

    groups: list[tuple[int, tuple[int, ...]]]
    mean: np.ndarray
    hpd: np.ndarray
    sigma2_mean: float
    specs: tuple[CovariateSpec, ...]
    draws: np.ndarray | None = field(default=None, repr=False)

    @property
    def intercept(self) -> float:
        return float(self.mean[0])

    def level_effects(self) -> list[np.ndarray]:
        out = [np.zeros(s.c + 1) for s in self.specs]
        for (h, members), value in zip(self.groups[1:], self.mean[1:]):
            out[h][list(members)] = value
        return out

    def coef_vector(self) -> np.ndarray:
        """Coefficients on the original dummy coding (intercept first)."""
        return np.concatenate([[self.intercept]] + [e[1:] for e in self.level_effects()])

    def predict(self, design: DesignMatrix) -> np.ndarray:
        return design.X @ self.coef_vector()

    def rows(self) -> list[dict]:
        out = []
        for (h, members), m, (lo, hi) in zip(self.groups, self.mean, self.hpd):
            if h < 0:
                name, levels = "(intercept)", ""
            else:
                spec = self.specs[h]
                name, levels = spec.name, "|".join(spec.levels[k] for k in members)
            out.append({"covariate": name, "cluster_levels": levels, "posterior_mean": float(m),
                        "hpd_lower": float(lo), "hpd_upper": float(hi)})
        return out


def hpd_interval(samples: np.ndarray, prob: float = 0.95) -> tuple[float, float]:
    """Shortest interval containing ``prob`` of the sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.shape[0]
    k = int(np.ceil(prob * n))
    if k >= n:
        return float(x[0]), float(x[-1])
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def fit_flat(X: np.ndarray, y: np.ndarray, B0: float = 10000.0, n_iter: int = 3000,
             n_burnin: int = 1000, seed: int = 0, keep_draws: bool = False):
    """Two-block Gibbs for ``N(0, B0 I)`` coefficients and ``p(sigma2) ~ 1/sigma2``.

    Posterior means are Rao-Blackwellised (average of conditional means).
    Returns ``(mean, hpd, sigma2_mean, draws)``.
    """
    n, dim = X.shape
    if n <= 0:
        raise DataError("refit needs data")
    XtX, Xty = X.T @ X, X.T @ y
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(7,))))
    ls, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ ls
    sigma2 = max(float(resid @ resid) / max(n - dim, 1), 1e-8)
    eye = np.eye(dim) / B0
    betas = np.empty((n_iter, dim))
    cond_means = np.empty((n_iter, dim))
    sig = np.empty(n_iter)
    for it in range(n_burnin + n_iter):
        try:
            L = linalg.cholesky(eye + XtX / sigma2, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"refit precision not positive definite: {exc}") from exc
        mean = linalg.cho_solve((L, True), Xty / sigma2)
        beta = mean + linalg.solve_triangular(L.T, rng.standard_normal(dim), lower=False)
        r = y - X @ beta
        sigma2 = 0.5 * float(r @ r) / rng.gamma(n / 2.0)
        if it >= n_burnin:
            betas[it - n_burnin] = beta
            cond_means[it - n_burnin] = mean
            sig[it - n_burnin] = sigma2
    hpd = np.array([hpd_interval(betas[:, i]) for i in range(dim)])
    return cond_means.mean(axis=0), hpd, float(sig.mean()), (betas if keep_draws else None)


def refit_selected(design: DesignMatrix, response: np.ndarray, partitions: Sequence[Partition],
                   B0: float = 10000.0, n_iter: int = 3000, n_burnin: int = 1000,
                   seed: int = 0, keep_draws: bool = False) -> RefitResult:
    Xf, groups = fused_design(design, partitions)
    rank = np.linalg.matrix_rank(Xf)
    if rank < Xf.shape[1]:
        offending = [
            f"{design.specs[h].name}:{'|'.join(design.specs[h].levels[k] for k in m)}"
            for h, m in groups[1:]
            if np.linalg.matrix_rank(np.delete(Xf, groups.index((h, m)), axis=1)) == rank
        ]
        raise DataError(f"fused design is rank deficient; offending clusters: {offending}")
    mean, hpd, s2, draws = fit_flat(Xf, np.asarray(response, float), B0, n_iter, n_burnin,
                                    seed, keep_draws)
    return RefitResult(groups=groups, mean=mean, hpd=hpd, sigma2_mean=s2,
                       specs=tuple(design.specs), draws=draws)


@dataclass
class CovariateSelection:
    name: str
    levels: list[str]
    similarity: np.ndarray
    partition: Partition
    fusion_prob_adjacent: list[float] | None = None

    @property
    def excluded(self) -> bool:
        return self.partition.excluded


@dataclass
class SelectionReport:
    covariates: list[CovariateSelection]
    refit: list[dict]
    sigma2_mean: float | None
    spec_hash: str

    def to_dict(self) -> dict:
        return {
            "spec_hash": self.spec_hash,
            "sigma2_mean": self.sigma2_mean,
            "covariates": [
                {
                    "name": c.name,
                    "levels": list(c.levels),
                    "similarity": c.similarity.tolist(),
                    "partition": list(c.partition.labels),
                    "clusters": [[c.levels[k] for k in cl] for cl in c.partition.clusters()],
                    "excluded": c.excluded,
                    "fusion_prob_adjacent": c.fusion_prob_adjacent,
                }
                for c in self.covariates
            ],
            "refit": self.refit,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "SelectionReport":
        covs = [
            CovariateSelection(
                name=c["name"], levels=list(c["levels"]),
                similarity=np.array(c["similarity"], dtype=float),
                partition=Partition(tuple(c["partition"])),
                fusion_prob_adjacent=c.get("fusion_prob_adjacent"),
            )
            for c in data["covariates"]
        ]
        return cls(covariates=covs, refit=list(data["refit"]),
                   sigma2_mean=data.get("sigma2_mean"), spec_hash=data["spec_hash"])

    @classmethod
    def from_json(cls, text: str) -> "SelectionReport":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SelectionReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "selection.json").write_text(self.to_json())
        for c in self.covariates:
            with (directory / f"similarity_{_safe(c.name)}.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([""] + c.levels)
                for lv, row in zip(c.levels, c.similarity):
                    writer.writerow([lv] + [repr(float(v)) for v in row])
        with (directory / "refit.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["covariate", "cluster_levels", "posterior_mean",
                                                    "hpd_lower", "hpd_upper"])
            writer.writeheader()
            for row in self.refit:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def select_partitions(draws: PosteriorDraws | Sequence[PosteriorDraws]) -> tuple[list[SimilarityMatrix], list[Partition]]:
    first = draws if isinstance(draws, PosteriorDraws) else draws[0]
    sims, parts = [], []
    for h, spec in enumerate(first.specs):
        sim = posterior_similarity(draws, h)
        sims.append(sim)
        parts.append(minimize_binder(sim, contiguous=spec.scale is Scale.ORDINAL))
    return sims, parts


def selection_report(draws: PosteriorDraws | Sequence[PosteriorDraws],
                     design: DesignMatrix | None = None, response: np.ndarray | None = None,
                     B0: float = 10000.0, refit_iter: int = 3000, refit_burnin: int = 1000,
                     seed: int = 0) -> SelectionReport:
    """Similarity, selected partition and (with data) refit summary per covariate."""
    chains = [draws] if isinstance(draws, PosteriorDraws) else list(draws)
    specs = chains[0].specs
    if design is not None and spec_hash(design.specs) != chains[0].spec_hash:
        raise ProvenanceError("design covariate specs do not match the draws")
    sims, parts = select_partitions(chains)
    covs = []
    for h, (spec, sim, part) in enumerate(zip(specs, sims, parts)):
        adjacent = None
        if spec.scale is Scale.ORDINAL:
            adjacent = [float(1.0 - np.mean(np.vstack([c.delta_block(h) for c in chains])[:, i]))
                        for i in range(spec.fusion_pattern.d)]
        covs.append(CovariateSelection(spec.name, list(spec.levels), sim.pi, part, adjacent))
    refit_rows: list[dict] = []
    sigma2 = None
    if design is not None and response is not None:
        fit = refit_selected(design, response, parts, B0, refit_iter, refit_burnin, seed)
        refit_rows = fit.rows()
        sigma2 = fit.sigma2_mean
    return SelectionReport(covs, refit_rows, sigma2, chains[0].spec_hash)
