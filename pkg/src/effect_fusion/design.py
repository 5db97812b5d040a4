"""Categorical covariate specs, dummy coding and posterior propriety checks."""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "N/A", "null", "."})


class Scale(str, enum.Enum):
    NOMINAL = "nominal-unrestricted"
    ORDINAL = "ordinal-adjacent"
    SELECTION = "selection-only"

    @classmethod
    def parse(cls, value: "Scale | str") -> "Scale":
        if isinstance(value, cls):
            return value
        aliases = {
            "nominal": cls.NOMINAL,
            "ordinal": cls.ORDINAL,
            "selection": cls.SELECTION,
            "variable-selection": cls.SELECTION,
        }
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown scale type {value!r}") from None


@dataclass(frozen=True)
class FusionPattern:
    """Level pairs ``(k, j)``, ``0 <= j < k <= c``, whose difference may be fused.

    Pairs are kept sorted by ``(k, j)``; this order is also the order in which
    indicators are stored and sampled.
    """

    c: int
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.c < 1:
            raise ValueError("a covariate needs at least two levels (c >= 1)")
        seen = set()
        for k, j in self.pairs:
            if not (0 <= j < k <= self.c):
                raise ValueError(f"pair {(k, j)} outside 0 <= j < k <= {self.c}")
            if (k, j) in seen:
                raise ValueError(f"duplicate pair {(k, j)}")
            seen.add((k, j))
        object.__setattr__(self, "pairs", tuple(sorted(self.pairs)))

    @classmethod
    def nominal(cls, c: int) -> "FusionPattern":
        return cls(c, tuple((k, j) for k in range(1, c + 1) for j in range(k)))

    @classmethod
    def ordinal(cls, c: int) -> "FusionPattern":
        return cls(c, tuple((k, k - 1) for k in range(1, c + 1)))

    @classmethod
    def selection(cls, c: int) -> "FusionPattern":
        return cls(c, tuple((k, 0) for k in range(1, c + 1)))

    @classmethod
    def for_scale(cls, scale: Scale | str, c: int) -> "FusionPattern":
        scale = Scale.parse(scale)
        return {
            Scale.NOMINAL: cls.nominal,
            Scale.ORDINAL: cls.ordinal,
            Scale.SELECTION: cls.selection,
        }[scale](c)

    @property
    def d(self) -> int:
        return len(self.pairs)

    def index(self, k: int, j: int) -> int:
        try:
            return self.pairs.index((k, j))
        except ValueError:
            raise KeyError(f"pair {(k, j)} is not fusable under this pattern") from None

    def is_connected(self) -> bool:
        """True when the pair graph on levels ``0..c`` is connected."""
        parent = list(range(self.c + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for k, j in self.pairs:
            parent[find(k)] = find(j)
        return len({find(a) for a in range(self.c + 1)}) == 1

    def difference_matrix(self) -> np.ndarray:
        """``(d, c)`` matrix mapping level effects to pairwise differences.

        Row for ``(k, j)`` is ``e_k - e_j`` over levels ``1..c``; the baseline
        column is dropped since its effect is pinned to zero.
        """
        D = np.zeros((self.d, self.c))
        for row, (k, j) in enumerate(self.pairs):
            D[row, k - 1] = 1.0
            if j > 0:
                D[row, j - 1] = -1.0
        return D


@dataclass(frozen=True)
class CovariateSpec:
    """One categorical predictor. ``levels[0]`` is the baseline."""

    name: str
    levels: tuple[str, ...]
    scale: Scale = Scale.NOMINAL
    fusion_pattern: FusionPattern | None = None
    frozen_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        levels = tuple(str(v) for v in self.levels)
        if len(levels) < 2:
            raise ValueError(f"covariate {self.name!r}: at least two levels required")
        if len(set(levels)) != len(levels):
            raise ValueError(f"covariate {self.name!r}: level labels must be unique")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "scale", Scale.parse(self.scale))
        if self.fusion_pattern is None:
            object.__setattr__(
                self, "fusion_pattern", FusionPattern.for_scale(self.scale, self.c)
            )
        elif self.fusion_pattern.c != self.c:
            raise ValueError(f"covariate {self.name!r}: fusion pattern size mismatch")
        frozen = tuple(sorted(tuple(int(x) for x in p) for p in self.frozen_pairs))
        for p in frozen:
            if p not in self.fusion_pattern.pairs:
                raise ValueError(f"covariate {self.name!r}: frozen pair {p} is not fusable")
        object.__setattr__(self, "frozen_pairs", frozen)

    @property
    def c(self) -> int:
        return len(self.levels) - 1

    @property
    def gamma(self) -> float:
        # c/2 keeps the partial precision range independent of c for nominal
        # covariates; restricted patterns have maximum diagonal 2r and use 1.
        return self.c / 2.0 if self.scale is Scale.NOMINAL else 1.0

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return self.fusion_pattern.pairs

    @property
    def frozen_mask(self) -> np.ndarray:
        frozen = set(self.frozen_pairs)
        return np.array([p in frozen for p in self.pairs], dtype=bool)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "levels": list(self.levels),
            "scale": self.scale.value,
            "pairs": [list(p) for p in self.pairs],
            "frozen_pairs": [list(p) for p in self.frozen_pairs],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CovariateSpec":
        levels = tuple(data["levels"])
        pattern = None
        if data.get("pairs") is not None:
            pattern = FusionPattern(
                len(levels) - 1, tuple(tuple(int(x) for x in p) for p in data["pairs"])
            )
        return cls(
            name=data["name"],
            levels=levels,
            scale=data.get("scale", Scale.NOMINAL),
            fusion_pattern=pattern,
            frozen_pairs=tuple(tuple(p) for p in data.get("frozen_pairs", ())),
        )


def spec_hash(specs: Sequence[CovariateSpec]) -> str:
    payload = json.dumps([s.to_dict() for s in specs], sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class DesignMatrix:
    """Intercept column followed by one dummy block per covariate.

    ``column_map[i]`` is ``(h, k)`` for dummy columns and ``(-1, 0)`` for the
    intercept.
    """

    X: np.ndarray
    column_map: list[tuple[int, int]]
    specs: tuple[CovariateSpec, ...]
    codes: np.ndarray | None = field(default=None, repr=False)
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return sum(s.c for s in self.specs)

    def block(self, h: int) -> slice:
        start = 1 + sum(s.c for s in self.specs[:h])
        return slice(start, start + self.specs[h].c)

    def level_effects(self, beta: np.ndarray) -> list[np.ndarray]:
        """Split a coefficient vector into per-covariate effects incl. baseline 0."""
        beta = np.asarray(beta, dtype=float)
        out = [np.zeros(s.c + 1) for s in self.specs]
        for col, (h, k) in enumerate(self.column_map):
            if h >= 0:
                out[h][k] = beta[col]
        return out


def encode_levels(values: Sequence, spec: CovariateSpec, column: str | None = None) -> np.ndarray:
    """Map labels to level indices, raising on labels outside ``spec.levels``."""
    lookup = {label: i for i, label in enumerate(spec.levels)}
    codes = np.empty(len(values), dtype=np.int64)
    for row, v in enumerate(values):
        key = v if isinstance(v, str) else _label(v)
        try:
            codes[row] = lookup[key]
        except KeyError:
            raise DataError(
                f"unknown level {v!r} in column {column or spec.name!r}, row {row + 1}"
            ) from None
    return codes


def _label(v) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


def design_from_codes(codes: np.ndarray, specs: Sequence[CovariateSpec],
                      check_rank: bool = True) -> DesignMatrix:
    """Dummy-code an ``(n, p)`` array of level indices (0 = baseline).

    ``check_rank=False`` skips the identifiability checks, for prediction data.
    """
    codes = np.asarray(codes, dtype=np.int64)
    specs = tuple(specs)
    if codes.ndim != 2 or codes.shape[1] != len(specs):
        raise DataError(f"expected codes of shape (n, {len(specs)}), got {codes.shape}")
    n = codes.shape[0]
    q = sum(s.c for s in specs)
    X = np.zeros((n, 1 + q))
    X[:, 0] = 1.0
    column_map: list[tuple[int, int]] = [(-1, 0)]
    col = 1
    for h, spec in enumerate(specs):
        lv = codes[:, h]
        if lv.min(initial=0) < 0 or lv.max(initial=0) > spec.c:
            raise DataError(f"covariate {spec.name!r}: level index out of range")
        counts = np.bincount(lv, minlength=spec.c + 1)
        unobserved = [spec.levels[k] for k in range(1, spec.c + 1) if counts[k] == 0]
        if unobserved and check_rank:
            raise DataError(
                f"covariate {spec.name!r}: levels {unobserved} are never observed; "
                "their effects would be unidentified"
            )
        rows = np.flatnonzero(lv > 0)
        X[rows, col + lv[rows] - 1] = 1.0
        column_map.extend((h, k) for k in range(1, spec.c + 1))
        col += spec.c
    design = DesignMatrix(X=X, column_map=column_map, specs=specs, codes=codes)
    if n > 0 and check_rank:
        rank = np.linalg.matrix_rank(X)
        if rank < X.shape[1]:
            raise DataError(
                f"design matrix is rank deficient (rank {rank} < {X.shape[1]} columns); "
                "some levels are confounded across covariates"
            )
    return design


def build_design(columns: Mapping[str, Sequence] | Sequence[Sequence],
                 specs: Sequence[CovariateSpec], check_rank: bool = True) -> DesignMatrix:
    """Dummy-code raw label columns, one per spec (looked up by name if a mapping)."""
    specs = tuple(specs)
    if isinstance(columns, Mapping):
        cols = [columns[s.name] for s in specs]
    else:
        cols = list(columns)
    codes = np.column_stack([encode_levels(list(v), s) for v, s in zip(cols, specs)])
    return design_from_codes(codes, specs, check_rank)


def ingest_csv(path: str | Path, response_column: str,
               covariate_specs: Sequence[CovariateSpec]) -> tuple[DesignMatrix, np.ndarray]:
    """Read a header-first CSV and return the dummy-coded design and response.

    Rows with a missing value in any used column are dropped (listwise
    deletion); the count is logged.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    specs = tuple(covariate_specs)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row expected") from None
        used = [response_column] + [s.name for s in specs]
        missing_cols = [c for c in used if c not in header]
        if missing_cols:
            raise DataError(f"{path}: columns not found: {missing_cols}")
        idx = [header.index(c) for c in used]
        rows = []
        dropped = 0
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            cells = [raw[i].strip() if i < len(raw) else "" for i in idx]
            if any(c in MISSING_TOKENS for c in cells):
                dropped += 1
                continue
            rows.append((lineno, cells))
    if dropped:
        logger.info("dropped %d rows with missing values", dropped)
    y = np.empty(len(rows))
    codes = np.empty((len(rows), len(specs)), dtype=np.int64)
    lookups = [{label: i for i, label in enumerate(s.levels)} for s in specs]
    for r, (lineno, cells) in enumerate(rows):
        try:
            y[r] = float(cells[0])
        except ValueError:
            raise DataError(
                f"{path}, line {lineno}: response {cells[0]!r} is not a real number"
            ) from None
        for h, (label, lookup) in enumerate(zip(cells[1:], lookups)):
            try:
                codes[r, h] = lookup[label]
            except KeyError:
                raise DataError(
                    f"{path}, line {lineno}: unknown level {label!r} in column "
                    f"{specs[h].name!r}"
                ) from None
    design = design_from_codes(codes, specs)
    design.n_dropped = dropped
    return design, y


@dataclass
class ProprietyReport:
    conditions: dict[str, bool]
    sse: float
    n: int
    q: int
    t: int

    @property
    def ok(self) -> bool:
        return all(self.conditions.values())

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "conditions": dict(self.conditions),
            "sse": self.sse,
            "n": self.n,
            "q": self.q,
            "t": self.t,
        }


def check_propriety(design: DesignMatrix, hyper: Sequence[tuple[float, float]],
                    s0: float = 0.0, S0: float = 0.0,
                    y: np.ndarray | None = None) -> ProprietyReport:
    """Sufficient conditions for a proper posterior under a flat intercept prior.

    ``hyper`` holds ``(g_h0, G_h0)`` per covariate. With the intercept as the
    only fixed effect, ``t`` is the rank of the intercept-projected dummy block.
    ``sse`` is the residual sum of squares of the least-squares fit when ``y``
    is supplied, and NaN otherwise.
    """
    hyper = list(hyper)
    if len(hyper) != len(design.specs):
        raise ValueError("one (g0, G0) pair per covariate required")
    n, f = design.n, 1
    q = design.q
    Xb = design.X[:, 1:]
    try:
        centered = Xb - Xb.mean(axis=0) if n else Xb
        t = int(np.linalg.matrix_rank(centered.T @ centered)) if n else 0
    except np.linalg.LinAlgError as exc:
        raise DataError(f"rank computation failed: {exc}") from exc
    conditions = {
        "a_G0_positive": all(G0 > 0 for _, G0 in hyper),
        "b_shape": all(s.c + 2 * g0 > q - t for s, (g0, _) in zip(design.specs, hyper)),
        "c_residual_dof": n - f + 2 * s0 > 0,
    }
    sse = float("nan")
    if y is not None and n:
        beta, *_ = np.linalg.lstsq(design.X, y, rcond=None)
        sse = float(np.sum((y - design.X @ beta) ** 2))
        # an exact fit leaves only rounding residue; count it as zero
        if sse <= 1e-20 * n * max(float(y @ y), 1.0):
            sse = 0.0
        conditions["sse_positive"] = 2 * S0 + sse > 0
    return ProprietyReport(conditions=conditions, sse=sse, n=n, q=q, t=t)


def standardize(y: Iterable[float]) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    sd = y.std(ddof=1)
    if not np.isfinite(sd) or sd == 0:
        raise DataError("cannot standardize a constant response")
    return (y - y.mean()) / sd
