"""Scenario sampling, seeded substreams and Monte-Carlo violation estimates."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import beta

# substream purposes
SCENARIOS, VALIDATION, SOLVER, RADEMACHER, COVERAGE, CONSTANTS = range(6)

MC_BLOCK = 1 << 16


def substream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based (Philox) generator for the substream ``key`` of a master seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class DistributionSpec:
    kind: str  # sphere | box | gaussian | empirical
    dim: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    mean: np.ndarray | None = None
    sigma: float = 1.0
    rows: np.ndarray | None = None
    path: str | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("distribution dimension must be positive")
        if self.kind == "box":
            lo, hi = np.asarray(self.lower, float).ravel(), np.asarray(self.upper, float).ravel()
            if lo.size != self.dim or hi.size != self.dim or np.any(lo > hi) or not np.all(np.isfinite(lo + hi)):
                raise ValueError("uniform box needs finite bounds lower <= upper of the stated dimension")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        elif self.kind == "gaussian":
            mean = np.zeros(self.dim) if self.mean is None else np.asarray(self.mean, float).ravel()
            if mean.size != self.dim:
                raise ValueError("gaussian mean has the wrong dimension")
            if not self.sigma > 0:
                raise ValueError("gaussian sigma must be positive")
            object.__setattr__(self, "mean", mean)
        elif self.kind == "empirical":
            rows = np.atleast_2d(np.asarray(self.rows, float))
            if rows.size == 0 or rows.shape[1] != self.dim:
                raise ValueError("finite-empirical distribution needs a nonempty table of the stated dimension")
            object.__setattr__(self, "rows", rows)
        elif self.kind != "sphere":
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def sphere(cls, dim: int) -> "DistributionSpec":
        return cls("sphere", dim)

    @classmethod
    def box(cls, lower, upper) -> "DistributionSpec":
        lower = np.asarray(lower, float).ravel()
        return cls("box", lower.size, lower=lower, upper=upper)

    @classmethod
    def gaussian(cls, mean, sigma: float) -> "DistributionSpec":
        mean = np.asarray(mean, float).ravel()
        return cls("gaussian", mean.size, mean=mean, sigma=float(sigma))

    @classmethod
    def empirical(cls, rows, path=None) -> "DistributionSpec":
        rows = np.atleast_2d(np.asarray(rows, float))
        return cls("empirical", rows.shape[1], rows=rows, path=None if path is None else str(path))

    @classmethod
    def from_file(cls, path) -> "DistributionSpec":
        return cls.empirical(read_scenario_csv(path), path)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "sphere":
            z = rng.standard_normal((n, self.dim))
            return z / np.linalg.norm(z, axis=1, keepdims=True)
        if self.kind == "box":
            return self.lower + (self.upper - self.lower) * rng.random((n, self.dim))
        if self.kind == "gaussian":
            return self.mean + self.sigma * rng.standard_normal((n, self.dim))
        return self.rows[rng.integers(0, self.rows.shape[0], size=n)]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dim": self.dim}
        if self.kind == "box":
            d.update(lower=self.lower.tolist(), upper=self.upper.tolist())
        elif self.kind == "gaussian":
            d.update(mean=self.mean.tolist(), sigma=self.sigma)
        elif self.kind == "empirical":
            if self.path is not None:
                d["file"] = self.path
            else:
                d["rows"] = self.rows.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "DistributionSpec":
        kind = d.get("kind")
        if kind == "sphere":
            return cls.sphere(int(d["dim"]))
        if kind == "box":
            return cls.box(d["lower"], d["upper"])
        if kind == "gaussian":
            return cls.gaussian(d["mean"], d["sigma"])
        if kind == "empirical":
            if "file" in d:
                p = Path(d["file"])
                if base is not None and not p.is_absolute():
                    p = base / p
                return cls.from_file(p)
            return cls.empirical(d["rows"])
        raise ValueError(f"unknown distribution kind {kind!r}")


def read_scenario_csv(path) -> np.ndarray:
    """Finite-empirical scenario file: a header naming the columns, then one theta per row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: missing header row")
        rows = [[float(v) for v in r] for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no scenario rows")
    if any(len(r) != len(header) for r in rows):
        raise ValueError(f"{path}: every row must have {len(header)} columns")
    return np.array(rows)


def write_scenario_csv(path, thetas) -> None:
    thetas = np.atleast_2d(thetas)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"theta_{j}" for j in range(thetas.shape[1])])
        for row in thetas:
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    thetas: np.ndarray
    seed: int | None = None
    dist: DistributionSpec | None = None
    stream: tuple = ()

    def __post_init__(self):
        T = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        if T.shape[0] < 1:
            raise ValueError("a scenario set needs at least one scenario")
        T.setflags(write=False)
        object.__setattr__(self, "thetas", T)

    @property
    def n(self) -> int:
        return self.thetas.shape[0]

    def __len__(self):
        return self.n


def sample_scenarios(dist: DistributionSpec, n: int, seed: int, stream: tuple = ()) -> ScenarioSet:
    """N i.i.d. draws; bit-identical for identical (dist, n, seed, stream)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = substream(seed, SCENARIOS, *stream)
    return ScenarioSet(dist.draw(rng, int(n)), seed, dist, tuple(stream))


def clopper_pearson(k: int, m: int, alpha: float) -> tuple[float, float]:
    """Exact two-sided binomial interval at level 1 - alpha."""
    lo = 0.0 if k == 0 else float(beta.ppf(alpha / 2, k, m - k + 1))
    hi = 1.0 if k == m else float(beta.ppf(1 - alpha / 2, k + 1, m - k))
    return lo, hi


@dataclass(frozen=True)
class ViolationEstimate:
    estimate: float
    m: int
    violations: int
    lower: float
    upper: float
    alpha: float
    seed: int

    @property
    def stderr(self) -> float:
        return math.sqrt(max(self.estimate * (1 - self.estimate), 0.0) / self.m)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "m": self.m, "violations": self.violations,
                "interval": [self.lower, self.upper], "alpha": self.alpha, "seed": self.seed}


def monte_carlo_violation(chain, x, dist: DistributionSpec, m: int, seed: int, alpha: float = 0.05,
                          workers: int = 1, stream: tuple = ()) -> ViolationEstimate:
    """Fraction of fresh draws with f(x, theta) > 0, plus an exact binomial interval.

    Block b of MC_BLOCK draws uses substream (VALIDATION, *stream, b), so the
    result does not depend on ``workers``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if m < 1:
        raise ValueError("m must be >= 1")
    x = np.asarray(x, float)
    sizes = [min(MC_BLOCK, m - s) for s in range(0, m, MC_BLOCK)]

    def block(b):
        rng = substream(seed, VALIDATION, *stream, b)
        return int(np.count_nonzero(chain.evaluate_many(x, dist.draw(rng, sizes[b])) > 0))

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            counts = list(pool.map(block, range(len(sizes))))
    else:
        counts = [block(b) for b in range(len(sizes))]
    k = sum(counts)
    lo, hi = clopper_pearson(k, m, alpha)
    return ViolationEstimate(k / m, m, k, lo, hi, alpha, seed)
