"""Independent estimators used to cross-check the bound formulas."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .scenario_engine import RADEMACHER, substream


@dataclass(frozen=True)
class RademacherEstimate:
    estimate: float
    stderr: float
    draws: int
    candidates: int

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "draws": self.draws,
                "candidates": self.candidates}


def rademacher_signs(n: int, draws: int, seed: int) -> np.ndarray:
    rng = substream(seed, RADEMACHER)
    return rng.choice(np.array([-1.0, 1.0]), size=(draws, n))


def candidate_values(chain, scenarios, candidate_xs) -> np.ndarray:
    """Matrix of f(x_j, theta_i): one row per candidate."""
    thetas = np.atleast_2d(np.asarray(getattr(scenarios, "thetas", scenarios), float))
    prep = chain.prepare(thetas)
    return np.array([chain.values(x, prep) for x in np.atleast_2d(candidate_xs)])


def rademacher_from_values(values, sigma_draws: int, seed: int, signs=None) -> RademacherEstimate:
    """Monte-Carlo E_sigma max_rows (1/N) sum_i sigma_i v_i over a finite class."""
    values = np.atleast_2d(np.asarray(values, float))
    if values.shape[0] == 0:
        raise ValueError("candidate set is empty")
    if sigma_draws < 1:
        raise ValueError("need at least one sigma draw")
    if signs is None:
        signs = rademacher_signs(values.shape[1], sigma_draws, seed)
    sups = K.sup_correlations(values, signs)
    se = float(np.std(sups, ddof=1) / math.sqrt(sups.size)) if sups.size > 1 else 0.0
    return RademacherEstimate(math.fsum(sups) / sups.size, se, sups.size, values.shape[0])


def estimate_empirical_rademacher(chain, scenarios, candidate_xs, sigma_draws: int,
                                  seed: int) -> RademacherEstimate:
    """Lower-bound witness for the empirical Rademacher complexity of the chain class.

    The sup runs over the finite ``candidate_xs`` only, so up to Monte-Carlo error
    the estimate sits below the true value over the whole domain.
    """
    return rademacher_from_values(candidate_values(chain, scenarios, candidate_xs), sigma_draws, seed)


def candidate_grid(domain, count: int, seed: int = 0) -> np.ndarray:
    """Uniform grid of about ``count`` points for dim <= 3, Latin hypercube otherwise."""
    lo, hi = domain.lower, domain.upper
    if not domain.bounded:
        raise ValueError("candidate grids need a bounded domain")
    d = domain.dim
    if d <= 3:
        per = max(1, int(round(count ** (1.0 / d))))
        axes = [np.linspace(lo[i], hi[i], per) for i in range(d)]
        pts = np.array(list(itertools.product(*axes)))
    else:
        rng = substream(seed, RADEMACHER, 1)
        u = (np.argsort(rng.random((d, count)), axis=1).T + rng.random((count, d))) / count
        pts = lo + (hi - lo) * u
    return np.array([domain.project(p) for p in pts])


@dataclass(frozen=True)
class CoverReport:
    epsilon: float
    size: int
    candidates: int
    centers: tuple
    metric: str = "sup-over-scenarios"

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "size": self.size, "candidates": self.candidates,
                "centers": list(self.centers), "metric": self.metric}


def sup_distance(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def greedy_cover(values, epsilon: float) -> CoverReport:
    """Proper epsilon-net (strict < epsilon) from a farthest-point traversal.

    The net is the shortest traversal prefix whose covering radius drops below
    epsilon. Its points are pairwise >= epsilon apart before the last pick, so the
    size at scale 2 epsilon never exceeds any (improper) epsilon-net, and it is
    nonincreasing in epsilon.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    values = np.atleast_2d(np.asarray(values, float))
    if values.size == 0:
        raise ValueError("empty function matrix")
    order, radii = K.farthest_point(values)
    size = int(np.argmax(radii < epsilon)) + 1
    return CoverReport(epsilon, size, values.shape[0], tuple(int(i) for i in order[:size]))


def exact_violation_circle(x) -> float:
    """P{theta . x > 1} for theta uniform on the unit circle."""
    r = float(np.linalg.norm(x))
    if r <= 1:
        return 0.0
    return math.acos(1 / r) / math.pi
