"""Heuristic solvers for hard-, soft- and max-margin scenario programs.

All solvers minimize a piecewise-smooth objective by projected subgradient
descent with multistart, then polish with L-BFGS-B on a log-sum-exp smoothing.
Guarantees never depend on optimality: every certificate holds for any point of
the domain, so the solvers only promise domain membership and an honest status.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import expit, logsumexp, softmax

from .certificates import Certificate, margin_complexity, violation_bound
from .constraint_model import ConstraintChain, Domain, lambda_bar, lambda_bar_and_grad
from .margin_risk import MarginSpec, RiskReport, empirical_risks
from .scenario_engine import SOLVER, sample_scenarios, substream

MARGIN_FEASIBLE = "margin-feasible"
FEASIBLE_NO_MARGIN = "feasible-no-margin"
INFEASIBLE = "infeasible-candidate"

_TEMPERATURES = (1e-2, 1e-3, 1e-4, 1e-5)
_MAX_NEIGHBORHOOD = 4096
_PENALTY_START, _PENALTY_FACTOR, _PENALTY_ESCALATIONS = 1.0, 10.0, 6


@dataclass(frozen=True)
class SolverConfig:
    multistarts: int = 4
    iterations: int = 500
    initial_step: float | None = None  # default: a quarter of the widest box side
    step_decay: float = 0.5  # step_t = initial_step / (t + 1)^decay
    seed: int = 0
    tol: float = 1e-9
    rounding_radius: int = 1
    polish: bool = True

    def __post_init__(self):
        if self.multistarts < 1 or self.iterations < 1 or self.rounding_radius < 0:
            raise ValueError("solver budgets must be positive")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial step must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverConfig":
        return cls(**(d or {}))


@dataclass
class SolveResult:
    x: np.ndarray
    worst_value: float
    status: str
    gamma: float
    risk: RiskReport | None = None
    slacks: np.ndarray | None = None
    objective: float | None = None
    lambda_bar: float | None = None
    trace: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        """-max_i f(x, theta_i)."""
        return -self.worst_value

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(), "worst_value": self.worst_value, "margin": self.margin,
            "status": self.status, "gamma": self.gamma,
            "risk": None if self.risk is None else self.risk.to_dict(),
            "slacks": None if self.slacks is None else self.slacks.tolist(),
            "slack_sum": None if self.slacks is None else math.fsum(self.slacks),
            "objective": self.objective, "lambda_bar": self.lambda_bar, "trace": self.trace,
        }


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Objective:
    """J(x) from a small catalog: zero | linear | quadratic | lookup."""

    kind: str = "zero"
    c: np.ndarray | None = None
    Q: np.ndarray | None = None
    c0: float = 0.0
    coordinate: int = 0
    keys: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "quadratic", "lookup"):
            raise ValueError(f"unknown objective kind {self.kind!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "Objective":
        if not d:
            return cls()
        kind = d.get("kind", "zero")
        if kind in ("linear", "quadratic"):
            Q = None if kind == "linear" else np.atleast_2d(np.asarray(d["Q"], float))
            c = np.asarray(d.get("c", np.zeros(0 if Q is None else Q.shape[0])), float)
            return cls(kind, c=c, Q=Q, c0=float(d.get("c0", 0.0)))
        if kind == "lookup":
            return cls(kind, coordinate=int(d["coordinate"]), keys=np.asarray(d["keys"], float),
                       values=np.asarray(d["values"], float))
        return cls(kind)

    def __call__(self, x):
        return self.value_and_grad(x)[0]

    def value_and_grad(self, x):
        x = np.asarray(x, float)
        if self.kind == "zero":
            return 0.0, np.zeros_like(x)
        if self.kind == "linear":
            return float(self.c @ x + self.c0), self.c.astype(float)
        if self.kind == "quadratic":
            c = self.c if self.c.size else np.zeros_like(x)
            return float(0.5 * x @ self.Q @ x + c @ x + self.c0), 0.5 * (self.Q + self.Q.T) @ x + c
        row = int(np.argmin(np.abs(self.keys - x[self.coordinate])))
        return float(self.values[row]), np.zeros_like(x)


def _smooth_max(values, grads, t):
    """max (t = 0) or t * logsumexp(values / t), with gradient."""
    if t == 0:
        i = int(np.argmax(values))
        return float(values[i]), grads[i]
    w = softmax(values / t)
    return float(t * logsumexp(values / t)), w @ grads


def _smooth_relu(u, du, t):
    if t == 0:
        return max(u, 0.0), du if u > 0 else np.zeros_like(du)
    return float(t * np.logaddexp(0.0, u / t)), expit(u / t) * du


class _Problem:
    """Caches theta-side features and exposes h(x) = max_i f(x, theta_i)."""

    def __init__(self, chain: ConstraintChain, scenarios, domain: Domain):
        if domain.dim != chain.x_dim:
            raise ValueError(f"domain dimension {domain.dim} differs from chain dimension {chain.x_dim}")
        self.chain = chain
        self.thetas = np.atleast_2d(np.asarray(getattr(scenarios, "thetas", scenarios), float))
        if self.thetas.shape[0] == 0:
            raise ValueError("empty scenario set")
        self.prep = chain.prepare(self.thetas)
        self.domain = domain

    def values(self, x):
        return self.chain.values(x, self.prep)

    def values_and_grads(self, x):
        return self.chain.values_and_grads(x, self.prep)

    def h(self, x):
        return float(self.values(x).max())

    def h_oracle(self, x, t):
        f, G = self.values_and_grads(x)
        return _smooth_max(f, G, t)


# ---------------------------------------------------------------------------
# core minimizer
# ---------------------------------------------------------------------------

def _initial_step(domain: Domain, cfg: SolverConfig) -> float:
    if cfg.initial_step is not None:
        return cfg.initial_step
    width = domain.upper - domain.lower
    width = width[np.isfinite(width)]
    return 0.25 * float(width.max()) if width.size and width.max() > 0 else 1.0


def _starts(domain: Domain, cfg: SolverConfig):
    yield domain.center()
    lo = np.where(np.isfinite(domain.lower), domain.lower, -1.0)
    hi = np.where(np.isfinite(domain.upper), domain.upper, 1.0)
    for s in range(1, cfg.multistarts):
        rng = substream(cfg.seed, SOLVER, s)
        yield np.clip(lo + (hi - lo) * rng.random(domain.dim), domain.lower, domain.upper)


def _subgradient_run(oracle, x0, domain, cfg, step0):
    x = np.clip(x0, domain.lower, domain.upper)
    best_v, best_x = math.inf, x
    for t in range(cfg.iterations):
        v, g = oracle(x, 0)
        if v < best_v:
            best_v, best_x = v, x
        gn = float(np.linalg.norm(g))
        if gn == 0:
            break
        x = np.clip(x - step0 / (t + 1) ** cfg.step_decay * g / gn, domain.lower, domain.upper)
    return best_x, best_v


def _polish(oracle, x0, domain):
    bounds = list(zip(np.where(np.isfinite(domain.lower), domain.lower, None),
                      np.where(np.isfinite(domain.upper), domain.upper, None)))
    x = x0
    for t in _TEMPERATURES:
        res = minimize(lambda z: oracle(z, t), x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 200})
        x = np.clip(res.x, domain.lower, domain.upper)
    return x


def _round_neighborhood(objective, x, domain: Domain, radius: int):
    """Best-of-lattice search around a continuous point over the integer coordinates."""
    idx = np.flatnonzero(domain.integer)
    if idx.size == 0:
        return x, objective(x)
    lo, hi = np.ceil(domain.lower[idx]), np.floor(domain.upper[idx])
    base = np.round(x[idx])
    offsets = range(-radius, radius + 1)
    best_x, best_v = None, math.inf
    if (2 * radius + 1) ** idx.size <= _MAX_NEIGHBORHOOD:
        for off in itertools.product(offsets, repeat=idx.size):
            z = x.copy()
            z[idx] = np.clip(base + off, lo, hi)
            v = objective(z)
            if v < best_v:
                best_x, best_v = z, v
        return best_x, best_v
    # too many combinations: coordinate-wise sweep
    z = domain.project(x)
    best_x, best_v = z, objective(z)
    for j, i in enumerate(idx):
        for off in offsets:
            cand = best_x.copy()
            cand[i] = np.clip(base[j] + off, lo[j], hi[j])
            v = objective(cand)
            if v < best_v:
                best_x, best_v = cand, v
    return best_x, best_v


def _minimize(oracle, domain: Domain, cfg: SolverConfig):
    """Multistart projected subgradient + smoothed polish; exact objective decides."""
    exact = lambda z: oracle(z, 0)[0]  # noqa: E731
    step0 = _initial_step(domain, cfg)
    best = (math.inf, None, -1)
    for s, x0 in enumerate(_starts(domain, cfg)):
        x, v = _subgradient_run(oracle, x0, domain, cfg, step0)
        if cfg.polish:
            xp = _polish(oracle, x, domain)
            vp = exact(xp)
            if vp < v:
                x, v = xp, vp
        if v < best[0]:
            best = (v, x, s)
    x = best[1]
    if domain.integer.any():
        x, _ = _round_neighborhood(exact, x, domain, cfg.rounding_radius)
    x = domain.project(x)
    return x, {"starts": cfg.multistarts, "iterations": cfg.iterations, "best_start": best[2],
               "step0": step0}


def _status(worst, gamma, tol):
    # with a prescribed margin there is no middle ground: missing it is infeasible
    return MARGIN_FEASIBLE if worst <= -gamma + tol else INFEASIBLE


def _verified_worst(chain, x, thetas):
    """Fresh evaluation pass, independent of the cached features used while solving."""
    return float(chain.evaluate_many(x, thetas).max())


def _risk(chain, x, thetas, gamma):
    return empirical_risks(chain, x, thetas, MarginSpec(gamma)) if gamma > 0 else None


# ---------------------------------------------------------------------------
# public solvers
# ---------------------------------------------------------------------------

def solve_hard_margin(chain: ConstraintChain, scenarios, gamma: float, domain: Domain,
                      cfg: SolverConfig | None = None) -> SolveResult:
    """Find x in the domain with f(x, theta_i) <= -gamma for all scenarios (minimizes the max)."""
    if not gamma > 0:
        raise ValueError("gamma must be strictly positive")
    cfg = cfg or SolverConfig()
    prob = _Problem(chain, scenarios, domain)
    x, trace = _minimize(prob.h_oracle, domain, cfg)
    worst = _verified_worst(chain, x, prob.thetas)
    return SolveResult(x, worst, _status(worst, gamma, cfg.tol), gamma,
                       _risk(chain, x, prob.thetas, gamma), trace=trace)


def solve_soft_margin(chain: ConstraintChain, scenarios, gamma: float, domain: Domain,
                      cfg: SolverConfig | None = None) -> SolveResult:
    """Minimize sum_i max(0, f(x, theta_i) + gamma), the slack-eliminated soft-margin program."""
    if not gamma > 0:
        raise ValueError("gamma must be strictly positive")
    cfg = cfg or SolverConfig()
    prob = _Problem(chain, scenarios, domain)

    def oracle(x, t):
        f, G = prob.values_and_grads(x)
        u = f + gamma
        if t == 0:
            active = u > 0
            return float(math.fsum(u[active])), G[active].sum(axis=0)
        return float(np.sum(t * np.logaddexp(0.0, u / t))), expit(u / t) @ G

    x, trace = _minimize(oracle, domain, cfg)
    if not domain.integer.any() and prob.thetas.shape[0] <= 2000:
        x = _slp_soft(prob, x, gamma)
    f = chain.evaluate_many(x, prob.thetas)
    slacks = np.maximum(0.0, f + gamma)
    worst = float(f.max())
    return SolveResult(x, worst, _status(worst, gamma, cfg.tol), gamma,
                       _risk(chain, x, prob.thetas, gamma), slacks=slacks,
                       objective=math.fsum(slacks), trace=trace)


def solve_max_margin(chain: ConstraintChain, scenarios, domain: Domain,
                     cfg: SolverConfig | None = None) -> SolveResult:
    """gamma-hat = -min_x max_i f(x, theta_i); the result's ``gamma`` is gamma-hat."""
    cfg = cfg or SolverConfig()
    prob = _Problem(chain, scenarios, domain)
    x, trace = _minimize(prob.h_oracle, domain, cfg)
    worst = _verified_worst(chain, x, prob.thetas)
    gamma_hat = -worst
    status = MARGIN_FEASIBLE if gamma_hat > 0 else FEASIBLE_NO_MARGIN
    return SolveResult(x, worst, status, gamma_hat,
                       _risk(chain, x, prob.thetas, gamma_hat), trace=trace)


def _restore(prob: _Problem, x, anchor, gamma, tol):
    """Move x toward a margin-feasible anchor until h <= -gamma + tol (bisection on the segment)."""
    if prob.h(x) <= -gamma + tol:
        return x, 0.0
    if prob.domain.integer.any():
        return anchor, 1.0
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if prob.h(x + mid * (anchor - x)) <= -gamma + tol:
            hi = mid
        else:
            lo = mid
    z = x + hi * (anchor - x)
    if prob.h(z) > -gamma + tol:
        return anchor, 1.0
    return z, hi


def _penalized(prob, domain, cfg, gamma, base_oracle, anchor):
    """Exact-penalty loop: weight 1, x10 per escalation, until margin-feasible."""
    w = _PENALTY_START
    x = anchor
    for esc in range(_PENALTY_ESCALATIONS + 1):
        def oracle(z, t, w=w):
            v, g = base_oracle(z, t)
            hv, hg = prob.h_oracle(z, t)
            pv, pg = _smooth_relu(hv + gamma, hg, t)
            return v + w * pv, g + w * pg

        x, trace = _minimize(oracle, domain, cfg)
        if prob.h(x) <= -gamma + cfg.tol:
            break
        if esc < _PENALTY_ESCALATIONS:
            w *= _PENALTY_FACTOR
    trace.update(penalty_weight=w, escalations=esc)
    if prob.h(anchor) <= -gamma + cfg.tol:
        x, frac = _restore(prob, x, anchor, gamma, cfg.tol)
        trace["restoration"] = frac
    return x, trace


def _slp_refine(prob: _Problem, J: Objective, x, gamma, tol, rounds: int = 40):
    """Sequential-LP steps on the linearized margin constraints with a shrinking trust region.

    Smoothing leaves the polished point a hair inside a vertex; this lands on it.
    Steps are kept only if the exact constraint check passes and J decreases.
    """
    dom = prob.domain
    r = 0.1 * _initial_step(dom, SolverConfig()) + 1e-3
    jx = J(x)
    for _ in range(rounds):
        f, G = prob.values_and_grads(x)
        _, jg = J.value_and_grad(x)
        b = np.maximum(-gamma - f, 0.0)
        bounds = list(zip(np.maximum(dom.lower - x, -r), np.minimum(dom.upper - x, r)))
        res = linprog(jg, A_ub=G, b_ub=b, bounds=bounds, method="highs")
        if res.status != 0:
            break
        cand = np.clip(x + res.x, dom.lower, dom.upper)
        jc = J(cand)
        if prob.h(cand) <= -gamma + tol and jc < jx:
            if jx - jc < 1e-15 * max(1.0, abs(jx)):
                x, jx = cand, jc
                break
            x, jx = cand, jc
        else:
            r *= 0.25
            if r < 1e-13:
                break
    return x


def _slp_soft(prob: _Problem, x, gamma, rounds: int = 40):
    """Trust-region LP steps for sum_i max(0, f_i + gamma) in variables (d, xi)."""
    dom = prob.domain
    n, dim = prob.thetas.shape[0], dom.dim
    r = 0.1 * _initial_step(dom, SolverConfig()) + 1e-3

    def cost(z):
        return math.fsum(np.maximum(0.0, prob.values(z) + gamma))

    cx = cost(x)
    c = np.concatenate([np.zeros(dim), np.ones(n)])
    A = None
    for _ in range(rounds):
        f, G = prob.values_and_grads(x)
        A = np.hstack([G, -np.eye(n)])
        bounds = list(zip(np.maximum(dom.lower - x, -r), np.minimum(dom.upper - x, r))) + [(0, None)] * n
        res = linprog(c, A_ub=A, b_ub=-(f + gamma), bounds=bounds, method="highs")
        if res.status != 0:
            break
        cand = np.clip(x + res.x[:dim], dom.lower, dom.upper)
        cc = cost(cand)
        if cc < cx:
            done = cx - cc < 1e-15 * max(1.0, cx)
            x, cx = cand, cc
            if done:
                break
        else:
            r *= 0.25
            if r < 1e-13:
                break
    return x


def solve_with_objective(chain: ConstraintChain, scenarios, gamma: float, domain: Domain,
                         objective: Objective | dict | None = None, lam: float | None = None,
                         cfg: SolverConfig | None = None) -> SolveResult:
    """Minimize J(x) subject to f(x, theta_i) <= -gamma.

    With ``lam`` the margin becomes a variable with floor ``gamma``: minimizing
    J(x) - lam * gamma' over h(x) <= -gamma' and gamma' >= gamma eliminates to
    J(x) + lam * h(x) under h(x) <= -gamma. ``gamma = 0`` gives the plain scenario program.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    cfg = cfg or SolverConfig()
    J = objective if isinstance(objective, Objective) else Objective.from_dict(objective)
    prob = _Problem(chain, scenarios, domain)
    anchor, _ = _minimize(prob.h_oracle, domain, cfg)

    if lam is None:
        base = lambda z, t: J.value_and_grad(z)  # noqa: E731
    else:
        if not lam > 0:
            raise ValueError("lambda must be positive")

        def base(z, t):
            jv, jg = J.value_and_grad(z)
            hv, hg = prob.h_oracle(z, t)
            return jv + lam * hv, jg + lam * hg

    x, trace = _penalized(prob, domain, cfg, gamma, base, anchor)
    if lam is None and J.kind in ("linear", "quadratic") and not domain.integer.any() \
            and prob.h(x) <= -gamma + cfg.tol:
        x = _slp_refine(prob, J, x, gamma, cfg.tol)
    worst = _verified_worst(chain, x, prob.thetas)
    achieved = gamma if lam is None else max(gamma, -worst)
    trace["achieved_gamma"] = achieved
    return SolveResult(x, worst, _status(worst, gamma, cfg.tol), gamma,
                       _risk(chain, x, prob.thetas, gamma), objective=J(x), trace=trace)


def solve_regularized(chain: ConstraintChain, scenarios, gamma: float, domain: Domain,
                      centers=None, cfg: SolverConfig | None = None) -> SolveResult:
    """Minimize Lambda-bar(x) = max{1, ||phi_k(x) - center_k||} under the hard-margin constraints."""
    if not gamma > 0:
        raise ValueError("gamma must be strictly positive")
    cfg = cfg or SolverConfig()
    if centers is None:
        centers = [np.zeros(c.n) for c in chain.components]
    centers = [np.asarray(c, float).ravel() for c in centers]
    if len(centers) != chain.C:
        raise ValueError("one center per component is required")
    prob = _Problem(chain, scenarios, domain)
    anchor, _ = _minimize(prob.h_oracle, domain, cfg)

    def base(z, t):
        vals, grads = lambda_bar_and_grad(chain, z, centers)
        return _smooth_max(vals, grads, t)

    x, trace = _penalized(prob, domain, cfg, gamma, base, anchor)
    worst = _verified_worst(chain, x, prob.thetas)
    lb = lambda_bar(chain, x, centers)
    trace["centers"] = [c.tolist() for c in centers]
    return SolveResult(x, worst, _status(worst, gamma, cfg.tol), gamma,
                       _risk(chain, x, prob.thetas, gamma), lambda_bar=lb, trace=trace)


def fixed_budget_procedure(chain: ConstraintChain, constants, n: int, epsilon: float, delta: float,
                           domain: Domain, objective=None, dist=None, seed: int = 0,
                           cfg: SolverConfig | None = None, scenarios=None):
    """Sample n scenarios, solve at the margin complexity gamma(n, epsilon, delta), certify.

    The certificate equals epsilon when the solve is margin-feasible and
    V-hat_gamma + epsilon otherwise.
    """
    gamma = margin_complexity(n, epsilon, delta, constants).value
    if scenarios is None:
        if dist is None:
            raise ValueError("a distribution or a scenario set is required")
        scenarios = sample_scenarios(dist, n, seed)
    result = solve_with_objective(chain, scenarios, gamma, domain, objective, cfg=cfg)
    cert = violation_bound(result.risk.vhat_gamma, constants, gamma, delta, n)
    return result, cert
