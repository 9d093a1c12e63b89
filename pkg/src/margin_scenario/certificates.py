"""Closed-form violation bounds, sample complexities and margin complexities.

Every probability bound is returned as a :class:`Certificate` whose raw value is
the sum of its recorded terms. Theorem identities:

    rademacher          worst-case or empirical Rademacher bound at a fixed margin
    uniform-margin      bound holding uniformly over a margin grid in (0, gamma_max]
    a-posteriori        data-dependent bound with the per-point radius Lambda-bar(x)
    covering-fast-rate  zero-error covering-number bound, O(log N / N)
    covering-general    covering-number bound with nonzero indicator risk
    vc                  VC-dimension bound
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constraint_model import ChainConstants, ConstraintChain, lambda_bar
from .margin_risk import INDICATOR, PIECEWISE, MarginSpec, empirical_risks

THEOREMS = ("rademacher", "uniform-margin", "a-posteriori", "covering-fast-rate",
            "covering-general", "vc")
WORST_CASE = "worst-case"
EMPIRICAL = "empirical"

_TERM_NAMES = ("empirical", "complexity", "confidence", "extra")


class PreconditionError(ValueError):
    """A bound or complexity was requested outside the regime where it is valid."""


@dataclass
class Certificate:
    theorem: str
    value: float
    raw_value: float
    terms: dict
    inputs: dict
    certified: bool = True
    warnings: list = field(default_factory=list)
    loss: str = PIECEWISE
    constants_hash: str | None = None

    @property
    def term_sum(self) -> float:
        return math.fsum(self.terms.values())

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "value": self.value, "raw_value": self.raw_value,
                "terms": dict(self.terms), "inputs": _jsonable(self.inputs),
                "certified": self.certified, "warnings": list(self.warnings),
                "loss": self.loss, "constants_hash": self.constants_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        return cls(d["theorem"], d["value"], d["raw_value"], dict(d["terms"]), dict(d["inputs"]),
                   d.get("certified", True), list(d.get("warnings", [])), d.get("loss", PIECEWISE),
                   d.get("constants_hash"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _assemble(theorem, terms, inputs, *, raw=None, certified=True, loss=PIECEWISE,
              constants=None, warnings=None) -> Certificate:
    terms = {name: float(terms.get(name, 0.0)) for name in _TERM_NAMES}
    total = math.fsum(terms.values())
    raw = total if raw is None else float(raw)
    assert abs(raw - total) <= 1e-12 * max(1.0, abs(raw)), "certificate terms do not add up"
    warnings = list(warnings or [])
    if raw > 1.0:
        warnings.append("vacuous: bound exceeds 1 and was clamped")
    if constants is not None and not constants.certified:
        certified = False
        warnings.append("non-certified: consumes sampled-estimate constants")
    value = min(max(raw, 0.0), 1.0)
    return Certificate(theorem, value, raw, terms, dict(inputs), certified, warnings, loss,
                       None if constants is None else constants.snapshot_hash())


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError("gamma must be strictly positive")


def _complexity_sum(constants) -> float:
    """Sum_k (prod rho_bar) phi_bar tau_k Lambda_k; a bare number is taken as that sum."""
    if isinstance(constants, ChainConstants):
        return constants.complexity_sum
    value = float(constants)
    if value < 0:
        raise ValueError("complexity coefficient must be nonnegative")
    return value


# ---------------------------------------------------------------------------
# Rademacher complexity bounds
# ---------------------------------------------------------------------------

def rademacher_bound(constants, n: int) -> float:
    """Sum_k (prod rho_bar) phi_bar tau_k Lambda~_k / sqrt(n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _complexity_sum(constants) / math.sqrt(n)


def psi_energies(chain: ConstraintChain, scenarios) -> np.ndarray:
    """sqrt(sum_i ||psi_k(theta_i)||^2) for each component k."""
    thetas = np.atleast_2d(np.asarray(getattr(scenarios, "thetas", scenarios), float))
    if thetas.shape[0] == 0:
        raise ValueError("empty scenario set")
    prep = chain.prepare(thetas)
    return np.array([math.sqrt(math.fsum((P * P).ravel())) for P in prep.psi])


def empirical_rademacher_bound(constants: ChainConstants, chain: ConstraintChain, scenarios) -> float:
    """Sum_k (prod rho_bar) phi_bar Lambda~_k sqrt(sum_i ||psi_k(theta_i)||^2) / N."""
    thetas = np.atleast_2d(np.asarray(getattr(scenarios, "thetas", scenarios), float))
    energy = psi_energies(chain, thetas)
    w = constants.lipschitz_weights
    return math.fsum(w[k] * constants.lam[k] * energy[k] for k in range(constants.C)) / thetas.shape[0]


def _rademacher_terms(vhat_gamma, rad, gamma, delta, n, mode):
    if mode == WORST_CASE:
        conf = math.sqrt(math.log(1 / delta) / (2 * n))
    else:
        conf = 3 * math.sqrt(math.log(2 / delta) / (2 * n))
    return {"empirical": vhat_gamma, "complexity": 2 / gamma * rad, "confidence": conf}


def violation_bound(vhat_gamma: float, constants: ChainConstants, gamma: float, delta: float,
                    n: int, mode: str = WORST_CASE, scenarios=None, chain=None) -> Certificate:
    """V(x) <= V-hat_gamma(x) + (2/gamma) R + confidence, uniformly over the domain.

    ``mode='empirical'`` swaps in the empirical Rademacher bound (needs ``chain``
    and ``scenarios``) with the 3 sqrt(log(2/delta) / 2N) confidence term.
    """
    _check_gamma(gamma)
    _check_delta(delta)
    if not 0 <= vhat_gamma <= 1:
        raise ValueError("vhat_gamma must lie in [0, 1]")
    if mode == WORST_CASE:
        rad = rademacher_bound(constants, n)
        certified = constants.certified
    elif mode == EMPIRICAL:
        if scenarios is None or chain is None:
            raise ValueError("empirical mode needs the chain and the scenario set")
        n = len(np.atleast_2d(getattr(scenarios, "thetas", scenarios)))
        rad = empirical_rademacher_bound(constants, chain, scenarios)
        certified = constants.lam_certified
    else:
        raise ValueError(f"unknown mode {mode!r}")
    terms = _rademacher_terms(vhat_gamma, rad, gamma, delta, n, mode)
    inputs = {"gamma": gamma, "delta": delta, "n": n, "mode": mode, "vhat_gamma": vhat_gamma,
              "rademacher": rad, "constants": constants.to_dict()}
    cert = _assemble("rademacher", terms, inputs, certified=certified)
    cert.constants_hash = constants.snapshot_hash()
    if not certified:
        cert.certified = False
        cert.warnings.append("non-certified: consumes sampled-estimate constants")
    return cert


def default_gamma_grid(gamma_max: float, points: int = 16) -> np.ndarray:
    """Geometric grid in (gamma_max/100, gamma_max], largest first."""
    return gamma_max * 100.0 ** (-np.arange(points) / points)


def _uniform_margin_value(vhat, gamma, gamma_max, rad, delta, n):
    extra = math.sqrt(math.log(math.log2(2 * gamma_max / gamma)) / n)
    return {"empirical": vhat, "complexity": 4 / gamma * rad,
            "confidence": math.sqrt(math.log(1 / delta) / (2 * n)), "extra": extra}


def violation_bound_uniform_margin(vhat_gamma_of, constants: ChainConstants, gamma_max: float,
                                   gamma_grid=None, delta: float = 0.05, n: int = 1) -> Certificate:
    """Bound valid simultaneously for every margin in (0, gamma_max]; minimized over the grid.

    ``vhat_gamma_of`` maps a margin to the empirical margin risk (callable or mapping).
    """
    _check_gamma(gamma_max)
    _check_delta(delta)
    grid = default_gamma_grid(gamma_max) if gamma_grid is None else np.asarray(gamma_grid, float).ravel()
    if grid.size == 0:
        raise ValueError("margin grid is empty")
    if np.any(grid <= 0) or np.any(grid > gamma_max):
        raise ValueError("every grid margin must lie in (0, gamma_max]")
    lookup = vhat_gamma_of if callable(vhat_gamma_of) else vhat_gamma_of.__getitem__
    rad = rademacher_bound(constants, n)
    best, evals = None, []
    for g in grid:
        terms = _uniform_margin_value(float(lookup(g)), float(g), gamma_max, rad, delta, n)
        total = math.fsum(terms.values())
        evals.append({"gamma": float(g), "vhat_gamma": terms["empirical"], "bound": total})
        if best is None or total < best[0]:
            best = (total, float(g), terms)
    inputs = {"gamma_max": gamma_max, "delta": delta, "n": n, "rademacher": rad,
              "gamma": best[1], "vhat_gamma": best[2]["empirical"], "grid": evals,
              "constants": constants.to_dict()}
    return _assemble("uniform-margin", best[2], inputs, constants=constants)


def _posterior_terms(vhat, lbar, weighted_energy, gamma, delta, n):
    return {"empirical": vhat,
            "complexity": 2 * lbar * weighted_energy / (gamma * n),
            "confidence": 3 * math.sqrt(math.log(6 / delta) / (2 * n)),
            "extra": 3 * math.sqrt(math.log(math.log2(2 * lbar)) / n)}


def violation_bound_posterior(chain: ConstraintChain, x, scenarios, gamma: float, delta: float,
                              centers=None, vhat_gamma: float | None = None) -> Certificate:
    """Data-dependent bound using Lambda-bar(x) and the observed psi energies; uniform in x."""
    _check_gamma(gamma)
    _check_delta(delta)
    thetas = np.atleast_2d(np.asarray(getattr(scenarios, "thetas", scenarios), float))
    n = thetas.shape[0]
    if centers is None:
        centers = [np.zeros(c.n) for c in chain.components]
    if len(centers) != chain.C:
        raise ValueError("one center per component is required")
    lbar = lambda_bar(chain, x, centers)
    if vhat_gamma is None:
        vhat_gamma = empirical_risks(chain, x, thetas, MarginSpec(gamma)).vhat_gamma
    energy = psi_energies(chain, thetas)
    weights = ChainConstants.from_values(
        [0.0] * chain.C, [0.0] * chain.C,
        rho_bar=(1.0,) + tuple(s.lipschitz for s in chain.stage_wrappers),
        phi_bar=[c.wrapper.lipschitz for c in chain.components]).lipschitz_weights
    weighted = math.fsum(w * e for w, e in zip(weights, energy))
    terms = _posterior_terms(vhat_gamma, lbar, weighted, gamma, delta, n)
    inputs = {"gamma": gamma, "delta": delta, "n": n, "vhat_gamma": vhat_gamma, "lambda_bar": lbar,
              "weighted_energy": weighted, "x": np.asarray(x, float).tolist(),
              "centers": [np.asarray(c, float).tolist() for c in centers]}
    return _assemble("a-posteriori", terms, inputs)


# ---------------------------------------------------------------------------
# Covering-number bounds
# ---------------------------------------------------------------------------

def covering_scales(constants: ChainConstants, gamma: float) -> list:
    """M_k = 2^p_k phi_bar_k tau_k Lambda_k prod rho_bar / gamma."""
    _check_gamma(gamma)
    return [2.0 ** constants.p[k] * c / gamma for k, c in enumerate(constants.coefficients)]


def covering_capacity(constants: ChainConstants, gamma: float, n: int) -> float:
    """M = 144 sum_k M_k^2 log(60 M_k N); refuses when any log argument is <= 1."""
    scales = covering_scales(constants, gamma)
    if any(60 * m * n <= 1 for m in scales):
        raise PreconditionError("covering-scale precondition violated: 60 * M_k * N <= 1")
    return 144 * math.fsum(m * m * math.log(60 * m * n) for m in scales)


def covering_fast_rate_bound(constants: ChainConstants, gamma: float, delta: float, n: int) -> float:
    """Zero-error closed form 4 (M + log(4/delta)) / N (unclamped)."""
    _check_delta(delta)
    return 4 * (covering_capacity(constants, gamma, n) + math.log(4 / delta)) / n


def violation_bound_covering(constants: ChainConstants, gamma: float, delta: float, n: int,
                             vhat_gamma_indicator: float = 0.0) -> Certificate:
    """V-hat + 2 sqrt(V-hat (M + log 4/delta) / N) + 4 (M + log 4/delta) / N.

    Uses the indicator margin loss 1{f > -gamma}. With V-hat = 0 this is the
    zero-error fast-rate bound.
    """
    _check_delta(delta)
    if not 0 <= vhat_gamma_indicator <= 1:
        raise ValueError("vhat must lie in [0, 1]")
    M = covering_capacity(constants, gamma, n)
    L = math.log(4 / delta)
    v = vhat_gamma_indicator
    extra = 2 * math.sqrt(v * (M + L) / n)
    raw = v + extra + 4 * (M + L) / n
    terms = {"empirical": v, "complexity": 4 * M / n, "confidence": 4 * L / n, "extra": extra}
    inputs = {"gamma": gamma, "delta": delta, "n": n, "vhat_gamma": v, "capacity": M,
              "scales": covering_scales(constants, gamma), "constants": constants.to_dict()}
    theorem = "covering-fast-rate" if v == 0 else "covering-general"
    return _assemble(theorem, terms, inputs, raw=raw, loss=INDICATOR, constants=constants)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def vc_bound(d_vc: int, vhat: float, delta: float, n: int) -> Certificate:
    """vhat + 2 sqrt(2 d log(eN/d) / N) + sqrt(log(1/delta) / 2N)."""
    _check_delta(delta)
    if d_vc < 1 or n < d_vc:
        raise ValueError("need n >= d_vc >= 1")
    terms = {"empirical": vhat,
             "complexity": 2 * math.sqrt(2 * d_vc * math.log(math.e * n / d_vc) / n),
             "confidence": math.sqrt(math.log(1 / delta) / (2 * n))}
    return _assemble("vc", terms, {"d_vc": d_vc, "vhat": vhat, "delta": delta, "n": n}, loss="zero-one")


def _tail_logs(n, d, epsilon):
    if not (1 <= d <= n):
        raise ValueError("need 1 <= d <= n")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    le, l1e = math.log(epsilon), math.log1p(-epsilon)
    # exact binomial coefficients: lgamma differences lose ~1e-13 at n = 1e4
    logs = [math.log(math.comb(n, j)) + j * le + (n - j) * l1e for j in range(d)]
    top = max(logs)
    return top, math.fsum(sorted(math.exp(v - top) for v in logs))


def log_convex_scenario_delta(n: int, d: int, epsilon: float) -> float:
    """log P{Binomial(n, epsilon) <= d - 1}; finite even where the tail underflows."""
    top, s = _tail_logs(n, d, epsilon)
    return min(0.0, top + math.log(s))


def convex_scenario_delta(n: int, d: int, epsilon: float) -> float:
    """P{Binomial(n, epsilon) <= d - 1}, summed in log space."""
    top, s = _tail_logs(n, d, epsilon)
    return min(1.0, max(0.0, math.exp(top) * s))


# ---------------------------------------------------------------------------
# Complexities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexityEstimate:
    kind: str
    value: float
    rounded: int | None
    inputs: dict

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "rounded": self.rounded,
                "inputs": _jsonable(self.inputs)}


def _check_eps_delta(epsilon, delta):
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    _check_delta(delta)


def _half_log(delta):
    """sqrt(log(1 / delta^(1/2)))."""
    return math.sqrt(0.5 * math.log(1 / delta))


def margin_sample_complexity(epsilon: float, delta: float, constants, gamma: float) -> ComplexityEstimate:
    """((2/gamma) S + sqrt(log(1/sqrt(delta))))^2 / epsilon^2 with S the complexity sum."""
    _check_eps_delta(epsilon, delta)
    _check_gamma(gamma)
    s = _complexity_sum(constants)
    value = (2 / gamma * s + _half_log(delta)) ** 2 / epsilon ** 2
    return ComplexityEstimate("margin-sample-complexity", value, math.ceil(value),
                              {"epsilon": epsilon, "delta": delta, "gamma": gamma, "complexity_sum": s})


def convex_sample_complexity(epsilon: float, delta: float, d: int) -> ComplexityEstimate:
    """(2d + 2 log(1/delta)) / epsilon."""
    _check_eps_delta(epsilon, delta)
    if d < 0:
        raise ValueError("dimension must be nonnegative")
    value = (2 * d + 2 * math.log(1 / delta)) / epsilon
    return ComplexityEstimate("convex-sample-complexity", value, math.ceil(value),
                              {"epsilon": epsilon, "delta": delta, "d": d})


def dimension_crossover(epsilon: float, delta: float, constants, gamma: float) -> int:
    """Smallest d with d > ((2/gamma) S + sqrt(log(1/sqrt(delta))))^2 / (2 epsilon)."""
    _check_eps_delta(epsilon, delta)
    _check_gamma(gamma)
    rhs = (2 / gamma * _complexity_sum(constants) + _half_log(delta)) ** 2 / (2 * epsilon)
    return math.floor(rhs) + 1


def margin_complexity(n: int, epsilon: float, delta: float, constants) -> ComplexityEstimate:
    """Smallest margin for which the fixed-margin bound gives epsilon at budget n."""
    _check_eps_delta(epsilon, delta)
    denom = epsilon * math.sqrt(n) - _half_log(delta)
    if not denom > 0:
        raise PreconditionError("budget too small for target (epsilon, delta)")
    s = _complexity_sum(constants)
    return ComplexityEstimate("margin-complexity", 2 * s / denom, None,
                              {"n": n, "epsilon": epsilon, "delta": delta, "complexity_sum": s})


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

def replay(cert: dict | Certificate) -> float:
    """Recompute a certificate's raw value from its recorded inputs."""
    d = cert.to_dict() if isinstance(cert, Certificate) else cert
    th, inp = d["theorem"], d["inputs"]
    if th == "rademacher":
        terms = _rademacher_terms(inp["vhat_gamma"], inp["rademacher"], inp["gamma"], inp["delta"],
                                  inp["n"], inp["mode"])
        return math.fsum(terms.values())
    if th == "uniform-margin":
        terms = _uniform_margin_value(inp["vhat_gamma"], inp["gamma"], inp["gamma_max"],
                                      inp["rademacher"], inp["delta"], inp["n"])
        return math.fsum(terms.values())
    if th == "a-posteriori":
        terms = _posterior_terms(inp["vhat_gamma"], inp["lambda_bar"], inp["weighted_energy"],
                                 inp["gamma"], inp["delta"], inp["n"])
        return math.fsum(terms.values())
    if th in ("covering-fast-rate", "covering-general"):
        c = inp["constants"]
        consts = ChainConstants.from_values(c["tau"], c["lam"], c["rho_bar"], c["phi_bar"], c["p"])
        return violation_bound_covering(consts, inp["gamma"], inp["delta"], inp["n"],
                                        inp["vhat_gamma"]).raw_value
    if th == "vc":
        return vc_bound(inp["d_vc"], inp["vhat"], inp["delta"], inp["n"]).raw_value
    raise ValueError(f"unknown theorem id {th!r}")
