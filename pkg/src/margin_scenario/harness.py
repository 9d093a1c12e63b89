"""Batch pipelines behind the command line: certify, solve, validate, complexity,
coverage and figure reproduction."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .certificates import (EMPIRICAL, WORST_CASE, PreconditionError, convex_sample_complexity,
                           dimension_crossover, margin_complexity, margin_sample_complexity,
                           vc_bound, violation_bound, violation_bound_covering,
                           violation_bound_posterior, violation_bound_uniform_margin)
from .constraint_model import Domain, build_chain, circle_chain, compute_constants
from .margin_risk import INDICATOR, MarginSpec, empirical_risks, risks_from_values
from .oracles import exact_violation_circle
from .scenario_engine import (COVERAGE, DistributionSpec, ScenarioSet, monte_carlo_violation,
                              read_scenario_csv, sample_scenarios)
from .solvers import (MARGIN_FEASIBLE, Objective, SolverConfig, solve_hard_margin,
                      solve_max_margin, solve_regularized, solve_soft_margin, solve_with_objective)

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED, EXIT_NONCERTIFIED = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    chain: object
    domain: Domain
    distribution: DistributionSpec
    solver: SolverConfig = field(default_factory=SolverConfig)
    certificates: list = field(default_factory=list)
    validation_m: int = 100_000
    repetitions: int = 1
    seed: int = 0
    out: str = "out"
    n: int = 100
    gamma: float = 0.5
    delta: float = 0.05
    epsilon: float | None = None
    x: np.ndarray | None = None
    centers: list | None = None
    problem: str = "hard"
    objective: dict | None = None
    lam: float | None = None
    source: str = "<dict>"

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None, source: str = "<dict>") -> "ExperimentConfig":
        def fail(fieldname, msg):
            raise ConfigError(f"{source}: field '{fieldname}': {msg}")

        known = {"chain", "distribution", "solver", "certificates", "validation_m", "repetitions",
                 "seed", "out", "n", "gamma", "delta", "epsilon", "x", "centers", "problem",
                 "objective", "lambda"}
        for key in d:
            if key not in known:
                fail(key, "unknown field")
        if "chain" not in d:
            fail("chain", "missing")
        spec = d["chain"]
        if isinstance(spec, str):
            p = Path(spec)
            if base is not None and not p.is_absolute():
                p = base / p
            if not p.exists():
                fail("chain", f"file {p} does not exist")
            try:
                spec = json.loads(p.read_text())
            except json.JSONDecodeError as e:
                fail("chain", f"invalid JSON in {p}: {e}")
        try:
            chain = build_chain(spec)
        except (ValueError, KeyError, TypeError) as e:
            fail("chain", str(e))
        if not spec.get("domain"):
            fail("chain.domain", "missing")
        try:
            domain = Domain.from_dict(spec["domain"])
        except (ValueError, KeyError) as e:
            fail("chain.domain", str(e))
        if domain.dim != chain.x_dim:
            fail("chain.domain", f"dimension {domain.dim} differs from chain dimension {chain.x_dim}")
        if "distribution" not in d:
            fail("distribution", "missing")
        try:
            dist = DistributionSpec.from_dict(d["distribution"], base)
        except (ValueError, KeyError, OSError) as e:
            fail("distribution", str(e))
        try:
            solver = SolverConfig.from_dict(d.get("solver"))
        except (ValueError, TypeError) as e:
            fail("solver", str(e))
        reps = int(d.get("repetitions", 1))
        if reps < 1:
            fail("repetitions", "must be >= 1")
        certs = d.get("certificates", [])
        if not isinstance(certs, list):
            fail("certificates", "must be a list")
        for i, c in enumerate(certs):
            if not isinstance(c, dict) or "theorem" not in c:
                fail(f"certificates[{i}]", "each request needs a 'theorem'")
        x = d.get("x")
        if x is not None:
            x = np.asarray(x, float)
            if x.shape != (chain.x_dim,):
                fail("x", f"expected {chain.x_dim} coordinates")
        return cls(chain, domain, dist, solver, certs, int(d.get("validation_m", 100_000)), reps,
                   int(d.get("seed", 0)), str(d.get("out", "out")), int(d.get("n", 100)),
                   float(d.get("gamma", 0.5)), float(d.get("delta", 0.05)),
                   None if d.get("epsilon") is None else float(d["epsilon"]), x, d.get("centers"),
                   str(d.get("problem", "hard")), d.get("objective"), d.get("lambda"), source)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: config file does not exist")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(d, path.parent, str(path))


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _point(cfg: ExperimentConfig, scenarios, gamma):
    if cfg.x is not None:
        return cfg.x, None
    res = solve_hard_margin(cfg.chain, scenarios, gamma, cfg.domain, cfg.solver)
    return res.x, res


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------

def _certify_one(cfg: ExperimentConfig, req: dict, index: int, constants):
    theorem = req["theorem"]
    gamma = float(req.get("gamma", cfg.gamma))
    delta = float(req.get("delta", cfg.delta))
    n = int(req.get("n", cfg.n))
    scenarios = sample_scenarios(cfg.distribution, n, cfg.seed, stream=(index,))
    if theorem == "rademacher":
        x, _ = _point(cfg, scenarios, gamma)
        vhat = empirical_risks(cfg.chain, x, scenarios, MarginSpec(gamma)).vhat_gamma
        mode = req.get("mode", WORST_CASE)
        return violation_bound(vhat, constants, gamma, delta, n, mode, scenarios, cfg.chain), x
    if theorem == "uniform-margin":
        gmax = float(req.get("gamma_max", gamma))
        x, _ = _point(cfg, scenarios, gmax)
        f = cfg.chain.evaluate_many(x, scenarios.thetas)
        vhat_of = lambda g: risks_from_values(f, MarginSpec(g)).vhat_gamma  # noqa: E731
        return violation_bound_uniform_margin(vhat_of, constants, gmax, req.get("grid"), delta, n), x
    if theorem == "a-posteriori":
        x, _ = _point(cfg, scenarios, gamma)
        return violation_bound_posterior(cfg.chain, x, scenarios, gamma, delta, cfg.centers), x
    if theorem in ("covering", "covering-fast-rate", "covering-general"):
        x, _ = _point(cfg, scenarios, gamma)
        vhat = empirical_risks(cfg.chain, x, scenarios, MarginSpec(gamma, INDICATOR)).vhat_gamma
        return violation_bound_covering(constants, gamma, delta, n, vhat), x
    if theorem == "vc":
        x, _ = _point(cfg, scenarios, gamma)
        vhat = empirical_risks(cfg.chain, x, scenarios, MarginSpec(gamma)).vhat
        return vc_bound(int(req["d_vc"]), vhat, delta, n), x
    raise ConfigError(f"{cfg.source}: certificates[{index}].theorem: unknown theorem {theorem!r}")


def run_certify(cfg: ExperimentConfig, out: Path | None = None):
    """One JSON report per requested theorem; returns (summary, exit code)."""
    if not cfg.certificates:
        raise ConfigError(f"{cfg.source}: field 'certificates': nothing to do")
    constants = compute_constants(cfg.chain, cfg.domain, cfg.distribution, cfg.centers)
    reports, code = [], EXIT_OK
    for i, req in enumerate(cfg.certificates):
        try:
            cert, x = _certify_one(cfg, req, i, constants)
            rep = {"request": req, "certificate": cert.to_dict(), "x": np.asarray(x).tolist()}
            if not cert.certified and code == EXIT_OK:
                code = EXIT_NONCERTIFIED
        except PreconditionError as e:
            rep = {"request": req, "error": str(e)}
            code = EXIT_REFUSED
        reports.append(rep)
        if out is not None:
            dump_json(rep, Path(out) / f"certificate_{i:02d}_{req['theorem']}.json")
    summary = {"certificates": reports, "constants": constants.to_dict(), "seed": cfg.seed}
    if out is not None:
        dump_json(summary, Path(out) / "certify_report.json")
    return summary, code


# ---------------------------------------------------------------------------
# solve / validate / complexity
# ---------------------------------------------------------------------------

def run_solve(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    scenarios = sample_scenarios(cfg.distribution, cfg.n, cfg.seed)
    kind = cfg.problem
    if kind == "hard":
        res = solve_hard_margin(cfg.chain, scenarios, cfg.gamma, cfg.domain, cfg.solver)
    elif kind == "soft":
        res = solve_soft_margin(cfg.chain, scenarios, cfg.gamma, cfg.domain, cfg.solver)
    elif kind == "max":
        res = solve_max_margin(cfg.chain, scenarios, cfg.domain, cfg.solver)
    elif kind == "objective":
        res = solve_with_objective(cfg.chain, scenarios, cfg.gamma, cfg.domain, cfg.objective,
                                   cfg.lam, cfg.solver)
    elif kind == "regularized":
        res = solve_regularized(cfg.chain, scenarios, cfg.gamma, cfg.domain, cfg.centers, cfg.solver)
    else:
        raise ConfigError(f"{cfg.source}: field 'problem': unknown problem {kind!r}")
    rep = {"problem": kind, "n": cfg.n, "seed": cfg.seed, "result": res.to_dict(),
           "verification": {"in_domain": cfg.domain.contains(res.x),
                            "worst_value": float(cfg.chain.evaluate_many(res.x, scenarios.thetas).max())}}
    if out is not None:
        dump_json(rep, Path(out) / "solve_report.json")
    return rep


def run_validate(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> dict:
    x = cfg.x if cfg.x is not None else np.asarray(run_solve(cfg)["result"]["x"])
    est = monte_carlo_violation(cfg.chain, x, cfg.distribution, cfg.validation_m, cfg.seed,
                                workers=workers)
    rep = {"x": np.asarray(x).tolist(), "violation": est.to_dict()}
    if out is not None:
        dump_json(rep, Path(out) / "validate_report.json")
    return rep


def run_complexity(cfg: ExperimentConfig, out: Path | None = None, fmt: str = "json") -> dict:
    constants = compute_constants(cfg.chain, cfg.domain, cfg.distribution, cfg.centers)
    eps = cfg.epsilon if cfg.epsilon is not None else 0.05
    rep = {
        "margin_sample_complexity": margin_sample_complexity(eps, cfg.delta, constants, cfg.gamma).to_dict(),
        "convex_sample_complexity": convex_sample_complexity(eps, cfg.delta, cfg.domain.dim).to_dict(),
        "dimension_crossover": dimension_crossover(eps, cfg.delta, constants, cfg.gamma),
        "constants": constants.to_dict(),
    }
    try:
        rep["margin_complexity"] = margin_complexity(cfg.n, eps, cfg.delta, constants).to_dict()
    except PreconditionError as e:
        rep["margin_complexity"] = {"error": str(e)}
    if out is not None:
        if fmt == "csv":
            rows = [("quantity", "value", "rounded"),
                    ("margin_sample_complexity", rep["margin_sample_complexity"]["value"],
                     rep["margin_sample_complexity"]["rounded"]),
                    ("convex_sample_complexity", rep["convex_sample_complexity"]["value"],
                     rep["convex_sample_complexity"]["rounded"]),
                    ("dimension_crossover", rep["dimension_crossover"], rep["dimension_crossover"]),
                    ("margin_complexity", rep["margin_complexity"].get("value", ""), "")]
            _write_csv(Path(out) / "complexity.csv", rows)
        else:
            dump_json(rep, Path(out) / "complexity_report.json")
    return rep


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

@dataclass
class CoverageReport:
    repetitions: int
    records: list
    frequency: float
    target: float
    p_value: float
    warnings: list

    def to_dict(self) -> dict:
        return {"repetitions": self.repetitions, "frequency": self.frequency, "target": self.target,
                "binomial_test_p_value": self.p_value, "warnings": self.warnings,
                "records": self.records}


def _rep_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(COVERAGE, r)).generate_state(1)[0])


def _coverage_rep(args):
    cfg, constants, r = args
    scenarios = sample_scenarios(cfg.distribution, cfg.n, cfg.seed, stream=(COVERAGE, r))
    solver = replace(cfg.solver, seed=_rep_seed(cfg.seed, r))
    res = solve_hard_margin(cfg.chain, scenarios, cfg.gamma, cfg.domain, solver)
    cert = violation_bound(res.risk.vhat_gamma, constants, cfg.gamma, cfg.delta, cfg.n)
    mc = monte_carlo_violation(cfg.chain, res.x, cfg.distribution, cfg.validation_m, cfg.seed,
                               stream=(COVERAGE, r))
    return {"rep": r, "status": res.status, "vhat_gamma": res.risk.vhat_gamma, "bound": cert.value,
            "mc_estimate": mc.estimate, "mc_upper": mc.upper, "covered": mc.estimate <= cert.value,
            "x": res.x.tolist()}


def run_coverage(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> CoverageReport:
    """R repetitions of sample -> hard-margin solve -> certify -> Monte-Carlo validate."""
    constants = compute_constants(cfg.chain, cfg.domain, cfg.distribution, cfg.centers)
    jobs = [(cfg, constants, r) for r in range(cfg.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_coverage_rep, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_coverage_rep(j) for j in jobs]
    hits = sum(rec["covered"] for rec in records)
    R = len(records)
    target = 1 - cfg.delta
    warnings = []
    if R < 30:
        warnings.append(f"only {R} repetitions: coverage frequency is not meaningful below 30")
    if not constants.certified:
        warnings.append("non-certified constants")
    p = float(binomtest(hits, R, target, alternative="less").pvalue)
    report = CoverageReport(R, records, hits / R, target, p, warnings)
    if out is not None:
        dump_json(report.to_dict(), Path(out) / "coverage_report.json")
    return report


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

FIG1_ANGLES = (30.0, 120.0, 170.0, -30.0, -100.0)
ELLIPSE_POSITIONS = (0.01, 0.05, 0.1, 0.3, 0.45, 0.52, 0.73, 0.96)


def fig1_scenarios() -> np.ndarray:
    a = np.radians(FIG1_ANGLES)
    return np.column_stack([np.cos(a), np.sin(a)])


def ellipse_tangent_thetas(positions=ELLIPSE_POSITIONS) -> np.ndarray:
    """Tangent half-planes theta . x <= 1 to x1^2 + x2^2/16 = 1 at (sin t, 4 cos t)."""
    t = -np.pi + 2 * np.pi * np.asarray(positions)
    return np.column_stack([np.sin(t), 4 * np.cos(t) / 16])


def ellipse_fixture() -> np.ndarray:
    with resources.as_file(resources.files("margin_scenario") / "data" / "ellipse_tangents.csv") as p:
        return read_scenario_csv(p)


def _write_csv(path, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def figure1_data(cfg: SolverConfig | None = None) -> list:
    chain = circle_chain()
    domain = Domain.box([-2, -2], [2, 2])
    thetas = fig1_scenarios()
    u = np.array([math.cos(math.radians(-65)), math.sin(math.radians(-65))])
    left = solve_with_objective(chain, thetas, 0.0, domain, Objective("linear", c=-u), cfg=cfg)
    right = solve_hard_margin(chain, thetas, 0.3, domain, cfg)
    rows = [("panel", "gamma", "x1", "x2", "norm", "exact_violation", "status")]
    for name, res in (("standard", left), ("hard-margin", right)):
        rows.append((name, res.gamma, float(res.x[0]), float(res.x[1]), float(np.linalg.norm(res.x)),
                     exact_violation_circle(res.x), res.status))
    return rows


def figure2_data(cfg: SolverConfig | None = None) -> list:
    # x is confined near the top of the ellipse, where the margin is tight
    chain = circle_chain()
    domain = Domain.box([-3, 3], [3, 6])
    thetas = ellipse_fixture()
    hard = solve_max_margin(chain, thetas, domain, cfg)
    best = None
    for i in range(thetas.shape[0]):
        res = solve_max_margin(chain, np.delete(thetas, i, axis=0), domain, cfg)
        if best is None or res.gamma > best[0]:
            best = (res.gamma, i, res.x)
    soft = solve_soft_margin(chain, thetas, best[0], domain, cfg)
    f_drop = chain.evaluate_many(best[2], thetas)
    xi_drop = np.maximum(0.0, f_drop + best[0])
    risk_drop = risks_from_values(f_drop, MarginSpec(best[0]))
    rows = [("panel", "gamma", "x1", "x2", "margin_violations", "slack_sum", "vhat_gamma", "dropped")]
    rows.append(("hard-margin", hard.gamma, float(hard.x[0]), float(hard.x[1]),
                 hard.risk.margin_violations if hard.risk else "", 0.0,
                 hard.risk.vhat_gamma if hard.risk else "", ""))
    rows.append(("soft-margin", soft.gamma, float(soft.x[0]), float(soft.x[1]),
                 int(np.count_nonzero(soft.slacks > 1e-6)), soft.objective, soft.risk.vhat_gamma, best[1]))
    rows.append(("drop-one", best[0], float(best[2][0]), float(best[2][1]),
                 int(np.count_nonzero(xi_drop > 1e-6)), math.fsum(xi_drop), risk_drop.vhat_gamma, best[1]))
    return rows


def crossover_table(epsilon=0.03, delta=0.001, coefficient=2.0, dims=range(100, 1001)) -> list:
    """Margin vs convex sample complexity over the dimension (tau Lambda / gamma = coefficient)."""
    gamma = 1.0
    nm = margin_sample_complexity(epsilon, delta, coefficient, gamma)
    rhs_d = dimension_crossover(epsilon, delta, coefficient, gamma)
    rows = [("d", "n_margin", "n_convex", "convex_exceeds_margin", "sufficient_condition")]
    for d in dims:
        nc = convex_sample_complexity(epsilon, delta, d)
        rows.append((d, nm.rounded, nc.rounded, nc.value > nm.value, d >= rhs_d))
    return rows


def reproduce_figures(out, cfg: SolverConfig | None = None) -> dict:
    out = Path(out)
    tables = {"figure1.csv": figure1_data(cfg), "figure2.csv": figure2_data(cfg),
              "crossover.csv": crossover_table()}
    for name, rows in tables.items():
        _write_csv(out / name, rows)
    return tables
