"""Margin losses and empirical risks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PIECEWISE = "piecewise"
INDICATOR = "indicator"


@dataclass(frozen=True)
class MarginSpec:
    gamma: float
    loss: str = PIECEWISE

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be strictly positive")
        if self.loss not in (PIECEWISE, INDICATOR):
            raise ValueError(f"unknown loss kind {self.loss!r}")


def margin_loss(value, spec: MarginSpec):
    """Piecewise: clip(1 + value/gamma, 0, 1). Indicator: 1{value > -gamma}."""
    v = np.asarray(value, dtype=float)
    if spec.loss == PIECEWISE:
        out = np.clip(1.0 + v / spec.gamma, 0.0, 1.0)
    else:
        out = (v > -spec.gamma).astype(float)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class RiskReport:
    vhat: float
    vhat_gamma: float
    losses: tuple
    margin_violations: int
    gamma: float
    loss: str

    def to_dict(self) -> dict:
        return {"vhat": self.vhat, "vhat_gamma": self.vhat_gamma, "gamma": self.gamma,
                "loss": self.loss, "margin_violations": self.margin_violations,
                "losses": list(self.losses)}


def risks_from_values(values, spec: MarginSpec) -> RiskReport:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("empty scenario set")
    losses = margin_loss(values, spec)
    n = values.size
    vhat = math.fsum((values > 0).astype(float)) / n
    return RiskReport(vhat, math.fsum(losses) / n, tuple(float(v) for v in losses),
                      int(np.count_nonzero(values > -spec.gamma)), spec.gamma, spec.loss)


def empirical_risks(chain, x, scenarios, spec: MarginSpec) -> RiskReport:
    """V-hat (strict violations f > 0) and the empirical margin risk."""
    thetas = getattr(scenarios, "thetas", scenarios)
    thetas = np.asarray(thetas, float)
    if thetas.size == 0:
        raise ValueError("empty scenario set")
    return risks_from_values(chain.evaluate_many(x, thetas), spec)
