"""Gradient-based falsification: search the input box for a violator.

The attack objective is the max-margin violation loss, defined for any
halfspace specification (not only classification), so FGSM and PGD work
unchanged for safety, robustness, and VNNLIB-style properties.  A point
is a counterexample exactly when its loss is strictly positive;
boundary points do not count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Hyperrectangle, OutputSpec
from .model import Model, forward, input_gradient

__all__ = [
    "AttackConfig",
    "Counterexample",
    "violation_loss",
    "fgsm",
    "pgd",
    "run_attack",
]


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters; FGSM ignores ``steps`` (single step)."""

    method: str = "pgd"
    steps: int = 100
    step_size: float | None = None  # per-axis-radius units; None -> 2/steps
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")

    @property
    def effective_step(self) -> float:
        return self.step_size if self.step_size is not None else 2.0 / self.steps


@dataclass(frozen=True)
class Counterexample:
    """Concrete violator: output = forward(input) breaks the spec."""

    input: np.ndarray
    output: np.ndarray


def violation_loss(spec: OutputSpec, y) -> float:
    """Margin by which y violates the spec; > 0 means violation.

    Safe mode: the largest halfspace excess max_i(a_i.y - b_i).  Unsafe
    mode: the best depth inside any unsafe polytope, i.e. the maximum
    over disjuncts of min_i(b_i - a_i.y).
    """
    return _loss_and_gradient(spec, y)[0]


def _loss_and_gradient(spec: OutputSpec, y):
    """Loss plus a subgradient w.r.t. y (ties broken by lowest index)."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != spec.dim:
        raise ValueError(f"output has dimension {y.size}, spec needs {spec.dim}")
    if spec.mode == "safe":
        (conj,) = spec.disjuncts
        margins = np.array([hs.normal @ y - hs.offset for hs in conj])
        i = int(np.argmax(margins))
        return float(margins[i]), conj[i].normal.copy()
    best_val, best_grad = -np.inf, None
    for disj in spec.disjuncts:
        depths = np.array([hs.offset - hs.normal @ y for hs in disj])
        i = int(np.argmin(depths))
        if depths[i] > best_val:
            best_val, best_grad = float(depths[i]), -disj[i].normal
    return best_val, best_grad.copy()


def fgsm(model: Model, box: Hyperrectangle, x0, spec: OutputSpec) -> np.ndarray:
    """One signed-gradient step of per-axis radius size, clipped to the box."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if not box.contains(x0):
        raise ValueError("start point lies outside the input box")
    y = forward(model, x0)
    _, gy = _loss_and_gradient(spec, y)
    gx = input_gradient(model, x0, gy)
    x = x0 + box.radius * np.sign(gx)
    return np.clip(x, box.lower, box.upper)


def pgd(
    model: Model, box: Hyperrectangle, spec: OutputSpec, config: AttackConfig
) -> Counterexample | None:
    """Projected gradient ascent on the violation loss.

    Restart 0 starts at the box center, later restarts at seeded uniform
    points.  Stops at the first iterate with strictly positive loss.
    """
    step = config.effective_step * box.radius
    for restart in range(config.restarts):
        if restart == 0:
            x = box.center.copy()
        else:
            seq = np.random.SeedSequence(entropy=config.seed, spawn_key=(restart,))
            rng = np.random.default_rng(seq)
            x = box.sample(rng, 1)[0]
        y = forward(model, x)
        loss, gy = _loss_and_gradient(spec, y)
        if loss > 0.0:
            return Counterexample(x.copy(), y)
        for _ in range(config.steps):
            gx = input_gradient(model, x, gy)
            x = np.clip(x + step * np.sign(gx), box.lower, box.upper)
            y = forward(model, x)
            loss, gy = _loss_and_gradient(spec, y)
            if loss > 0.0:
                return Counterexample(x.copy(), y)
    return None


def run_attack(
    model: Model, box: Hyperrectangle, spec: OutputSpec, config: AttackConfig
) -> Counterexample | None:
    """Dispatch on the configured method; FGSM gets restart points too."""
    if config.method == "pgd":
        return pgd(model, box, spec, config)
    for restart in range(config.restarts):
        if restart == 0:
            x0 = box.center.copy()
        else:
            seq = np.random.SeedSequence(entropy=config.seed, spawn_key=(restart,))
            rng = np.random.default_rng(seq)
            x0 = box.sample(rng, 1)[0]
        x = fgsm(model, box, x0, spec)
        y = forward(model, x)
        if violation_loss(spec, y) > 0.0:
            return Counterexample(x, y)
    return None
