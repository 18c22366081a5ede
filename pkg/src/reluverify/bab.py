"""Branch-and-bound search over the input set.

The engine repeatedly pops branches from a FIFO bank, propagates bounds
with the chosen solver, and checks the result against the output spec.
Proved branches retire; undecided branches are bisected; a candidate
violation is confirmed concretely (center evaluation, then a short PGD
run) before the verdict Violated is returned, so reported
counterexamples always re-evaluate to real violations.

Zonotope input sets are branched in their symbol-coefficient box: a
branch restricts every eps_i to a sub-interval of [-1, 1] and the
corresponding zonotope is re-instantiated per branch.
"""

from __future__ import annotations

import itertools
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, Counterexample, pgd, violation_loss
from .geometry import (
    Hyperrectangle,
    InclusionStatus,
    OutputSpec,
    Zonotope,
    check_inclusion,
)
from .model import Model, forward, strip_softmax

__all__ = [
    "Problem",
    "Branch",
    "SearchConfig",
    "SplitConfig",
    "RunStats",
    "VerdictReport",
    "UnsplittableBranch",
    "PreparedProblem",
    "prepare_problem",
    "bisect",
    "search_branches",
    "verify",
]


class UnsplittableBranch(Exception):
    """The branch is a single point; bisection cannot refine it."""


@dataclass(frozen=True, eq=False)
class Problem:
    """A verification instance: network, input set, output spec."""

    model: Model
    input_set: object  # Hyperrectangle or Zonotope
    spec: OutputSpec

    def __post_init__(self):
        if not isinstance(self.input_set, (Hyperrectangle, Zonotope)):
            raise TypeError("input_set must be a Hyperrectangle or Zonotope")
        if self.input_set.dim != self.model.input_dim:
            raise ValueError(
                f"input set dimension {self.input_set.dim} does not match "
                f"model input {self.model.input_dim}"
            )
        if self.spec.dim != self.model.output_dim:
            raise ValueError(
                f"spec dimension {self.spec.dim} does not match "
                f"model output {self.model.output_dim}"
            )


@dataclass(frozen=True, eq=False)
class Branch:
    """One sub-problem: a box (or symbol sub-box) with its search depth."""

    input_subset: Hyperrectangle
    depth: int
    id: int


@dataclass(frozen=True)
class SearchConfig:
    strategy: str = "bfs"
    max_iter: int = 200
    batch_size: int = 1
    timeout_s: float | None = None

    def __post_init__(self):
        if self.strategy != "bfs":
            raise ValueError(f"unknown search strategy {self.strategy!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.timeout_s is not None and self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


@dataclass(frozen=True)
class SplitConfig:
    method: str = "bisect"
    num_splits: int = 1

    def __post_init__(self):
        if self.method != "bisect":
            raise ValueError(f"unknown split method {self.method!r}")
        if self.num_splits < 1:
            raise ValueError("num_splits must be >= 1")


@dataclass
class RunStats:
    branches_created: int = 0
    branches_verified: int = 0
    iterations: int = 0
    wall_ms: float = 0.0


@dataclass(frozen=True, eq=False)
class VerdictReport:
    """Outcome of a verification run plus bookkeeping for reports."""

    status: str  # holds | violated | unknown
    counterexample: Counterexample | None
    unknown_reason: str | None
    stats: RunStats
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "status": self.status,
            "stats": {
                "branches_created": self.stats.branches_created,
                "branches_verified": self.stats.branches_verified,
                "iterations": self.stats.iterations,
                "wall_ms": self.stats.wall_ms,
            },
            "config": self.config,
        }
        if self.counterexample is not None:
            doc["counterexample"] = {
                "input": self.counterexample.input.tolist(),
                "output": self.counterexample.output.tolist(),
            }
        if self.unknown_reason is not None:
            doc["unknown_reason"] = self.unknown_reason
        return doc


class PreparedProblem:
    """Problem after preprocessing: stripped model, seeded branch geometry.

    For a box input set, branches are sub-boxes of the input box.  For a
    zonotope, branches are sub-boxes of the symbol box [-1, 1]^k and
    :meth:`realize` rebuilds the zonotope a branch stands for.
    """

    def __init__(self, model: Model, spec: OutputSpec, input_set, solver):
        self.model = model
        self.spec = spec
        self.input_set = input_set
        self.solver = solver
        if isinstance(input_set, Zonotope):
            k = input_set.order
            self.root_box = Hyperrectangle(np.zeros(k), np.ones(k))
            self.split_weights = (
                np.max(np.abs(input_set.generators), axis=1) if k else np.ones(0)
            )
        else:
            self.root_box = input_set
            self.split_weights = None

    @property
    def is_zono_input(self) -> bool:
        return isinstance(self.input_set, Zonotope)

    def realize(self, branch: Branch):
        """Concrete input set represented by a branch."""
        if not self.is_zono_input:
            return branch.input_subset
        z = self.input_set
        eps_c, eps_r = branch.input_subset.center, branch.input_subset.radius
        return Zonotope(
            z.center + eps_c @ z.generators,
            eps_r[:, None] * z.generators,
            z.symbol_ids,
        )

    def center_point(self, branch: Branch) -> np.ndarray:
        """A concrete input inside the branch (and inside the input set)."""
        if not self.is_zono_input:
            return branch.input_subset.center.copy()
        return self.input_set.concretize(branch.input_subset.center)


def prepare_problem(problem: Problem, solver) -> PreparedProblem:
    """Strip softmax, check solver/model compatibility, seed the root."""
    model = strip_softmax(problem.model)
    solver.validate(model)
    return PreparedProblem(model, problem.spec, problem.input_set, solver)


def bisect(branch: Branch, num_splits: int, first_id: int = 0, weights=None):
    """Halve the ``num_splits`` widest dimensions of a branch.

    Widest means largest radius (optionally scaled by ``weights``, used
    for symbol boxes where each symbol's generator norm sets its
    leverage); ties go to the lowest index.  Children are returned in
    lexicographic low-half-first order with consecutive ids starting at
    ``first_id``.  Dimensions of zero radius are never split; if every
    radius is zero the branch is a point and UnsplittableBranch raises.
    """
    box = branch.input_subset
    radii = box.radius
    score = radii if weights is None else radii * weights
    if not radii.size or np.max(score) <= 0.0:
        raise UnsplittableBranch(f"branch {branch.id} cannot be split further")
    order = np.argsort(-score, kind="stable")
    dims = [int(d) for d in order[:num_splits] if radii[d] > 0.0 and score[d] > 0.0]
    dims.sort()

    children = []
    for picks in itertools.product((0, 1), repeat=len(dims)):
        center = box.center.copy()
        radius = box.radius.copy()
        for d, hi in zip(dims, picks):
            radius[d] = box.radius[d] / 2.0
            center[d] = box.center[d] - radius[d] + 2.0 * hi * radius[d]
        children.append(
            Branch(Hyperrectangle(center, radius), branch.depth + 1, first_id + len(children))
        )
    return children


def _confirm_violation(
    prepared: PreparedProblem, branch: Branch, seed: int
) -> Counterexample | None:
    """Confirmation ladder for a candidate violation: center, then PGD."""
    x = prepared.center_point(branch)
    y = forward(prepared.model, x)
    if violation_loss(prepared.spec, y) > 0.0:
        return Counterexample(x, y)
    if prepared.is_zono_input:
        return None  # PGD over the ambient box could leave the zonotope
    branch_seed = int(
        np.random.SeedSequence(entropy=seed, spawn_key=(branch.id,)).generate_state(1)[0]
    )
    cfg = AttackConfig(method="pgd", steps=50, restarts=1, seed=branch_seed)
    return pgd(prepared.model, branch.input_subset, prepared.spec, cfg)


def _evaluate(prepared: PreparedProblem, branch: Branch) -> InclusionStatus:
    try:
        reach, _ = prepared.solver.propagate(prepared.model, prepared.realize(branch))
        return check_inclusion(reach, prepared.spec)
    except Exception as exc:
        raise RuntimeError(f"propagation failed on branch {branch.id}: {exc}") from exc


def search_branches(
    search: SearchConfig,
    split: SplitConfig,
    solver,
    prepared: PreparedProblem,
    seed: int = 0,
    jobs: int = 1,
) -> VerdictReport:
    """BFS over the branch bank until proved, falsified, or out of budget."""
    if split.num_splits > max(prepared.root_box.dim, 1):
        raise ValueError(
            f"num_splits {split.num_splits} exceeds input dimension {prepared.root_box.dim}"
        )
    t0 = time.perf_counter()
    stats = RunStats(branches_created=1)
    config = _config_echo(search, split, solver, seed)
    bank = deque([Branch(prepared.root_box, 0, 0)])
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def report(status, cex=None, reason=None):
        stats.wall_ms = (time.perf_counter() - t0) * 1000.0
        if pool is not None:
            pool.shutdown(wait=False)
        return VerdictReport(status, cex, reason, stats, config)

    def timed_out() -> bool:
        return (
            search.timeout_s is not None
            and time.perf_counter() - t0 > search.timeout_s
        )

    try:
        while bank:
            if stats.iterations >= search.max_iter:
                return report("unknown", reason="max_iter")
            if timed_out():
                return report("unknown", reason="timeout")
            stats.iterations += 1
            batch = [bank.popleft() for _ in range(min(search.batch_size, len(bank)))]
            if pool is not None:
                outcomes = list(pool.map(lambda b: _evaluate(prepared, b), batch))
            else:
                outcomes = []
                for b in batch:
                    if outcomes and timed_out():  # check between evaluations
                        return report("unknown", reason="timeout")
                    outcomes.append(_evaluate(prepared, b))

            # Merge in ascending branch id so batching cannot change the verdict.
            for branch, outcome in sorted(zip(batch, outcomes), key=lambda t: t[0].id):
                if outcome is InclusionStatus.HOLDS:
                    stats.branches_verified += 1
                    continue
                if outcome is InclusionStatus.VIOLATED_CANDIDATE:
                    cex = _confirm_violation(prepared, branch, seed)
                    if cex is not None:
                        return report("violated", cex=cex)
                # Unconfirmed candidates are refined like unknowns.
                try:
                    children = bisect(
                        branch,
                        split.num_splits,
                        first_id=stats.branches_created,
                        weights=prepared.split_weights,
                    )
                except UnsplittableBranch:
                    bank.append(branch)  # point branch: spin until budget runs out
                    continue
                stats.branches_created += len(children)
                bank.extend(children)
        return report("holds")
    finally:
        if pool is not None:
            pool.shutdown(wait=False)


def _config_echo(search: SearchConfig, split: SplitConfig, solver, seed: int) -> dict:
    return {
        "solver": {"name": solver.name, **solver.params()},
        "search": {
            "strategy": search.strategy,
            "max_iter": search.max_iter,
            "batch_size": search.batch_size,
            "timeout_s": search.timeout_s,
        },
        "split": {"method": split.method, "num_splits": split.num_splits},
        "seed": seed,
    }


def verify(
    search: SearchConfig,
    split: SplitConfig,
    solver,
    problem: Problem,
    seed: int = 0,
    jobs: int = 1,
) -> VerdictReport:
    """Full pipeline: prepare the problem, then search the branch bank."""
    prepared = prepare_problem(problem, solver)
    return search_branches(search, split, solver, prepared, seed=seed, jobs=jobs)
