"""Acceptance suite: one test per criterion, each printing a verdict line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
[PASS]/[FAIL] lines as they complete.  Criterion 11 needs external
assets (see its docstring) and is skipped when they are absent.
"""

import itertools
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from conftest import (
    chain_model,
    compose_affine,
    dense,
    grid_outputs,
    random_affine_net,
    random_box,
    random_net,
    safe_upper,
    toy_2441,
)
from test_specio import MALFORMED

from reluverify.attack import AttackConfig, pgd, violation_loss
from reluverify.bab import Problem, SearchConfig, SplitConfig, verify
from reluverify.cli import main
from reluverify.geometry import Hyperrectangle, Zonotope, interval_hull
from reluverify.model import (
    Model,
    Node,
    append_conjunction_head,
    forward,
    forward_batch,
    input_gradient,
    load_model,
)
from reluverify.model import _run
from reluverify.propagate import (
    CrownSolver,
    IBPSolver,
    propagate_crown,
    propagate_ibp,
    propagate_zono,
)
from reluverify.specio import PropertyError, parse_vnnlib, to_problem


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number}: {description}", flush=True)
        raise
    print(f"[PASS] criterion {number}: {description}", flush=True)


def inside(ys, hull, tol=1e-9):
    """Absolute plus relative containment test against a box."""
    slack = tol + tol * np.abs(ys)
    return np.all(np.abs(ys - hull.center) <= hull.radius + slack)


def grid_problem(seed, target_violated, min_witness=0.0):
    """Toy 2-4-4-1 instance with a grid-oracle verdict of known margin.

    Returns (model, box, spec, oracle_verdict) or None when a filter
    rejects the draw.  ``min_witness`` additionally requires the
    violating grid fraction to reach that mass; gradient falsification
    is only expected to succeed when the witness set is not a needle
    (covering those is exactly what the complete search is for).
    """
    m = toy_2441(3000 + seed)
    box = Hyperrectangle([0.0, 0.0], [1.0, 1.0])
    out = grid_outputs(m, box, resolution=500)[:, 0]
    span = float(np.ptp(out))
    if span < 1e-2:
        return None
    rng = np.random.default_rng(7000 + seed)
    delta = float(rng.uniform(0.05, 0.3)) * span
    if delta < 1e-3:
        return None
    top = float(np.max(out))
    bound = top - delta if target_violated else top + delta
    if target_violated and np.mean(out > bound + 1e-3) < min_witness:
        return None
    oracle = "violated" if target_violated else "holds"
    return m, box, safe_upper(bound), oracle


def test_c01_soundness_fuzz():
    """200 random nets: sampled outputs inside all three solvers' bounds."""
    with criterion(1, "soundness fuzz over 200 random networks"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(0)
        for seed in range(200):
            m = random_net(seed)
            box = random_box(seed, m.input_dim)
            ys = forward_batch(m, box.sample(rng, 1000))
            out_ibp, _ = propagate_ibp(m, box)
            assert inside(ys, out_ibp)
            out_zono, _ = propagate_zono(m, Zonotope.from_box(box))
            assert inside(ys, interval_hull(out_zono))
            out_crown, _, _ = propagate_crown(m, box)
            assert inside(ys, out_crown)
        elapsed = time.perf_counter() - t0
        assert elapsed <= 120.0, f"took {elapsed:.1f}s"


def test_c02_affine_exactness():
    """Zonotope hull and concretized linear bounds are exact on affine nets."""
    with criterion(2, "affine exactness for zonotope and linear-bounds solvers"):
        for seed in range(50):
            m = random_affine_net(seed)
            box = random_box(seed, m.input_dim)
            w, b = compose_affine(m)
            want_c = w @ box.center + b
            want_r = np.abs(w) @ box.radius
            hull = interval_hull(propagate_zono(m, Zonotope.from_box(box))[0])
            assert np.max(np.abs(hull.center - want_c)) <= 1e-9
            assert np.max(np.abs(hull.radius - want_r)) <= 1e-9
            out, _, _ = propagate_crown(m, box)
            assert np.max(np.abs(out.center - want_c)) <= 1e-9
            assert np.max(np.abs(out.radius - want_r)) <= 1e-9


def test_c03_bab_completeness_at_desk_scale():
    """50 margin-filtered grid-oracle problems: full agreement, no unknowns."""
    with criterion(3, "branch-and-bound matches the grid oracle on 50 problems"):
        t0 = time.perf_counter()
        search = SearchConfig(max_iter=10_000)
        split = SplitConfig(num_splits=1)
        checked = 0
        for seed in itertools.count():
            instance = grid_problem(seed, target_violated=(seed % 2 == 0))
            if instance is None:
                continue
            m, box, spec, oracle = instance
            report = verify(search, split, IBPSolver(), Problem(m, box, spec))
            assert report.status == oracle, f"seed {seed}: {report.status} != {oracle}"
            checked += 1
            if checked == 50:
                break
        elapsed = time.perf_counter() - t0
        assert elapsed <= 300.0, f"took {elapsed:.1f}s"


def test_c04_crown_hand_check():
    """relu over [-1, 1] concretizes to exactly [0, 1]."""
    with criterion(4, "linear-relaxation hand check on a single relu"):
        m = Model("relu", [1], [Node("r0", "relu", ["input"])], "r0")
        out, _, _ = propagate_crown(m, Hyperrectangle([0.0], [1.0]))
        assert out.lower[0] == 0.0
        assert out.upper[0] == 1.0


def test_c05_gradient_correctness():
    """Reverse-mode gradients match central finite differences."""
    with criterion(5, "input gradients match finite differences on 20 nets"):
        h = 1e-5
        for seed in range(20):
            m = random_net(500 + seed)
            rng = np.random.default_rng(900 + seed)
            checked = 0
            attempts = 0
            while checked < 100 and attempts < 2000:
                attempts += 1
                x = rng.uniform(-2, 2, size=m.input_dim)
                values = _run(m, x[None, :])
                margins = [
                    np.min(np.abs(values[n.inputs[0]]))
                    for n in m.nodes
                    if n.op == "relu"
                ]
                if margins and min(margins) < 1e-3:
                    continue
                ct = rng.normal(size=m.output_dim)
                got = input_gradient(m, x, ct)
                want = np.zeros_like(x)
                for i in range(x.size):
                    e = np.zeros_like(x)
                    e[i] = h
                    want[i] = (ct @ forward(m, x + e) - ct @ forward(m, x - e)) / (2 * h)
                denom = max(np.max(np.abs(want)), 1e-8)
                assert np.max(np.abs(got - want)) / denom <= 1e-5
                checked += 1
            assert checked == 100, f"net {seed}: only {checked} valid points"


def test_c06_falsification_power():
    """PGD finds confirmed counterexamples on grid-violated problems."""
    with criterion(6, "PGD falsifies at least 90% of 20 violated problems"):
        cfg = AttackConfig(method="pgd", steps=100, restarts=5, seed=0)
        found = 0
        total = 0
        for seed in itertools.count(1000):
            instance = grid_problem(seed, target_violated=True, min_witness=0.05)
            if instance is None:
                continue
            m, box, spec, _ = instance
            total += 1
            cex = pgd(m, box, spec, cfg)
            if cex is not None:
                # every returned counterexample re-evaluates concretely
                assert np.array_equal(forward(m, cex.input), cex.output)
                assert violation_loss(spec, cex.output) > 0.0
                assert box.contains(cex.input, tol=1e-12)
                found += 1
            if total == 20:
                break
        assert found >= 18, f"only {found}/20 falsified"


def test_c07_conjunction_head():
    """Min-tree head equals the exact margin minimum to 1e-12."""
    with criterion(7, "conjunction head matches exact min on 1000 vectors"):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            k = int(rng.integers(2, 11))
            ident = Model(
                "id", [k], [dense("d0", "input", np.eye(k), np.zeros(k))], "d0"
            )
            head = append_conjunction_head(ident, np.eye(k), np.zeros(k))
            margins = rng.normal(size=k) * rng.uniform(0.5, 2.0)
            assert abs(forward(head, margins)[0] - np.min(margins)) <= 1e-12


def test_c08_parser_golden_and_malformed():
    """Golden parses match hand-written structures; bad files never crash."""
    with criterion(8, "property parser golden tests plus malformed corpus"):
        pf = parse_vnnlib(
            "(declare-const X_0 Real)(declare-const Y_0 Real)"
            "(assert (>= X_0 0.0))(assert (<= X_0 1.0))(assert (<= Y_0 0.0))"
        )
        assert pf.num_inputs == 1 and pf.num_outputs == 1
        assert pf.input_low[0] == 0.0 and pf.input_high[0] == 1.0
        assert len(pf.output) == 1 and len(pf.output[0]) == 1
        assert np.array_equal(pf.output[0][0].normal, [1.0])
        assert pf.output[0][0].offset == 0.0

        acas_like = "\n".join(
            [f"(declare-const X_{i} Real)" for i in range(5)]
            + [f"(declare-const Y_{i} Real)" for i in range(5)]
            + [f"(assert (>= X_{i} -0.5))" for i in range(5)]
            + [f"(assert (<= X_{i} 0.5))" for i in range(5)]
            + ["(assert (>= Y_0 3.9911))"]
        )
        pf = parse_vnnlib(acas_like)
        assert pf.num_inputs == 5 and pf.num_outputs == 5
        assert len(pf.output) == 1
        atom = pf.output[0][0]
        assert np.array_equal(atom.normal, [-1.0, 0.0, 0.0, 0.0, 0.0])
        assert atom.offset == -3.9911

        assert len(MALFORMED) >= 20
        for text in MALFORMED:
            with pytest.raises(PropertyError):
                parse_vnnlib(text)


def test_c09_cli_determinism(tmp_path):
    """Identical flags and seed give identical reports modulo timing."""
    with criterion(9, "verify command is deterministic given a seed"):
        model = {
            "name": "line",
            "input_shape": [1],
            "nodes": [{"id": "d0", "op": "dense", "inputs": ["input"],
                       "weight": [[1.0]], "bias": [0.0]}],
            "output": "d0",
        }
        prop = {"input": {"low": [-1.0], "high": [1.0]},
                "unsafe": [[{"a": [1.0], "b": 0.0}]]}
        mp = tmp_path / "m.json"
        pp = tmp_path / "p.json"
        mp.write_text(json.dumps(model))
        pp.write_text(json.dumps(prop))
        docs = []
        for name in ("r1.json", "r2.json"):
            rp = tmp_path / name
            code = main(["verify", "--model", str(mp), "--property", str(pp),
                         "--result", str(rp), "--seed", "42"])
            assert code == 1
            doc = json.loads(rp.read_text())
            doc.pop("timestamp")
            doc["stats"].pop("wall_ms")
            docs.append(doc)
        assert docs[0] == docs[1]


def test_c10_zonotope_skip_cancellation():
    """x - x collapses to the point 0 under shared symbols; boxes cannot."""
    with criterion(10, "skip-connection cancellation under the zonotope solver"):
        for n in (1, 4, 8):
            eye = np.eye(n)
            nodes = [
                dense("pos", "input", eye, np.zeros(n)),
                dense("neg", "input", -eye, np.zeros(n)),
                Node("sum", "add", ["pos", "neg"]),
            ]
            m = Model("cancel", [n], nodes, "sum")
            box = Hyperrectangle(np.zeros(n), np.ones(n))
            hull = interval_hull(propagate_zono(m, Zonotope.from_box(box))[0])
            assert np.max(np.abs(hull.center)) <= 1e-12
            assert np.max(hull.radius) <= 1e-12
            ibp_out, _ = propagate_ibp(m, box)
            assert np.all(ibp_out.radius == 2.0)


ACAS_DIR = os.environ.get("RELUVERIFY_ACAS_DIR", "tests/assets/acasxu")


def test_c11_acas_benchmark_optional():
    """Optional: 45 ACAS Xu networks against the phi-1 property.

    Expects ``RELUVERIFY_ACAS_DIR`` (default tests/assets/acasxu) to hold
    the 45 converted model JSON files plus ``prop_1.vnnlib``; each net
    must verify as holds with the linear-bounds solver.
    """
    asset_dir = Path(ACAS_DIR)
    models = sorted(asset_dir.glob("*.json"))
    prop = asset_dir / "prop_1.vnnlib"
    if len(models) != 45 or not prop.exists():
        pytest.skip(f"ACAS assets not found under {asset_dir}")
    with criterion(11, "all 45 ACAS networks verify as holds"):
        pf = parse_vnnlib(prop.read_text())
        for model_path in models:
            m = load_model(model_path)
            problem = to_problem(pf, m)
            t0 = time.perf_counter()
            report = verify(
                SearchConfig(max_iter=1_000_000, timeout_s=60.0),
                SplitConfig(num_splits=1),
                CrownSolver(),
                problem,
            )
            elapsed = time.perf_counter() - t0
            print(f"  {model_path.name}: {report.status} in {elapsed:.2f}s", flush=True)
            assert report.status == "holds"
