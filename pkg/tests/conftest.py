"""Shared builders for toy networks and ground-truth oracles."""

from __future__ import annotations

import numpy as np

from reluverify.geometry import HalfSpace, Hyperrectangle, OutputSpec
from reluverify.model import Model, Node, forward_batch


def dense(node_id, ref, weight, bias) -> Node:
    return Node(
        node_id,
        "dense",
        [ref],
        {
            "weight": np.asarray(weight, dtype=np.float64),
            "bias": np.asarray(bias, dtype=np.float64),
        },
    )


def relu(node_id, ref) -> Node:
    return Node(node_id, "relu", [ref])


def chain_model(name, widths, weights, biases, final_relu=False) -> Model:
    """dense/relu chain: widths[0] -> ... -> widths[-1]."""
    nodes = []
    prev = "input"
    for i, (w, b) in enumerate(zip(weights, biases)):
        nodes.append(dense(f"d{i}", prev, w, b))
        prev = f"d{i}"
        if i < len(weights) - 1 or final_relu:
            nodes.append(relu(f"r{i}", prev))
            prev = f"r{i}"
    return Model(name, [widths[0]], nodes, prev)


def scalar_affine(a: float, b: float) -> Model:
    """y = a*x + b on a single input."""
    return chain_model("affine", [1, 1], [[[a]]], [[b]])


def random_net(seed: int, max_depth: int = 4, max_width: int = 16) -> Model:
    """Random dense/relu network, often with residual add blocks.

    Everything (sizes, weights, skip placement) derives from the seed;
    a skipped block keeps its width so the add is well-shaped.
    """
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, max_depth + 1))
    n_in = int(rng.integers(1, max_width + 1))
    n_out = int(rng.integers(1, max_width + 1))
    skips = [bool(rng.random() < 0.35) for _ in range(depth - 1)]
    widths = [n_in]
    for i in range(depth - 1):
        widths.append(widths[-1] if skips[i] else int(rng.integers(1, max_width + 1)))
    widths.append(n_out)

    nodes = []
    prev = "input"
    for i in range(depth):
        block_input = prev
        fan_in, fan_out = widths[i], widths[i + 1]
        w = rng.normal(size=(fan_out, fan_in)) / np.sqrt(fan_in)
        b = rng.normal(size=fan_out) * 0.1
        nodes.append(dense(f"d{i}", prev, w, b))
        prev = f"d{i}"
        if i < depth - 1:
            nodes.append(relu(f"r{i}", prev))
            prev = f"r{i}"
            if skips[i]:
                nodes.append(Node(f"skip{i}", "add", [prev, block_input]))
                prev = f"skip{i}"
    return Model(f"random-{seed}", [n_in], nodes, prev)


def random_affine_net(seed: int, max_depth: int = 3, max_width: int = 8) -> Model:
    """Random dense-only network, sometimes with an identity skip add."""
    rng = np.random.default_rng(seed + 50_000)
    depth = int(rng.integers(1, max_depth + 1))
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(depth + 1)]
    nodes = []
    prev = "input"
    for i in range(depth):
        w = rng.normal(size=(widths[i + 1], widths[i]))
        b = rng.normal(size=widths[i + 1])
        nodes.append(dense(f"d{i}", prev, w, b))
        prev = f"d{i}"
        if widths[i] == widths[i + 1] and rng.random() < 0.4:
            nodes.append(Node(f"skip{i}", "add", [prev, nodes[-1].inputs[0]]))
            prev = f"skip{i}"
    return Model(f"affine-{seed}", [widths[0]], nodes, prev)


def compose_affine(model: Model) -> tuple[np.ndarray, np.ndarray]:
    """Recover (W, b) of an affine-only network by basis probing."""
    n = model.input_dim
    b = forward_batch(model, np.zeros((1, n)))[0]
    cols = forward_batch(model, np.eye(n)) - b
    return cols.T, b


def random_box(seed: int, dim: int) -> Hyperrectangle:
    rng = np.random.default_rng(seed + 10_000)
    center = rng.uniform(-1.0, 1.0, size=dim)
    radius = rng.uniform(0.1, 1.0, size=dim)
    return Hyperrectangle(center, radius)


def toy_2441(seed: int) -> Model:
    """The 2-4-4-1 ReLU family used for grid-oracle comparisons."""
    rng = np.random.default_rng(seed)
    ws = [
        rng.normal(size=(4, 2)),
        rng.normal(size=(4, 4)) / 2.0,
        rng.normal(size=(1, 4)),
    ]
    bs = [rng.normal(size=4) * 0.5, rng.normal(size=4) * 0.5, rng.normal(size=1) * 0.5]
    return chain_model(f"toy2441-{seed}", [2, 4, 4, 1], ws, bs)


def grid_outputs(model: Model, box: Hyperrectangle, resolution: int = 500) -> np.ndarray:
    """Outputs on a dense grid over a 2-D input box, shape (res*res, out)."""
    xs = np.linspace(box.lower[0], box.upper[0], resolution)
    ys = np.linspace(box.lower[1], box.upper[1], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)
    return forward_batch(model, pts)


def violates(spec: OutputSpec, y, strict: bool = True) -> bool:
    """Direct halfspace-membership oracle, independent of support functions."""
    y = np.asarray(y, dtype=np.float64)
    if spec.mode == "safe":
        (conj,) = spec.disjuncts
        if strict:
            return any(hs.normal @ y > hs.offset for hs in conj)
        return any(hs.normal @ y >= hs.offset for hs in conj)
    for conj in spec.disjuncts:
        if strict and all(hs.normal @ y < hs.offset for hs in conj):
            return True
        if not strict and all(hs.normal @ y <= hs.offset for hs in conj):
            return True
    return False


def safe_upper(bound: float) -> OutputSpec:
    """Safe spec { y <= bound } on a scalar output."""
    return OutputSpec.safe([HalfSpace([1.0], bound)])


def safe_lower(bound: float) -> OutputSpec:
    """Safe spec { y >= bound } on a scalar output, as -y <= -bound."""
    return OutputSpec.safe([HalfSpace([-1.0], -bound)])
