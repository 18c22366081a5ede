"""Bound propagation through the network graph.

Three solvers with a shared contract: map an input set to a sound
output set plus a per-node bounds trace.

* interval propagation (boxes, all ops, loosest),
* zonotope propagation (exact through affine ops, shared symbols across
  graph paths so skip connections cancel, one fresh symbol per unstable
  ReLU),
* backward linear relaxation (dense graphs only): linear lower/upper
  bounding functions of the input, substituted backward from the output
  and concretized over the input box.

All propagation is pure and deterministic; fixed left-to-right
summation order throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Hyperrectangle,
    SymbolAllocator,
    Zonotope,
    interval_hull,
    reduce_generators,
    relu_zono,
)
from .model import INPUT_ID, Model, Node, _conv2d_batch, _pool_windows

__all__ = [
    "BoundsTrace",
    "LinearBounds",
    "propagate_ibp",
    "propagate_zono",
    "propagate_crown",
    "concretize",
    "IBPSolver",
    "ZonotopeSolver",
    "CrownSolver",
    "solver_by_name",
]

CROWN_OPS = ("dense", "relu", "flatten", "add", "identity")


@dataclass(frozen=True, eq=False)
class BoundsTrace:
    """Post-node bounds for every node, keyed by id in topological order."""

    bounds: dict

    def __getitem__(self, node_id: str) -> Hyperrectangle:
        return self.bounds[node_id]

    def items(self):
        return self.bounds.items()

    def __len__(self):
        return len(self.bounds)


@dataclass(frozen=True, eq=False)
class LinearBounds:
    """A_low x + b_low <= f(x) <= A_up x + b_up over the input box."""

    A_low: np.ndarray
    b_low: np.ndarray
    A_up: np.ndarray
    b_up: np.ndarray


def _check_input_dim(model: Model, dim: int):
    if dim != model.input_dim:
        raise ValueError(
            f"input set has dimension {dim}, model expects {model.input_dim}"
        )


def _box_of(c, r) -> Hyperrectangle:
    return Hyperrectangle(c.reshape(-1), r.reshape(-1))


def propagate_ibp(model: Model, box: Hyperrectangle):
    """Interval propagation; returns the output box and the full trace.

    Sound for every supported op: affine ops map center and absolute
    radius, ReLU and maxpool act on the endpoint intervals directly.
    """
    _check_input_dim(model, box.dim)
    vals = {INPUT_ID: (box.center.reshape(model.input_shape),
                       box.radius.reshape(model.input_shape))}
    trace = {}
    for n in model.nodes:
        args = [vals[r] for r in n.inputs]
        vals[n.id] = _ibp_node(n, args)
        trace[n.id] = _box_of(*vals[n.id])
    out = trace[model.output]
    return out, BoundsTrace(trace)


def _ibp_node(n: Node, args):
    (c, r) = args[0]
    if n.op == "dense":
        w, b = n.params["weight"], n.params["bias"]
        return w @ c + b, np.abs(w) @ r
    if n.op == "conv2d":
        k, b = n.params["kernel"], n.params["bias"]
        st, pd = n.params["stride"], n.params["padding"]
        zero = np.zeros_like(b)
        c2 = _conv2d_batch(c[None], k, b, st, pd)[0]
        r2 = _conv2d_batch(r[None], np.abs(k), zero, st, pd)[0]
        return c2, r2
    if n.op == "relu":
        low = np.maximum(c - r, 0.0)
        high = np.maximum(c + r, 0.0)
        return (low + high) / 2.0, (high - low) / 2.0
    if n.op == "maxpool2d":
        lo = _pool_windows((c - r)[None], n.params["window"], n.params["stride"])
        hi = _pool_windows((c + r)[None], n.params["window"], n.params["stride"])
        low, high = np.max(lo, axis=(4, 5))[0], np.max(hi, axis=(4, 5))[0]
        return (low + high) / 2.0, (high - low) / 2.0
    if n.op == "avgpool2d":
        cw = _pool_windows(c[None], n.params["window"], n.params["stride"])
        rw = _pool_windows(r[None], n.params["window"], n.params["stride"])
        return np.mean(cw, axis=(4, 5))[0], np.mean(rw, axis=(4, 5))[0]
    if n.op == "flatten":
        return c.reshape(-1), r.reshape(-1)
    if n.op == "batchnorm":
        s, b = n.params["scale"], n.params["bias"]
        if c.ndim == 3:
            s, b = s[:, None, None], b[:, None, None]
        return c * s + b, r * np.abs(s)
    if n.op == "add":
        c2, r2 = args[1]
        return c + c2, r + r2
    if n.op == "identity":
        return c, r
    raise ValueError(f"op {n.op!r} not supported by interval propagation")


def propagate_zono(model: Model, z: Zonotope, max_generators: int | None = None):
    """Zonotope propagation with symbol sharing across graph paths.

    Affine ops (dense, conv, avgpool, batchnorm, add) are exact; ReLU
    uses the parallelogram relaxation of :func:`relu_zono`.  Because
    symbol ids are shared, parallel paths recombined by ``add`` cancel
    exactly (x - x propagates to the point 0).  Maxpool is rejected.
    With ``max_generators`` set, any node whose order exceeds the cap
    (floored at the node dimension) is reduced, trading precision for
    cost.
    """
    _check_input_dim(model, z.dim)
    if any(n.op == "maxpool2d" for n in model.nodes):
        raise ValueError("zonotope propagation does not support maxpool2d")
    symbols = SymbolAllocator.after(z)
    vals = {INPUT_ID: z}
    trace = {}
    for n in model.nodes:
        args = [vals[r] for r in n.inputs]
        out = _zono_node(n, args, model, symbols)
        if max_generators is not None:
            out = reduce_generators(out, max(max_generators, out.dim), symbols)
        vals[n.id] = out
        trace[n.id] = interval_hull(out)
    return vals[model.output], BoundsTrace(trace)


def _shaped(z: Zonotope, shape):
    return z.center.reshape(shape), z.generators.reshape(z.order, *shape)


def _zono_node(n: Node, args, model: Model, symbols: SymbolAllocator) -> Zonotope:
    z = args[0]
    if n.op == "dense":
        w, b = n.params["weight"], n.params["bias"]
        return Zonotope(w @ z.center + b, z.generators @ w.T, z.symbol_ids)
    if n.op == "relu":
        return relu_zono(z, symbols)
    if n.op == "identity" or n.op == "flatten":
        return z  # coordinates are already stored flat, row-major
    if n.op == "conv2d":
        in_shape = model.node(n.inputs[0]).shape if n.inputs[0] != INPUT_ID else model.input_shape
        c, g = _shaped(z, in_shape)
        k, b = n.params["kernel"], n.params["bias"]
        st, pd = n.params["stride"], n.params["padding"]
        zero = np.zeros_like(b)
        c2 = _conv2d_batch(c[None], k, b, st, pd)[0]
        g2 = _conv2d_batch(g, k, zero, st, pd) if z.order else np.zeros((0, *n.shape))
        return Zonotope(c2.reshape(-1), g2.reshape(z.order, -1), z.symbol_ids)
    if n.op == "avgpool2d":
        in_shape = model.node(n.inputs[0]).shape if n.inputs[0] != INPUT_ID else model.input_shape
        c, g = _shaped(z, in_shape)
        win, st = n.params["window"], n.params["stride"]
        c2 = np.mean(_pool_windows(c[None], win, st), axis=(4, 5))[0]
        if z.order:
            g2 = np.mean(_pool_windows(g, win, st), axis=(4, 5))
        else:
            g2 = np.zeros((0, *n.shape))
        return Zonotope(c2.reshape(-1), g2.reshape(z.order, -1), z.symbol_ids)
    if n.op == "batchnorm":
        s, b = n.params["scale"], n.params["bias"]
        if len(n.shape) == 3:
            s = np.broadcast_to(s[:, None, None], n.shape).reshape(-1)
            b = np.broadcast_to(b[:, None, None], n.shape).reshape(-1)
        return Zonotope(z.center * s + b, z.generators * s, z.symbol_ids)
    if n.op == "add":
        return _zono_add(z, args[1])
    raise ValueError(f"op {n.op!r} not supported by zonotope propagation")


def _zono_add(a: Zonotope, b: Zonotope) -> Zonotope:
    """Minkowski-free sum: generators with equal symbol ids are summed."""
    ids = np.union1d(a.symbol_ids, b.symbol_ids)
    gens = np.zeros((ids.size, a.dim))
    gens[np.searchsorted(ids, a.symbol_ids)] += a.generators
    gens[np.searchsorted(ids, b.symbol_ids)] += b.generators
    return Zonotope(a.center + b.center, gens, ids)


# ---------------------------------------------------------------------------
# Backward linear relaxation
# ---------------------------------------------------------------------------


def _relu_coeffs(low, high):
    """Per-neuron slopes/intercepts for the ReLU relaxation.

    Upper line: identity / zero for stable neurons, slope u/(u-l) with
    intercept -ul/(u-l) when the neuron straddles zero.  Lower line:
    slope 1 when u > -l else 0 (tie goes to 0), which picks the smaller
    concretized area.
    """
    passthrough = low >= 0.0
    zeroed = ~passthrough & (high <= 0.0)
    unstable = ~passthrough & ~zeroed
    s_up = passthrough.astype(np.float64)
    t_up = np.zeros_like(low)
    u, l = high[unstable], low[unstable]
    s_up[unstable] = u / (u - l)
    t_up[unstable] = -u * l / (u - l)
    s_lo = passthrough.astype(np.float64)
    s_lo[unstable] = (u > -l).astype(np.float64)
    return s_lo, s_up, t_up


def _backward_substitute(model: Model, start_id: str, coeffs: dict) -> LinearBounds:
    """Express bounds on the value at ``start_id`` linearly in the input.

    ``coeffs`` maps each ReLU node id to its relaxation; every ReLU
    reachable backward from ``start_id`` must already be present.
    """
    size = int(np.prod(model.node(start_id).shape))
    n_in = model.input_dim
    eye = np.eye(size)
    acc = {start_id: (eye.copy(), eye.copy())}  # id -> (A_low, A_up)
    b_lo = np.zeros(size)
    b_up = np.zeros(size)
    a_in_lo = np.zeros((size, n_in))
    a_in_up = np.zeros((size, n_in))

    def push(ref, a_lo, a_up):
        nonlocal a_in_lo, a_in_up
        if ref == INPUT_ID:
            a_in_lo = a_in_lo + a_lo
            a_in_up = a_in_up + a_up
        elif ref in acc:
            acc[ref] = (acc[ref][0] + a_lo, acc[ref][1] + a_up)
        else:
            acc[ref] = (a_lo, a_up)

    for n in reversed(model.nodes):
        if n.id not in acc:
            continue
        a_lo, a_up = acc.pop(n.id)
        if n.op == "dense":
            w, b = n.params["weight"], n.params["bias"]
            b_lo += a_lo @ b
            b_up += a_up @ b
            push(n.inputs[0], a_lo @ w, a_up @ w)
        elif n.op == "relu":
            s_lo, s_up, t_up = coeffs[n.id]
            up_pos, up_neg = np.maximum(a_up, 0.0), np.minimum(a_up, 0.0)
            lo_pos, lo_neg = np.maximum(a_lo, 0.0), np.minimum(a_lo, 0.0)
            b_up += up_pos @ t_up
            b_lo += lo_neg @ t_up
            push(
                n.inputs[0],
                lo_pos * s_lo + lo_neg * s_up,
                up_pos * s_up + up_neg * s_lo,
            )
        elif n.op == "add":
            push(n.inputs[0], a_lo, a_up)
            push(n.inputs[1], a_lo.copy(), a_up.copy())
        elif n.op in ("identity", "flatten"):
            push(n.inputs[0], a_lo, a_up)
        else:
            raise ValueError(f"op {n.op!r} not supported by the linear-bounds solver")
    return LinearBounds(a_in_lo, b_lo, a_in_up, b_up)


def concretize(lb: LinearBounds, box: Hyperrectangle) -> Hyperrectangle:
    """Exact min/max of the bounding lines over the input box."""
    if lb.A_low.shape[1] != box.dim:
        raise ValueError(
            f"linear bounds expect dimension {lb.A_low.shape[1]}, box has {box.dim}"
        )
    low = lb.b_low + lb.A_low @ box.center - np.abs(lb.A_low) @ box.radius
    high = lb.b_up + lb.A_up @ box.center + np.abs(lb.A_up) @ box.radius
    # Guard against sub-ulp inversions when both lines coincide.
    return Hyperrectangle((low + high) / 2.0, np.maximum((high - low) / 2.0, 0.0))


def propagate_crown(model: Model, box: Hyperrectangle, ibp_intermediate: bool = False):
    """Backward linear-relaxation propagation over a dense graph.

    Pre-activation bounds for each ReLU come from a full backward
    substitution to that layer (or from interval propagation when
    ``ibp_intermediate`` is set, trading tightness for speed).  Returns
    the concretized output box, the output's linear bounds, and a trace
    of concretized per-node boxes.
    """
    _check_input_dim(model, box.dim)
    unsupported = [n.op for n in model.nodes if n.op not in CROWN_OPS]
    if unsupported:
        raise ValueError(
            f"op {unsupported[0]!r} not supported by the linear-bounds solver"
        )
    ibp_trace = propagate_ibp(model, box)[1] if ibp_intermediate else None

    coeffs = {}
    for n in model.nodes:
        if n.op != "relu":
            continue
        ref = n.inputs[0]
        if ibp_intermediate:
            pre = ibp_trace[ref] if ref != INPUT_ID else box
        elif ref == INPUT_ID:
            pre = box
        else:
            pre = concretize(_backward_substitute(model, ref, coeffs), box)
        coeffs[n.id] = _relu_coeffs(pre.lower, pre.upper)

    trace = {}
    out_lb = None
    for n in model.nodes:
        lb = _backward_substitute(model, n.id, coeffs)
        trace[n.id] = concretize(lb, box)
        if n.id == model.output:
            out_lb = lb
    return trace[model.output], out_lb, BoundsTrace(trace)


# ---------------------------------------------------------------------------
# Solver façades used by the search engine and the CLI
# ---------------------------------------------------------------------------


class IBPSolver:
    """Interval solver; accepts every op except softmax."""

    name = "ibp"

    def params(self) -> dict:
        return {}

    def validate(self, model: Model):
        bad = [n.id for n in model.nodes if n.op == "softmax"]
        if bad:
            raise ValueError(f"softmax node {bad[0]!r} must be stripped first")

    def propagate(self, model: Model, input_set):
        if isinstance(input_set, Zonotope):
            input_set = interval_hull(input_set)
        return propagate_ibp(model, input_set)


class ZonotopeSolver:
    """Zonotope solver; exact on affine graphs, rejects maxpool."""

    name = "zonotope"

    def __init__(self, max_generators: int | None = None):
        self.max_generators = max_generators

    def params(self) -> dict:
        return {"max_generators": self.max_generators}

    def validate(self, model: Model):
        for n in model.nodes:
            if n.op == "softmax":
                raise ValueError(f"softmax node {n.id!r} must be stripped first")
            if n.op == "maxpool2d":
                raise ValueError(
                    f"node {n.id!r}: maxpool2d is not supported by the zonotope solver"
                )

    def propagate(self, model: Model, input_set):
        if isinstance(input_set, Hyperrectangle):
            input_set = Zonotope.from_box(input_set)
        if self.max_generators is not None:
            symbols = SymbolAllocator.after(input_set)
            cap = max(self.max_generators, input_set.dim)
            input_set = reduce_generators(input_set, cap, symbols)
        return propagate_zono(model, input_set, max_generators=self.max_generators)


class CrownSolver:
    """Backward linear-relaxation solver for dense/relu/add graphs."""

    name = "crown"

    def __init__(self, ibp_intermediate: bool = False):
        self.ibp_intermediate = ibp_intermediate

    def params(self) -> dict:
        return {"ibp_intermediate": self.ibp_intermediate}

    def validate(self, model: Model):
        for n in model.nodes:
            if n.op == "softmax":
                raise ValueError(f"softmax node {n.id!r} must be stripped first")
            if n.op not in CROWN_OPS:
                raise ValueError(
                    f"node {n.id!r}: op {n.op!r} is not supported by the "
                    f"linear-bounds solver (supported: {', '.join(CROWN_OPS)})"
                )

    def propagate(self, model: Model, input_set):
        if isinstance(input_set, Zonotope):
            input_set = interval_hull(input_set)
        out, _, trace = propagate_crown(model, input_set, self.ibp_intermediate)
        return out, trace


def solver_by_name(name: str, **kwargs):
    solvers = {"ibp": IBPSolver, "zonotope": ZonotopeSolver, "crown": CrownSolver}
    if name not in solvers:
        raise ValueError(f"unknown solver {name!r} (choose from {sorted(solvers)})")
    return solvers[name](**kwargs)
