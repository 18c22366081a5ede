"""Computational-graph networks: loading, evaluation, gradients, surgery.

A :class:`Model` is an immutable DAG of nodes in topological order.  The
reserved id ``"input"`` denotes the network input; every other node
consumes previously declared nodes.  Supported ops:

    dense       y = W x + b                    (weight, bias)
    conv2d      zero-padded 2-D convolution    (kernel OxIxKhxKw, bias,
                                                stride, padding)
    relu        elementwise max(x, 0)
    maxpool2d   window max                     (window, stride)
    avgpool2d   window mean                    (window, stride)
    flatten     row-major reshape to a vector
    batchnorm   folded to y = scale*x + bias at load time
    add         elementwise sum of two nodes
    identity    passthrough
    softmax     output node only

Data layout is channel-major (C, H, W) with row-major flattening, and
conv kernels are out x in x kH x kW with zero padding only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelError",
    "Node",
    "Model",
    "load_model",
    "model_to_json",
    "forward",
    "forward_batch",
    "input_gradient",
    "append_conjunction_head",
    "strip_softmax",
    "robustness_head",
]

INPUT_ID = "input"

OPS = (
    "dense",
    "conv2d",
    "relu",
    "maxpool2d",
    "avgpool2d",
    "flatten",
    "batchnorm",
    "add",
    "identity",
    "softmax",
)

# JSON fields each op accepts beyond id/op/inputs.
_OP_FIELDS = {
    "dense": ("weight", "bias"),
    "conv2d": ("kernel", "bias", "stride", "padding"),
    "maxpool2d": ("window", "stride"),
    "avgpool2d": ("window", "stride"),
    "batchnorm": ("scale", "shift", "mean", "variance", "epsilon"),
    "relu": (),
    "flatten": (),
    "add": (),
    "identity": (),
    "softmax": (),
}


class ModelError(ValueError):
    """Raised for malformed model files or inconsistent graphs."""


@dataclass(frozen=True, eq=False)
class Node:
    """One graph node; ``params`` holds op-specific numpy arrays."""

    id: str
    op: str
    inputs: tuple
    params: dict = field(default_factory=dict)
    shape: tuple = ()  # output shape, filled in by Model validation

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        for arr in self.params.values():
            if isinstance(arr, np.ndarray):
                arr.flags.writeable = False

    def with_shape(self, shape) -> "Node":
        return Node(self.id, self.op, self.inputs, self.params, tuple(shape))


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable network with a single designated output node."""

    name: str
    input_shape: tuple
    nodes: tuple
    output: str

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        nodes = _sort_and_check(self.input_shape, self.nodes, self.output)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_by_id", {n.id: n for n in nodes})

    def node(self, node_id: str) -> Node:
        return self._by_id[node_id]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def output_shape(self) -> tuple:
        return self._by_id[self.output].shape

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.output_shape))


def _sort_and_check(input_shape, nodes, output) -> tuple:
    """Topologically sort, infer shapes, and validate every node."""
    nodes = list(nodes)
    ids = [n.id for n in nodes]
    if INPUT_ID in ids:
        raise ModelError(f'node id "{INPUT_ID}" is reserved')
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ModelError(f"duplicate node id {dup!r}")
    known = set(ids) | {INPUT_ID}
    for n in nodes:
        if n.op not in OPS:
            raise ModelError(
                f"node {n.id!r}: unsupported op {n.op!r} (supported: {', '.join(OPS)})"
            )
        arity = 2 if n.op == "add" else 1
        if len(n.inputs) != arity:
            raise ModelError(f"node {n.id!r}: op {n.op} takes {arity} input(s)")
        for ref in n.inputs:
            if ref not in known:
                raise ModelError(f"node {n.id!r}: references undeclared input id {ref!r}")
    if output not in set(ids):
        raise ModelError(f"output node {output!r} is not declared")

    # Kahn's algorithm, stable in declaration order; leftovers mean a cycle.
    placed = {INPUT_ID}
    ordered = []
    pending = list(nodes)
    while pending:
        ready = [n for n in pending if all(r in placed for r in n.inputs)]
        if not ready:
            cyclic = ", ".join(n.id for n in pending)
            raise ModelError(f"cyclic graph involving node(s): {cyclic}")
        for n in ready:
            ordered.append(n)
            placed.add(n.id)
        pending = [n for n in pending if n.id not in placed]

    shapes = {INPUT_ID: tuple(input_shape)}
    checked = []
    for n in ordered:
        shape = _infer_shape(n, [shapes[r] for r in n.inputs])
        if n.op == "softmax" and n.id != output:
            raise ModelError(f"node {n.id!r}: softmax may appear only as the output node")
        shapes[n.id] = shape
        checked.append(n.with_shape(shape))
    return tuple(checked)


def _infer_shape(n: Node, in_shapes) -> tuple:
    (s,) = in_shapes if n.op != "add" else (in_shapes[0],)
    if n.op == "dense":
        w = n.params["weight"]
        if len(s) != 1:
            raise ModelError(f"node {n.id!r}: dense needs a 1-D input, got {s}")
        if w.ndim != 2 or w.shape[1] != s[0]:
            raise ModelError(
                f"node {n.id!r}: weight {w.shape} incompatible with input {s}"
            )
        if n.params["bias"].shape != (w.shape[0],):
            raise ModelError(f"node {n.id!r}: bias length must be {w.shape[0]}")
        return (w.shape[0],)
    if n.op == "conv2d":
        k = n.params["kernel"]
        if len(s) != 3:
            raise ModelError(f"node {n.id!r}: conv2d needs a (C,H,W) input, got {s}")
        c, h, w = s
        if k.ndim != 4 or k.shape[1] != c:
            raise ModelError(
                f"node {n.id!r}: kernel {k.shape} incompatible with {c} input channels"
            )
        o, _, kh, kw = k.shape
        if n.params["bias"].shape != (o,):
            raise ModelError(f"node {n.id!r}: bias length must be {o}")
        sh, sw = n.params["stride"]
        ph, pw = n.params["padding"]
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if h + 2 * ph < kh or w + 2 * pw < kw:
            raise ModelError(f"node {n.id!r}: kernel larger than padded input")
        return (o, ho, wo)
    if n.op in ("maxpool2d", "avgpool2d"):
        if len(s) != 3:
            raise ModelError(f"node {n.id!r}: pooling needs a (C,H,W) input, got {s}")
        c, h, w = s
        wh, ww = n.params["window"]
        sh, sw = n.params["stride"]
        if h < wh or w < ww:
            raise ModelError(f"node {n.id!r}: pooling window larger than input")
        return (c, (h - wh) // sh + 1, (w - ww) // sw + 1)
    if n.op == "flatten":
        return (int(np.prod(s)),)
    if n.op == "batchnorm":
        expected = s[0] if len(s) == 3 else s[0] if len(s) == 1 else None
        if expected is None:
            raise ModelError(f"node {n.id!r}: batchnorm needs a 1-D or (C,H,W) input")
        if n.params["scale"].shape != (expected,):
            raise ModelError(
                f"node {n.id!r}: batchnorm parameters must have length {expected}"
            )
        return s
    if n.op == "add":
        a, b = in_shapes
        if a != b:
            raise ModelError(f"node {n.id!r}: add inputs differ in shape: {a} vs {b}")
        return a
    if n.op == "softmax":
        if len(s) != 1:
            raise ModelError(f"node {n.id!r}: softmax needs a 1-D input, got {s}")
        return s
    return s  # relu, identity


def _array(obj, node_id: str, name: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"node {node_id!r}: {name} is not numeric: {exc}") from None
    if arr.ndim != ndim:
        raise ModelError(f"node {node_id!r}: {name} must be {ndim}-D, got {arr.ndim}-D")
    return arr


def _int_pair(obj, node_id: str, name: str) -> tuple:
    pair = obj if isinstance(obj, (list, tuple)) else [obj, obj]
    if len(pair) != 2 or not all(isinstance(v, int) and v >= 0 for v in pair):
        raise ModelError(f"node {node_id!r}: {name} must be a pair of nonnegative ints")
    return (pair[0], pair[1])


def _node_from_json(obj) -> Node:
    if not isinstance(obj, dict):
        raise ModelError("every node must be a JSON object")
    for key in ("id", "op", "inputs"):
        if key not in obj:
            raise ModelError(f"node missing required field {key!r}: {obj}")
    node_id, op = obj["id"], obj["op"]
    if op not in OPS:
        raise ModelError(
            f"node {node_id!r}: unsupported op {op!r} (supported: {', '.join(OPS)})"
        )
    allowed = {"id", "op", "inputs", *_OP_FIELDS[op]}
    unknown = set(obj) - allowed
    if unknown:
        raise ModelError(f"node {node_id!r}: unknown field(s) {sorted(unknown)}")

    params = {}
    if op == "dense":
        params["weight"] = _array(obj.get("weight"), node_id, "weight", 2)
        params["bias"] = _array(obj.get("bias"), node_id, "bias", 1)
    elif op == "conv2d":
        params["kernel"] = _array(obj.get("kernel"), node_id, "kernel", 4)
        params["bias"] = _array(obj.get("bias"), node_id, "bias", 1)
        params["stride"] = _int_pair(obj.get("stride", [1, 1]), node_id, "stride")
        params["padding"] = _int_pair(obj.get("padding", [0, 0]), node_id, "padding")
        if params["stride"][0] < 1 or params["stride"][1] < 1:
            raise ModelError(f"node {node_id!r}: stride must be positive")
    elif op in ("maxpool2d", "avgpool2d"):
        if "window" not in obj:
            raise ModelError(f"node {node_id!r}: pooling requires a window")
        params["window"] = _int_pair(obj["window"], node_id, "window")
        params["stride"] = _int_pair(obj.get("stride", obj["window"]), node_id, "stride")
        if min(params["window"]) < 1 or min(params["stride"]) < 1:
            raise ModelError(f"node {node_id!r}: window and stride must be positive")
    elif op == "batchnorm":
        scale = _array(obj.get("scale"), node_id, "scale", 1)
        shift = _array(obj.get("shift"), node_id, "shift", 1)
        mean = _array(obj.get("mean"), node_id, "mean", 1)
        var = _array(obj.get("variance"), node_id, "variance", 1)
        eps = obj.get("epsilon", 1e-5)
        if not isinstance(eps, (int, float)):
            raise ModelError(f"node {node_id!r}: epsilon must be a number")
        if not (scale.shape == shift.shape == mean.shape == var.shape):
            raise ModelError(f"node {node_id!r}: batchnorm parameter lengths differ")
        if np.min(var + eps) <= 0.0:
            raise ModelError(f"node {node_id!r}: variance + epsilon must be positive")
        # Fold to an equivalent elementwise affine map once, at load time.
        a = scale / np.sqrt(var + eps)
        params["scale"] = a
        params["bias"] = shift - mean * a
    return Node(str(node_id), op, [str(r) for r in obj["inputs"]], params)


def load_model(path) -> Model:
    """Parse and validate a model JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelError(f"cannot read model file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelError("model file must contain a JSON object")
    required = {"name", "input_shape", "nodes", "output"}
    missing = required - set(doc)
    if missing:
        raise ModelError(f"model file missing field(s) {sorted(missing)}")
    unknown = set(doc) - required
    if unknown:
        raise ModelError(f"model file has unknown field(s) {sorted(unknown)}")
    shape = doc["input_shape"]
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(v, int) and v > 0 for v in shape)
    ):
        raise ModelError("input_shape must be a list of positive ints")
    if not isinstance(doc["nodes"], list) or not doc["nodes"]:
        raise ModelError("nodes must be a non-empty list")
    nodes = [_node_from_json(obj) for obj in doc["nodes"]]
    return Model(str(doc["name"]), shape, nodes, str(doc["output"]))


def model_to_json(model: Model) -> dict:
    """Model as a JSON-serializable dict (folded batchnorm stays folded)."""
    nodes = []
    for n in model.nodes:
        obj = {"id": n.id, "op": n.op, "inputs": list(n.inputs)}
        if n.op == "dense":
            obj["weight"] = n.params["weight"].tolist()
            obj["bias"] = n.params["bias"].tolist()
        elif n.op == "conv2d":
            obj["kernel"] = n.params["kernel"].tolist()
            obj["bias"] = n.params["bias"].tolist()
            obj["stride"] = list(n.params["stride"])
            obj["padding"] = list(n.params["padding"])
        elif n.op in ("maxpool2d", "avgpool2d"):
            obj["window"] = list(n.params["window"])
            obj["stride"] = list(n.params["stride"])
        elif n.op == "batchnorm":
            obj.update(
                scale=n.params["scale"].tolist(),
                shift=n.params["bias"].tolist(),
                mean=[0.0] * n.params["scale"].size,
                variance=[1.0] * n.params["scale"].size,
                epsilon=0.0,
            )
        nodes.append(obj)
    return {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "nodes": nodes,
        "output": model.output,
    }


def _conv2d_batch(x, kernel, bias, stride, padding):
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw, :, :]
    out = np.einsum("ncijuv,ocuv->noij", windows, kernel, optimize=True)
    return out + bias[None, :, None, None]


def _pool_windows(x, window, stride):
    wh, ww = window
    sh, sw = stride
    views = np.lib.stride_tricks.sliding_window_view(x, (wh, ww), axis=(2, 3))
    return views[:, :, ::sh, ::sw, :, :]


def _softmax(x):
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def _eval_node(n: Node, args):
    if n.op == "dense":
        return args[0] @ n.params["weight"].T + n.params["bias"]
    if n.op == "conv2d":
        return _conv2d_batch(
            args[0], n.params["kernel"], n.params["bias"],
            n.params["stride"], n.params["padding"],
        )
    if n.op == "relu":
        return np.maximum(args[0], 0.0)
    if n.op == "maxpool2d":
        return np.max(_pool_windows(args[0], n.params["window"], n.params["stride"]), axis=(4, 5))
    if n.op == "avgpool2d":
        return np.mean(_pool_windows(args[0], n.params["window"], n.params["stride"]), axis=(4, 5))
    if n.op == "flatten":
        return args[0].reshape(args[0].shape[0], -1)
    if n.op == "batchnorm":
        scale, bias = n.params["scale"], n.params["bias"]
        if args[0].ndim == 4:
            return args[0] * scale[None, :, None, None] + bias[None, :, None, None]
        return args[0] * scale + bias
    if n.op == "add":
        return args[0] + args[1]
    if n.op == "identity":
        return args[0]
    if n.op == "softmax":
        return _softmax(args[0])
    raise AssertionError(n.op)


def _run(model: Model, x_batch: np.ndarray) -> dict:
    """Evaluate all nodes on a (N, input_dim) batch; values keyed by id."""
    values = {INPUT_ID: x_batch.reshape(x_batch.shape[0], *model.input_shape)}
    for n in model.nodes:
        values[n.id] = _eval_node(n, [values[r] for r in n.inputs])
    return values


def forward_batch(model: Model, xs) -> np.ndarray:
    """Concrete outputs for a (N, input_dim) batch of flat inputs."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != model.input_dim:
        raise ModelError(f"expected (N, {model.input_dim}) inputs, got {xs.shape}")
    out = _run(model, xs)[model.output]
    return out.reshape(xs.shape[0], -1)


def forward(model: Model, x) -> np.ndarray:
    """Exact concrete evaluation of one flat input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.input_dim:
        raise ModelError(f"expected input of length {model.input_dim}, got {x.size}")
    return forward_batch(model, x[None, :])[0]


def input_gradient(model: Model, x, output_cotangent) -> np.ndarray:
    """Gradient of (cotangent . output) with respect to the input.

    ReLU uses subgradient 0 at 0; maxpool routes to the first maximal
    entry of each window.  Softmax is rejected: strip it first.
    """
    if any(n.op == "softmax" for n in model.nodes):
        raise ModelError("softmax present; strip it before taking gradients")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.input_dim:
        raise ModelError(f"expected input of length {model.input_dim}, got {x.size}")
    ct = np.asarray(output_cotangent, dtype=np.float64).reshape(-1)
    if ct.size != model.output_dim:
        raise ModelError(f"cotangent must have length {model.output_dim}")

    values = _run(model, x[None, :])
    grads = {model.output: ct.reshape(1, *model.node(model.output).shape)}
    for n in reversed(model.nodes):
        g = grads.pop(n.id, None)
        if g is None:
            continue
        for ref, gin in zip(n.inputs, _vjp(n, values, g)):
            if ref in grads:
                grads[ref] = grads[ref] + gin
            else:
                grads[ref] = gin
    gx = grads.get(INPUT_ID)
    if gx is None:
        gx = np.zeros((1, *model.input_shape))
    return gx.reshape(-1)


def _vjp(n: Node, values: dict, g: np.ndarray):
    if n.op == "dense":
        return [g @ n.params["weight"]]
    if n.op == "relu":
        return [g * (values[n.inputs[0]] > 0.0)]
    if n.op == "identity":
        return [g]
    if n.op == "add":
        return [g, g]
    if n.op == "flatten":
        return [g.reshape(values[n.inputs[0]].shape)]
    if n.op == "batchnorm":
        scale = n.params["scale"]
        if g.ndim == 4:
            return [g * scale[None, :, None, None]]
        return [g * scale]
    if n.op == "conv2d":
        return [_conv2d_vjp(n, values[n.inputs[0]], g)]
    if n.op == "avgpool2d":
        return [_avgpool_vjp(n, values[n.inputs[0]], g)]
    if n.op == "maxpool2d":
        return [_maxpool_vjp(n, values[n.inputs[0]], g)]
    raise AssertionError(n.op)


def _conv2d_vjp(n: Node, x, g):
    kernel = n.params["kernel"]
    sh, sw = n.params["stride"]
    ph, pw = n.params["padding"]
    _, _, kh, kw = kernel.shape
    nb, _, ho, wo = g.shape
    _, c, h, w = x.shape
    gp = np.zeros((nb, c, h + 2 * ph, w + 2 * pw))
    for u in range(kh):
        for v in range(kw):
            contrib = np.einsum("oc,noij->ncij", kernel[:, :, u, v], g)
            gp[:, :, u : u + sh * ho : sh, v : v + sw * wo : sw] += contrib
    return gp[:, :, ph : ph + h, pw : pw + w]


def _avgpool_vjp(n: Node, x, g):
    wh, ww = n.params["window"]
    sh, sw = n.params["stride"]
    nb, c, ho, wo = g.shape
    share = g / (wh * ww)
    gx = np.zeros_like(x)
    for u in range(wh):
        for v in range(ww):
            gx[:, :, u : u + sh * ho : sh, v : v + sw * wo : sw] += share
    return gx


def _maxpool_vjp(n: Node, x, g):
    windows = _pool_windows(x, n.params["window"], n.params["stride"])
    nb, c, ho, wo, wh, ww = windows.shape
    flat = windows.reshape(nb, c, ho, wo, wh * ww)
    arg = np.argmax(flat, axis=-1)  # first maximum wins on ties
    u, v = arg // ww, arg % ww
    sh, sw = n.params["stride"]
    bi, ci, ii, jj = np.indices((nb, c, ho, wo))
    gx = np.zeros_like(x)
    np.add.at(gx, (bi, ci, ii * sh + u, jj * sw + v), g)
    return gx


def strip_softmax(model: Model) -> Model:
    """Drop a trailing softmax; argmax of the output is unchanged."""
    out = model.node(model.output)
    if out.op != "softmax":
        return model
    kept = [n for n in model.nodes if n.id != out.id]
    return Model(model.name, model.input_shape, kept, out.inputs[0])


def _fresh_id(taken: set, base: str) -> str:
    if base not in taken:
        taken.add(base)
        return base
    i = 2
    while f"{base}_{i}" in taken:
        i += 1
    taken.add(f"{base}_{i}")
    return f"{base}_{i}"


def append_conjunction_head(model: Model, C, d) -> Model:
    """Reduce a conjunction of linear postconditions to one output.

    Appends a dense node computing margins m = C y + d followed by a
    balanced binary min tree, so the final scalar equals min_i m_i and
    the conjunction {all m_i >= 0} becomes {output >= 0}.  Each
    pairwise min uses the exact identity min(a, b) = a - relu(a - b),
    with a carried through the ReLU layer as relu(a) - relu(-a).
    """
    C = np.asarray(C, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64).reshape(-1)
    if len(model.output_shape) != 1:
        raise ModelError("conjunction head needs a 1-D model output")
    if model.node(model.output).op == "softmax":
        raise ModelError("strip softmax before appending a conjunction head")
    if C.ndim != 2 or C.shape[1] != model.output_dim:
        raise ModelError(
            f"C must be (m, {model.output_dim}), got {C.shape}"
        )
    if C.shape[0] < 1:
        raise ModelError("conjunction needs at least one margin row")
    if d.size != C.shape[0]:
        raise ModelError("d length must match the rows of C")

    taken = {n.id for n in model.nodes}
    nodes = list(model.nodes)
    margin_id = _fresh_id(taken, "margins")
    nodes.append(Node(margin_id, "dense", [model.output], {"weight": C, "bias": d}))
    prev, width, level = margin_id, C.shape[0], 0
    while width > 1:
        pairs, odd = divmod(width, 2)
        # Layer 1 emits [a-b, a, -a] per pair plus [c, -c] for a leftover.
        w1 = np.zeros((3 * pairs + 2 * odd, width))
        for i in range(pairs):
            a, b = 2 * i, 2 * i + 1
            w1[3 * i, a], w1[3 * i, b] = 1.0, -1.0
            w1[3 * i + 1, a] = 1.0
            w1[3 * i + 2, a] = -1.0
        if odd:
            w1[3 * pairs, width - 1] = 1.0
            w1[3 * pairs + 1, width - 1] = -1.0
        # Layer 2 reassembles min(a,b) = relu(a) - relu(-a) - relu(a-b).
        w2 = np.zeros((pairs + odd, w1.shape[0]))
        for i in range(pairs):
            w2[i, 3 * i], w2[i, 3 * i + 1], w2[i, 3 * i + 2] = -1.0, 1.0, -1.0
        if odd:
            w2[pairs, 3 * pairs], w2[pairs, 3 * pairs + 1] = 1.0, -1.0
        pre = _fresh_id(taken, f"min{level}_pre")
        act = _fresh_id(taken, f"min{level}_relu")
        post = _fresh_id(taken, f"min{level}_out")
        nodes.append(Node(pre, "dense", [prev], {"weight": w1, "bias": np.zeros(w1.shape[0])}))
        nodes.append(Node(act, "relu", [pre]))
        nodes.append(Node(post, "dense", [act], {"weight": w2, "bias": np.zeros(w2.shape[0])}))
        prev, width, level = post, pairs + odd, level + 1
    return Model(model.name, model.input_shape, nodes, prev)


def robustness_head(model: Model, label: int, num_classes: int) -> Model:
    """Single-output network that is >= 0 iff ``label`` is (weakly) top-1."""
    if model.output_dim != num_classes:
        raise ModelError(
            f"model outputs {model.output_dim} classes, expected {num_classes}"
        )
    if num_classes < 2:
        raise ModelError("robustness head needs at least two classes")
    if not 0 <= label < num_classes:
        raise ModelError(f"label {label} out of range for {num_classes} classes")
    rows = []
    for j in range(num_classes):
        if j == label:
            continue
        row = np.zeros(num_classes)
        row[label], row[j] = 1.0, -1.0
        rows.append(row)
    return append_conjunction_head(model, np.stack(rows), np.zeros(num_classes - 1))
