"""ONNX graph to model-JSON conversion for the fixed operator subset.

Supported source ops: Gemm, MatMul (+ bias Add), Conv (zero padding),
Relu, MaxPool, AveragePool, Flatten, BatchNormalization, Add, Identity,
and a final Softmax.  Anything else fails loudly with the op named;
weight layouts are transposed into the target schema's conventions
(dense weights are out x in, conv kernels out x in x kH x kW).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .onnx_reader import GraphP, NodeP, read_onnx

SUPPORTED_OPS = (
    "Gemm",
    "MatMul",
    "Conv",
    "Relu",
    "MaxPool",
    "AveragePool",
    "Flatten",
    "BatchNormalization",
    "Add",
    "Identity",
    "Softmax",
)


class ConversionError(ValueError):
    """The model cannot be expressed in the target schema."""


@dataclass
class ConversionReport:
    source_ops: dict = field(default_factory=dict)
    mapped: list = field(default_factory=list)
    dropped_attributes: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "source_ops": self.source_ops,
            "mapped": self.mapped,
            "dropped_attributes": self.dropped_attributes,
            "warnings": self.warnings,
        }


class _Converter:
    def __init__(self, graph: GraphP, model_name: str):
        self.graph = graph
        self.model_name = model_name
        self.report = ConversionReport(source_ops=dict(Counter(n.op_type for n in graph.nodes)))
        self.params = graph.initializers
        self.tensor_to_id: dict = {}
        self.nodes: list = []
        self.taken_ids: set = set()
        self.consumers = Counter(
            name for n in graph.nodes for name in n.inputs if name not in self.params
        )
        self.fused_bias: dict = {}  # Add node id() -> producing MatMul NodeP

    # -- helpers ------------------------------------------------------

    def fail(self, node: NodeP, message: str):
        label = node.name or node.outputs[0] if node.outputs else node.op_type
        raise ConversionError(f"{node.op_type} node {label!r}: {message}")

    def param(self, node: NodeP, name: str, ndim=None) -> np.ndarray:
        if name not in self.params:
            self.fail(node, f"expected initializer input {name!r}")
        values = self.params[name].values
        if ndim is not None and values.ndim != ndim:
            self.fail(node, f"initializer {name!r} must be {ndim}-D, got {values.ndim}-D")
        return np.asarray(values, dtype=np.float64)

    def activation(self, node: NodeP, name: str) -> str:
        if name in self.params:
            self.fail(node, f"input {name!r} is a constant, expected an activation")
        if name not in self.tensor_to_id:
            self.fail(node, f"input tensor {name!r} has no producer")
        return self.tensor_to_id[name]

    def fresh_id(self, base: str) -> str:
        if base == "input" or base in self.taken_ids:
            i = 2
            while f"{base}_{i}" in self.taken_ids:
                i += 1
            base = f"{base}_{i}"
        self.taken_ids.add(base)
        return base

    def emit(self, node: NodeP, op: str, fields: dict):
        node_id = self.fresh_id(node.outputs[0])
        self.nodes.append({"id": node_id, "op": op, **fields})
        self.tensor_to_id[node.outputs[0]] = node_id
        self.report.mapped.append(
            {"onnx_op": node.op_type, "onnx_name": node.name, "node_id": node_id, "op": op}
        )

    def drop_attr(self, node: NodeP, attr: str):
        if attr in node.attrs:
            self.report.dropped_attributes.append(
                {"node": node.name or node.outputs[0], "attribute": attr}
            )

    def int_pair(self, node: NodeP, attr: str, default=None) -> list:
        value = node.attrs.get(attr, default)
        if value is None:
            self.fail(node, f"missing attribute {attr!r}")
        if len(value) != 2:
            self.fail(node, f"attribute {attr!r} must have two entries")
        return [int(v) for v in value]

    # -- structure ----------------------------------------------------

    def input_shape(self) -> list:
        infos = [vi for vi in self.graph.inputs if vi.name not in self.params]
        if len(infos) != 1:
            raise ConversionError(f"expected exactly one graph input, found {len(infos)}")
        vi = infos[0]
        if len(vi.dims) < 2:
            raise ConversionError(
                f"graph input {vi.name!r} must have a batch dimension plus data dims"
            )
        if isinstance(vi.dims[0], str):
            self.report.warnings.append(
                f"symbolic batch dimension {vi.dims[0]!r} treated as batch size 1"
            )
        shape = []
        for d in vi.dims[1:]:
            if isinstance(d, str) or d <= 0:
                raise ConversionError(
                    f"graph input {vi.name!r} has dynamic shape ({d!r}); only "
                    "static shapes are supported"
                )
            shape.append(int(d))
        self.tensor_to_id[vi.name] = "input"
        return shape

    def run(self) -> dict:
        unsupported = sorted(
            {n.op_type for n in self.graph.nodes if n.op_type not in SUPPORTED_OPS}
        )
        if unsupported:
            raise ConversionError(f"unsupported op(s): {', '.join(unsupported)}")
        if len(self.graph.outputs) != 1:
            raise ConversionError(
                f"expected exactly one graph output, found {len(self.graph.outputs)}"
            )
        shape = self.input_shape()
        self.mark_bias_fusions()
        for node in self.graph.nodes:
            if id(node) in self.skipped_matmuls:
                continue
            getattr(self, f"op_{node.op_type.lower()}")(node)
        out_name = self.graph.outputs[0].name
        if out_name not in self.tensor_to_id:
            raise ConversionError(f"graph output tensor {out_name!r} was not produced")
        for node in self.graph.nodes:
            if node.op_type == "Softmax" and node.outputs[0] != out_name:
                self.fail(node, "softmax is only supported as the final node")
        unused = set(self.params) - self.consumed_params
        if unused:
            self.report.warnings.append(
                f"unused initializer(s): {', '.join(sorted(unused))}"
            )
        return {
            "name": self.model_name,
            "input_shape": shape,
            "nodes": self.nodes,
            "output": self.tensor_to_id[out_name],
        }

    def mark_bias_fusions(self):
        """Pair each MatMul with a following bias Add where possible."""
        self.skipped_matmuls: set = set()
        self.consumed_params: set = set()
        producers = {}
        for node in self.graph.nodes:
            for out in node.outputs:
                producers[out] = node
        for node in self.graph.nodes:
            if node.op_type != "Add" or len(node.inputs) != 2:
                continue
            a, b = node.inputs
            tensor, const = (a, b) if b in self.params else (b, a)
            if const not in self.params or tensor in self.params:
                continue
            prev = producers.get(tensor)
            if (
                prev is not None
                and prev.op_type == "MatMul"
                and self.consumers[tensor] == 1
                and self.params[const].values.ndim == 1
            ):
                self.fused_bias[id(node)] = prev
                self.skipped_matmuls.add(id(prev))

    # -- op handlers ----------------------------------------------------

    def op_gemm(self, node: NodeP):
        if int(node.attrs.get("transA", 0)):
            self.fail(node, "transA is not supported")
        alpha = float(node.attrs.get("alpha", 1.0))
        beta = float(node.attrs.get("beta", 1.0))
        ref = self.activation(node, node.inputs[0])
        b_mat = self.param(node, node.inputs[1], ndim=2)
        weight = b_mat if int(node.attrs.get("transB", 0)) else b_mat.T
        weight = alpha * weight
        if len(node.inputs) > 2 and node.inputs[2]:
            bias = beta * self.param(node, node.inputs[2], ndim=1)
            self.consumed_params.add(node.inputs[2])
        else:
            bias = np.zeros(weight.shape[0])
        self.consumed_params.add(node.inputs[1])
        self.emit(node, "dense", {
            "inputs": [ref], "weight": weight.tolist(), "bias": bias.tolist(),
        })

    def op_matmul(self, node: NodeP):
        ref = self.activation(node, node.inputs[0])
        b_mat = self.param(node, node.inputs[1], ndim=2)
        self.consumed_params.add(node.inputs[1])
        self.emit(node, "dense", {
            "inputs": [ref],
            "weight": b_mat.T.tolist(),
            "bias": [0.0] * b_mat.shape[1],
        })

    def op_add(self, node: NodeP):
        prev = self.fused_bias.get(id(node))
        if prev is not None:
            ref = self.activation(node, prev.inputs[0])
            b_mat = self.param(prev, prev.inputs[1], ndim=2)
            const = node.inputs[1] if node.inputs[1] in self.params else node.inputs[0]
            bias = self.param(node, const, ndim=1)
            if bias.size != b_mat.shape[1]:
                self.fail(node, "bias length does not match the matmul output")
            self.consumed_params.update({prev.inputs[1], const})
            self.emit(node, "dense", {
                "inputs": [ref], "weight": b_mat.T.tolist(), "bias": bias.tolist(),
            })
            return
        if any(name in self.params for name in node.inputs):
            const = node.inputs[1] if node.inputs[1] in self.params else node.inputs[0]
            tensor = node.inputs[0] if const == node.inputs[1] else node.inputs[1]
            bias = self.param(node, const, ndim=1)
            ref = self.activation(node, tensor)
            # standalone bias add: lower to dense with identity weight
            self.consumed_params.add(const)
            self.report.warnings.append(
                f"Add node {node.name or node.outputs[0]!r} with constant operand "
                "lowered to a dense layer"
            )
            self.emit(node, "dense", {
                "inputs": [ref],
                "weight": np.eye(bias.size).tolist(),
                "bias": bias.tolist(),
            })
            return
        refs = [self.activation(node, name) for name in node.inputs]
        self.emit(node, "add", {"inputs": refs})

    def op_conv(self, node: NodeP):
        if node.attrs.get("auto_pad", "NOTSET") not in ("NOTSET", ""):
            self.fail(node, "auto_pad is not supported; use explicit pads")
        if int(node.attrs.get("group", 1)) != 1:
            self.fail(node, "grouped convolution is not supported")
        dilations = node.attrs.get("dilations", [1, 1])
        if any(int(d) != 1 for d in dilations):
            self.fail(node, "dilations other than 1 are not supported")
        kernel = self.param(node, node.inputs[1])
        if kernel.ndim != 4:
            self.fail(node, "only 2-D convolution is supported")
        pads = [int(v) for v in node.attrs.get("pads", [0, 0, 0, 0])]
        if len(pads) != 4 or pads[0] != pads[2] or pads[1] != pads[3]:
            self.fail(node, f"asymmetric padding {pads} is not supported")
        strides = self.int_pair(node, "strides", default=[1, 1])
        ref = self.activation(node, node.inputs[0])
        if len(node.inputs) > 2 and node.inputs[2]:
            bias = self.param(node, node.inputs[2], ndim=1)
            self.consumed_params.add(node.inputs[2])
        else:
            bias = np.zeros(kernel.shape[0])
        self.consumed_params.add(node.inputs[1])
        self.drop_attr(node, "kernel_shape")  # implied by the weight tensor
        self.emit(node, "conv2d", {
            "inputs": [ref],
            "kernel": kernel.tolist(),
            "bias": bias.tolist(),
            "stride": strides,
            "padding": [pads[0], pads[1]],
        })

    def _pool(self, node: NodeP, op: str):
        if node.attrs.get("auto_pad", "NOTSET") not in ("NOTSET", ""):
            self.fail(node, "auto_pad is not supported")
        if int(node.attrs.get("ceil_mode", 0)):
            self.fail(node, "ceil_mode is not supported")
        pads = [int(v) for v in node.attrs.get("pads", [0, 0, 0, 0])]
        if any(pads):
            self.fail(node, "padded pooling is not supported")
        if any(int(d) != 1 for d in node.attrs.get("dilations", [1, 1])):
            self.fail(node, "pooling dilations are not supported")
        window = self.int_pair(node, "kernel_shape")
        strides = self.int_pair(node, "strides", default=window)
        self.drop_attr(node, "count_include_pad")  # no padding, so no effect
        ref = self.activation(node, node.inputs[0])
        self.emit(node, op, {"inputs": [ref], "window": window, "stride": strides})

    def op_maxpool(self, node: NodeP):
        self._pool(node, "maxpool2d")

    def op_averagepool(self, node: NodeP):
        self._pool(node, "avgpool2d")

    def op_relu(self, node: NodeP):
        self.emit(node, "relu", {"inputs": [self.activation(node, node.inputs[0])]})

    def op_identity(self, node: NodeP):
        self.emit(node, "identity", {"inputs": [self.activation(node, node.inputs[0])]})

    def op_flatten(self, node: NodeP):
        if int(node.attrs.get("axis", 1)) != 1:
            self.fail(node, "only axis=1 flatten is supported")
        self.emit(node, "flatten", {"inputs": [self.activation(node, node.inputs[0])]})

    def op_batchnormalization(self, node: NodeP):
        if int(node.attrs.get("training_mode", 0)):
            self.fail(node, "training-mode batch normalization is not supported")
        if len(node.outputs) > 1:
            self.fail(node, "multi-output batch normalization is not supported")
        ref = self.activation(node, node.inputs[0])
        scale = self.param(node, node.inputs[1], ndim=1)
        shift = self.param(node, node.inputs[2], ndim=1)
        mean = self.param(node, node.inputs[3], ndim=1)
        var = self.param(node, node.inputs[4], ndim=1)
        self.consumed_params.update(node.inputs[1:5])
        self.drop_attr(node, "momentum")  # inference-only conversion
        self.emit(node, "batchnorm", {
            "inputs": [ref],
            "scale": scale.tolist(),
            "shift": shift.tolist(),
            "mean": mean.tolist(),
            "variance": var.tolist(),
            "epsilon": float(node.attrs.get("epsilon", 1e-5)),
        })

    def op_softmax(self, node: NodeP):
        axis = int(node.attrs.get("axis", -1))
        if axis not in (-1, 1):
            self.fail(node, f"softmax over axis {axis} is not supported")
        self.emit(node, "softmax", {"inputs": [self.activation(node, node.inputs[0])]})


def convert(onnx_path, out_json_path) -> ConversionReport:
    """Convert an ONNX file to the model JSON schema.

    Raises ConversionError when the graph uses anything outside the
    supported subset; nothing is ever dropped silently.
    """
    graph = read_onnx(onnx_path)
    name = graph.name or Path(onnx_path).stem
    conv = _Converter(graph, name)
    doc = conv.run()
    text = json.dumps(doc, indent=1) + "\n"
    with open(out_json_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return conv.report
