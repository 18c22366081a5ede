"""Minimal ONNX file reader.

Decodes the protobuf wire format directly for the fixed message subset
the converter needs (ModelProto graph, nodes, attributes, initializers,
value infos); the onnx runtime stack is deliberately not a dependency.
Unknown fields are skipped, as protobuf semantics require.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class OnnxDecodeError(ValueError):
    """The file is not a readable ONNX model."""


# wire types
_VARINT = 0
_I64 = 1
_LEN = 2
_I32 = 5

# TensorProto data types we accept
FLOAT = 1
INT64 = 7
DOUBLE = 11


def _read_varint(buf: bytes, pos: int):
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise OnnxDecodeError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise OnnxDecodeError("varint too long")


def _signed(value: int) -> int:
    return value - (1 << 64) if value >= 1 << 63 else value


def iter_fields(buf: bytes):
    """Yield (field_number, wire_type, payload) triples.

    Payload is an int for varint/fixed fields and bytes for
    length-delimited fields.
    """
    pos = 0
    while pos < len(buf):
        tag, pos = _read_varint(buf, pos)
        number, wtype = tag >> 3, tag & 0x7
        if wtype == _VARINT:
            value, pos = _read_varint(buf, pos)
            yield number, wtype, value
        elif wtype == _I64:
            if pos + 8 > len(buf):
                raise OnnxDecodeError("truncated fixed64")
            yield number, wtype, int.from_bytes(buf[pos : pos + 8], "little")
            pos += 8
        elif wtype == _LEN:
            size, pos = _read_varint(buf, pos)
            if pos + size > len(buf):
                raise OnnxDecodeError("truncated length-delimited field")
            yield number, wtype, buf[pos : pos + size]
            pos += size
        elif wtype == _I32:
            if pos + 4 > len(buf):
                raise OnnxDecodeError("truncated fixed32")
            yield number, wtype, int.from_bytes(buf[pos : pos + 4], "little")
            pos += 4
        else:
            raise OnnxDecodeError(f"unsupported wire type {wtype}")


def _packed_varints(payload) -> list:
    if isinstance(payload, int):  # unpacked single element
        return [_signed(payload)]
    values = []
    pos = 0
    while pos < len(payload):
        v, pos = _read_varint(payload, pos)
        values.append(_signed(v))
    return values


def _packed_floats(payload) -> list:
    if isinstance(payload, int):  # unpacked fixed32 element
        return [struct.unpack("<f", payload.to_bytes(4, "little"))[0]]
    if len(payload) % 4:
        raise OnnxDecodeError("packed float payload not a multiple of 4")
    return list(struct.unpack(f"<{len(payload) // 4}f", payload))


@dataclass
class TensorP:
    name: str = ""
    dims: tuple = ()
    dtype: int = FLOAT
    values: np.ndarray = None


@dataclass
class NodeP:
    op_type: str = ""
    name: str = ""
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


@dataclass
class ValueInfoP:
    name: str = ""
    dims: list = field(default_factory=list)  # ints, or strings for symbolic dims


@dataclass
class GraphP:
    name: str = ""
    nodes: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)  # name -> TensorP
    inputs: list = field(default_factory=list)  # ValueInfoP
    outputs: list = field(default_factory=list)  # ValueInfoP


def _decode_tensor(buf: bytes) -> TensorP:
    t = TensorP()
    dims = []
    float_data: list = []
    int64_data: list = []
    double_data: list = []
    raw = None
    for number, wtype, payload in iter_fields(buf):
        if number == 1:
            dims.extend(_packed_varints(payload) if wtype == _LEN else [_signed(payload)])
        elif number == 2:
            t.dtype = payload
        elif number == 4:
            float_data.extend(_packed_floats(payload))
        elif number == 7:
            int64_data.extend(_packed_varints(payload) if wtype == _LEN else [_signed(payload)])
        elif number == 8:
            t.name = payload.decode("utf-8")
        elif number == 9:
            raw = payload
        elif number == 10:
            if wtype == _LEN:
                double_data.extend(struct.unpack(f"<{len(payload) // 8}d", payload))
            else:
                double_data.append(struct.unpack("<d", payload.to_bytes(8, "little"))[0])
        elif number == 13:
            raise OnnxDecodeError(
                f"tensor {t.name!r} uses external data, which is not supported"
            )
    t.dims = tuple(dims)
    count = int(np.prod(t.dims)) if t.dims else 1
    if t.dtype == FLOAT:
        if raw is not None:
            arr = np.frombuffer(raw, dtype="<f4", count=count)
        else:
            arr = np.asarray(float_data, dtype=np.float32)
    elif t.dtype == DOUBLE:
        if raw is not None:
            arr = np.frombuffer(raw, dtype="<f8", count=count)
        else:
            arr = np.asarray(double_data, dtype=np.float64)
    elif t.dtype == INT64:
        if raw is not None:
            arr = np.frombuffer(raw, dtype="<i8", count=count)
        else:
            arr = np.asarray(int64_data, dtype=np.int64)
    else:
        raise OnnxDecodeError(
            f"tensor {t.name!r} has unsupported data type {t.dtype}"
        )
    if arr.size != count:
        raise OnnxDecodeError(f"tensor {t.name!r} has {arr.size} values, dims need {count}")
    t.values = arr.astype(np.float64).reshape(t.dims) if t.dtype != INT64 else arr.reshape(t.dims)
    return t


def _decode_attribute(buf: bytes):
    name = ""
    single_f = single_i = single_s = tensor = None
    floats: list = []
    ints: list = []
    for number, wtype, payload in iter_fields(buf):
        if number == 1:
            name = payload.decode("utf-8")
        elif number == 2:
            single_f = struct.unpack("<f", payload.to_bytes(4, "little"))[0]
        elif number == 3:
            single_i = _signed(payload)
        elif number == 4:
            single_s = payload.decode("utf-8", errors="replace")
        elif number == 5:
            tensor = _decode_tensor(payload)
        elif number == 7:
            floats.extend(_packed_floats(payload))
        elif number == 8:
            ints.extend(_packed_varints(payload) if wtype == _LEN else [_signed(payload)])
    if single_f is not None:
        return name, single_f
    if single_i is not None:
        return name, single_i
    if single_s is not None:
        return name, single_s
    if tensor is not None:
        return name, tensor
    if floats:
        return name, [float(v) for v in floats]
    return name, ints


def _decode_node(buf: bytes) -> NodeP:
    n = NodeP()
    for number, _, payload in iter_fields(buf):
        if number == 1:
            n.inputs.append(payload.decode("utf-8"))
        elif number == 2:
            n.outputs.append(payload.decode("utf-8"))
        elif number == 3:
            n.name = payload.decode("utf-8")
        elif number == 4:
            n.op_type = payload.decode("utf-8")
        elif number == 5:
            key, value = _decode_attribute(payload)
            n.attrs[key] = value
    return n


def _decode_value_info(buf: bytes) -> ValueInfoP:
    vi = ValueInfoP()
    for number, _, payload in iter_fields(buf):
        if number == 1:
            vi.name = payload.decode("utf-8")
        elif number == 2:
            vi.dims = _decode_type_dims(payload)
    return vi


def _decode_type_dims(buf: bytes) -> list:
    for number, _, payload in iter_fields(buf):
        if number == 1:  # tensor_type
            for num2, _, payload2 in iter_fields(payload):
                if num2 == 2:  # shape
                    dims = []
                    for num3, _, payload3 in iter_fields(payload2):
                        if num3 == 1:  # dimension
                            dims.append(_decode_dimension(payload3))
                    return dims
    return []


def _decode_dimension(buf: bytes):
    for number, _, payload in iter_fields(buf):
        if number == 1:
            return _signed(payload) if isinstance(payload, int) else 0
        if number == 2:
            return payload.decode("utf-8")  # symbolic
    return "?"


def _decode_graph(buf: bytes) -> GraphP:
    g = GraphP()
    for number, _, payload in iter_fields(buf):
        if number == 1:
            g.nodes.append(_decode_node(payload))
        elif number == 2:
            g.name = payload.decode("utf-8")
        elif number == 5:
            t = _decode_tensor(payload)
            g.initializers[t.name] = t
        elif number == 11:
            g.inputs.append(_decode_value_info(payload))
        elif number == 12:
            g.outputs.append(_decode_value_info(payload))
    return g


def read_onnx(path) -> GraphP:
    """Decode the graph of an ONNX file."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from None
    graph = None
    try:
        for number, wtype, payload in iter_fields(data):
            if number == 7 and wtype == _LEN:
                graph = _decode_graph(payload)
    except OnnxDecodeError:
        raise
    except Exception as exc:
        raise OnnxDecodeError(f"not a readable ONNX file: {exc}") from None
    if graph is None:
        raise OnnxDecodeError("file contains no graph")
    return graph
