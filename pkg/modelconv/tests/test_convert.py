import json
import shutil
import subprocess

import numpy as np
import pytest
import torch
import torch.nn as nn

import onnx_writer as ow
from modelconv import ConversionError, convert
from modelconv.cli import main
from modelconv.onnx_reader import OnnxDecodeError

torch.manual_seed(0)

RELUVERIFY = shutil.which("reluverify")


def eval_converted(model_path, xs: np.ndarray) -> np.ndarray:
    """Forward pass of a converted model through the verifier CLI."""
    x_path = model_path.parent / "xs.json"
    x_path.write_text(json.dumps(xs.tolist()))
    proc = subprocess.run(
        [RELUVERIFY, "eval", "--model", str(model_path), "--input", str(x_path)],
        capture_output=True,
        text=True,
        check=True,
    )
    return np.asarray(json.loads(proc.stdout))


def check_equivalence(module: nn.Module, model_path, n_in: int, count: int = 100):
    rng = np.random.default_rng(7)
    xs = rng.uniform(-1.0, 1.0, size=(count, n_in))
    with torch.no_grad():
        want = module(torch.tensor(xs, dtype=torch.float32)).numpy()
    got = eval_converted(model_path, xs)
    assert got.shape == want.reshape(count, -1).shape
    assert np.max(np.abs(got - want.reshape(count, -1))) <= 1e-5


def linear_params(layer: nn.Linear):
    return (
        layer.weight.detach().numpy().astype(np.float32),
        layer.bias.detach().numpy().astype(np.float32),
    )


def gemm(name, x, w_name, b_name, out):
    # torch exports Linear as Gemm with transB=1
    return ow.node(
        "Gemm", [x, w_name, b_name], [out], name,
        attrs=[ow.attr_float("alpha", 1.0), ow.attr_float("beta", 1.0),
               ow.attr_int("transB", 1)],
    )


def build_mlp(tmp_path):
    module = nn.Sequential(nn.Linear(4, 8), nn.ReLU(), nn.Linear(8, 3))
    w0, b0 = linear_params(module[0])
    w1, b1 = linear_params(module[2])
    g = ow.graph(
        nodes=[
            gemm("fc1", "x", "fc1.weight", "fc1.bias", "h"),
            ow.node("Relu", ["h"], ["a"], "act"),
            gemm("fc2", "a", "fc2.weight", "fc2.bias", "y"),
        ],
        initializers=[
            ow.tensor("fc1.weight", w0), ow.tensor("fc1.bias", b0),
            ow.tensor("fc2.weight", w1), ow.tensor("fc2.bias", b1),
        ],
        inputs=[ow.value_info("x", [1, 4])],
        outputs=[ow.value_info("y", [1, 3])],
        name="mlp",
    )
    path = tmp_path / "mlp.onnx"
    ow.write_model(path, g)
    return module, path, 4


class ConvNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(1, 2, 3, padding=1)
        self.pool = nn.MaxPool2d(2)
        self.fc = nn.Linear(8, 3)

    def forward(self, x):
        x = x.reshape(-1, 1, 4, 4)
        x = self.pool(torch.relu(self.conv(x)))
        return self.fc(torch.flatten(x, 1))


def build_convnet(tmp_path):
    module = ConvNet()
    kernel = module.conv.weight.detach().numpy().astype(np.float32)
    cbias = module.conv.bias.detach().numpy().astype(np.float32)
    fw, fb = linear_params(module.fc)
    g = ow.graph(
        nodes=[
            ow.node("Conv", ["x", "conv.weight", "conv.bias"], ["c"], "conv",
                    attrs=[ow.attr_ints("kernel_shape", [3, 3]),
                           ow.attr_ints("pads", [1, 1, 1, 1]),
                           ow.attr_ints("strides", [1, 1])]),
            ow.node("Relu", ["c"], ["a"], "act"),
            ow.node("MaxPool", ["a"], ["p"], "pool",
                    attrs=[ow.attr_ints("kernel_shape", [2, 2]),
                           ow.attr_ints("strides", [2, 2])]),
            ow.node("Flatten", ["p"], ["f"], "flat",
                    attrs=[ow.attr_int("axis", 1)]),
            gemm("fc", "f", "fc.weight", "fc.bias", "y"),
        ],
        initializers=[
            ow.tensor("conv.weight", kernel), ow.tensor("conv.bias", cbias),
            ow.tensor("fc.weight", fw), ow.tensor("fc.bias", fb),
        ],
        inputs=[ow.value_info("x", [1, 1, 4, 4])],
        outputs=[ow.value_info("y", [1, 3])],
        name="convnet",
    )
    path = tmp_path / "convnet.onnx"
    ow.write_model(path, g)
    return module, path, 16


class ResidualNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.fc1 = nn.Linear(4, 4)
        self.fc2 = nn.Linear(4, 4)
        self.out = nn.Linear(4, 2)

    def forward(self, x):
        h = self.fc2(torch.relu(self.fc1(x)))
        return self.out(h + x)


def build_residual(tmp_path):
    module = ResidualNet()
    w1, b1 = linear_params(module.fc1)
    w2, b2 = linear_params(module.fc2)
    w3, b3 = linear_params(module.out)
    g = ow.graph(
        nodes=[
            gemm("fc1", "x", "fc1.weight", "fc1.bias", "h1"),
            ow.node("Relu", ["h1"], ["a1"], "act"),
            gemm("fc2", "a1", "fc2.weight", "fc2.bias", "h2"),
            ow.node("Add", ["h2", "x"], ["s"], "skip"),
            gemm("out", "s", "out.weight", "out.bias", "y"),
        ],
        initializers=[
            ow.tensor("fc1.weight", w1), ow.tensor("fc1.bias", b1),
            ow.tensor("fc2.weight", w2), ow.tensor("fc2.bias", b2),
            ow.tensor("out.weight", w3), ow.tensor("out.bias", b3),
        ],
        inputs=[ow.value_info("x", [1, 4])],
        outputs=[ow.value_info("y", [1, 2])],
        name="residual",
    )
    path = tmp_path / "residual.onnx"
    ow.write_model(path, g)
    return module, path, 4


needs_reluverify = pytest.mark.skipif(
    RELUVERIFY is None, reason="reluverify CLI not installed"
)


class TestForwardEquivalence:
    @needs_reluverify
    def test_mlp(self, tmp_path):
        module, onnx_path, n_in = build_mlp(tmp_path)
        out_path = tmp_path / "mlp.json"
        report = convert(onnx_path, out_path)
        assert report.source_ops == {"Gemm": 2, "Relu": 1}
        check_equivalence(module, out_path, n_in)

    @needs_reluverify
    def test_convnet(self, tmp_path):
        module, onnx_path, n_in = build_convnet(tmp_path)
        out_path = tmp_path / "convnet.json"
        report = convert(onnx_path, out_path)
        assert {m["op"] for m in report.mapped} == {
            "conv2d", "relu", "maxpool2d", "flatten", "dense",
        }
        check_equivalence(module, out_path, n_in)

    @needs_reluverify
    def test_residual(self, tmp_path):
        module, onnx_path, n_in = build_residual(tmp_path)
        out_path = tmp_path / "residual.json"
        report = convert(onnx_path, out_path)
        assert any(m["op"] == "add" for m in report.mapped)
        check_equivalence(module, out_path, n_in)

    @needs_reluverify
    def test_batchnorm_and_avgpool(self, tmp_path):
        class BnNet(nn.Module):
            def __init__(self):
                super().__init__()
                self.conv = nn.Conv2d(1, 2, 2)
                self.bn = nn.BatchNorm2d(2)
                self.fc = nn.Linear(2, 2)
                self.bn.running_mean.uniform_(-0.5, 0.5)
                self.bn.running_var.uniform_(0.5, 1.5)
                self.bn.weight.data.uniform_(0.5, 1.5)
                self.bn.bias.data.uniform_(-0.5, 0.5)
                self.eval()

            def forward(self, x):
                x = x.reshape(-1, 1, 3, 3)
                x = torch.relu(self.bn(self.conv(x)))
                x = nn.functional.avg_pool2d(x, 2)
                return self.fc(torch.flatten(x, 1))

        module = BnNet()
        kernel = module.conv.weight.detach().numpy()
        cbias = module.conv.bias.detach().numpy()
        fw, fb = linear_params(module.fc)
        g = ow.graph(
            nodes=[
                ow.node("Conv", ["x", "w", "cb"], ["c"], "conv",
                        attrs=[ow.attr_ints("kernel_shape", [2, 2]),
                               ow.attr_ints("pads", [0, 0, 0, 0]),
                               ow.attr_ints("strides", [1, 1])]),
                ow.node("BatchNormalization", ["c", "g", "b", "m", "v"], ["n"], "bn",
                        attrs=[ow.attr_float("epsilon", module.bn.eps),
                               ow.attr_float("momentum", 0.9)]),
                ow.node("Relu", ["n"], ["a"], "act"),
                ow.node("AveragePool", ["a"], ["p"], "pool",
                        attrs=[ow.attr_ints("kernel_shape", [2, 2]),
                               ow.attr_ints("strides", [2, 2])]),
                ow.node("Flatten", ["p"], ["f"], "flat"),
                gemm("fc", "f", "fw", "fb", "y"),
            ],
            initializers=[
                ow.tensor("w", kernel), ow.tensor("cb", cbias),
                ow.tensor("g", module.bn.weight.detach().numpy()),
                ow.tensor("b", module.bn.bias.detach().numpy()),
                ow.tensor("m", module.bn.running_mean.numpy()),
                ow.tensor("v", module.bn.running_var.numpy()),
                ow.tensor("fw", fw), ow.tensor("fb", fb),
            ],
            inputs=[ow.value_info("x", [1, 1, 3, 3])],
            outputs=[ow.value_info("y", [1, 2])],
            name="bn-net",
        )
        onnx_path = tmp_path / "bn.onnx"
        ow.write_model(onnx_path, g)
        out_path = tmp_path / "bn.json"
        report = convert(onnx_path, out_path)
        assert any(d["attribute"] == "momentum" for d in report.dropped_attributes)
        check_equivalence(module, out_path, 9)

    @needs_reluverify
    def test_matmul_add_fusion(self, tmp_path):
        module = nn.Sequential(nn.Linear(3, 5), nn.ReLU(), nn.Linear(5, 2))
        w0, b0 = linear_params(module[0])
        w1, b1 = linear_params(module[2])
        g = ow.graph(
            nodes=[
                ow.node("MatMul", ["x", "w0"], ["mm"], "mm0"),
                ow.node("Add", ["mm", "b0"], ["h"], "bias0"),
                ow.node("Relu", ["h"], ["a"], "act"),
                ow.node("MatMul", ["a", "w1"], ["mm2"], "mm1"),
                ow.node("Add", ["mm2", "b1"], ["y"], "bias1"),
            ],
            initializers=[
                ow.tensor("w0", w0.T), ow.tensor("b0", b0),
                ow.tensor("w1", w1.T), ow.tensor("b1", b1),
            ],
            inputs=[ow.value_info("x", [1, 3])],
            outputs=[ow.value_info("y", [1, 2])],
            name="matmul-mlp",
        )
        onnx_path = tmp_path / "mm.onnx"
        ow.write_model(onnx_path, g)
        out_path = tmp_path / "mm.json"
        report = convert(onnx_path, out_path)
        # each MatMul+Add pair becomes one dense node
        ops = [m["op"] for m in report.mapped]
        assert ops == ["dense", "relu", "dense"]
        check_equivalence(module, out_path, 3)

    @needs_reluverify
    def test_softmax_final(self, tmp_path):
        module = nn.Sequential(nn.Linear(4, 3), nn.Softmax(dim=-1))
        w, b = linear_params(module[0])
        g = ow.graph(
            nodes=[
                gemm("fc", "x", "w", "b", "h"),
                ow.node("Softmax", ["h"], ["y"], "sm",
                        attrs=[ow.attr_int("axis", -1)]),
            ],
            initializers=[ow.tensor("w", w), ow.tensor("b", b)],
            inputs=[ow.value_info("x", [1, 4])],
            outputs=[ow.value_info("y", [1, 3])],
            name="softmax-net",
        )
        onnx_path = tmp_path / "sm.onnx"
        ow.write_model(onnx_path, g)
        out_path = tmp_path / "sm.json"
        convert(onnx_path, out_path)
        check_equivalence(module, out_path, 4)


class TestStructure:
    def test_idempotent_bytes(self, tmp_path):
        _, onnx_path, _ = build_mlp(tmp_path)
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        convert(onnx_path, out1)
        convert(onnx_path, out2)
        assert out1.read_bytes() == out2.read_bytes()

    def test_symbolic_batch_dim_warns(self, tmp_path):
        module, onnx_path, _ = build_mlp(tmp_path)
        w0, b0 = linear_params(module[0])
        g = ow.graph(
            nodes=[gemm("fc1", "x", "w", "b", "y")],
            initializers=[ow.tensor("w", w0), ow.tensor("b", b0)],
            inputs=[ow.value_info("x", ["batch", 4])],
            outputs=[ow.value_info("y", ["batch", 8])],
        )
        path = tmp_path / "sym.onnx"
        ow.write_model(path, g)
        report = convert(path, tmp_path / "sym.json")
        assert any("batch" in w for w in report.warnings)

    def test_unsupported_op_named(self, tmp_path):
        g = ow.graph(
            nodes=[ow.node("Sigmoid", ["x"], ["y"], "act")],
            initializers=[],
            inputs=[ow.value_info("x", [1, 2])],
            outputs=[ow.value_info("y", [1, 2])],
        )
        path = tmp_path / "sig.onnx"
        ow.write_model(path, g)
        with pytest.raises(ConversionError, match="Sigmoid"):
            convert(path, tmp_path / "sig.json")

    def test_dynamic_shape_rejected(self, tmp_path):
        g = ow.graph(
            nodes=[ow.node("Relu", ["x"], ["y"], "act")],
            initializers=[],
            inputs=[ow.value_info("x", [1, "n"])],
            outputs=[ow.value_info("y", [1, "n"])],
        )
        path = tmp_path / "dyn.onnx"
        ow.write_model(path, g)
        with pytest.raises(ConversionError, match="dynamic"):
            convert(path, tmp_path / "dyn.json")

    def test_mid_graph_softmax_rejected(self, tmp_path):
        g = ow.graph(
            nodes=[
                ow.node("Softmax", ["x"], ["s"], "sm", attrs=[ow.attr_int("axis", -1)]),
                ow.node("Relu", ["s"], ["y"], "act"),
            ],
            initializers=[],
            inputs=[ow.value_info("x", [1, 2])],
            outputs=[ow.value_info("y", [1, 2])],
        )
        path = tmp_path / "midsm.onnx"
        ow.write_model(path, g)
        with pytest.raises(ConversionError, match="softmax"):
            convert(path, tmp_path / "midsm.json")

    def test_not_onnx_at_all(self, tmp_path):
        path = tmp_path / "junk.onnx"
        path.write_bytes(b"\xff\xfe definitely not protobuf \x00\x01")
        with pytest.raises((OnnxDecodeError, ConversionError)):
            convert(path, tmp_path / "junk.json")

    def test_report_lists_every_mapping(self, tmp_path):
        _, onnx_path, _ = build_convnet(tmp_path)
        report = convert(onnx_path, tmp_path / "c.json")
        assert len(report.mapped) == 5
        assert sum(report.source_ops.values()) == 5


class TestCli:
    def test_success_and_report(self, tmp_path, capsys):
        _, onnx_path, _ = build_mlp(tmp_path)
        out = tmp_path / "out.json"
        report = tmp_path / "report.json"
        code = main([str(onnx_path), str(out), "--report", str(report)])
        assert code == 0
        assert out.exists()
        doc = json.loads(report.read_text())
        assert doc["source_ops"] == {"Gemm": 2, "Relu": 1}
        capsys.readouterr()

    def test_unsupported_model_exit_1(self, tmp_path, capsys):
        g = ow.graph(
            nodes=[ow.node("Tanh", ["x"], ["y"], "act")],
            initializers=[],
            inputs=[ow.value_info("x", [1, 2])],
            outputs=[ow.value_info("y", [1, 2])],
        )
        path = tmp_path / "tanh.onnx"
        ow.write_model(path, g)
        code = main([str(path), str(tmp_path / "out.json")])
        assert code == 1
        assert "Tanh" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        code = main([str(tmp_path / "missing.onnx"), str(tmp_path / "out.json")])
        assert code == 2
        capsys.readouterr()
