"""Layer-by-layer reachable-set export for human inspection.

The JSON trace stores every node's post-node box (center and radius per
coordinate) losslessly: floats are written with full round-trip
precision, so re-importing reproduces the trace bitwise.  Image-shaped
nodes can additionally be rendered as grayscale heatmaps (binary PGM,
one file per channel for center and radius each) with the per-image
normalization constants kept in a sidecar file.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .geometry import Hyperrectangle
from .model import Model
from .propagate import BoundsTrace

__all__ = ["export_trace", "read_trace", "export_heatmaps"]


def _check_trace(trace: BoundsTrace, model: Model):
    ids = [n.id for n in model.nodes]
    if list(trace.bounds.keys()) != ids:
        raise ValueError("trace does not cover the model's nodes in order")
    for n in model.nodes:
        size = int(np.prod(n.shape))
        if trace[n.id].dim != size:
            raise ValueError(
                f"trace entry {n.id!r} has {trace[n.id].dim} coordinates, "
                f"node shape {n.shape} needs {size}"
            )


def export_trace(
    trace: BoundsTrace,
    model: Model,
    path,
    solver: str = "",
    input_desc: str = "",
):
    """Write the trace as JSON; field order and float text are deterministic."""
    _check_trace(trace, model)
    records = []
    for n in model.nodes:
        box = trace[n.id]
        records.append(
            {
                "node_id": n.id,
                "op": n.op,
                "shape": list(n.shape),
                "center": box.center.tolist(),
                "radius": box.radius.tolist(),
            }
        )
    doc = {
        "model": model.name,
        "solver": solver,
        "input": input_desc,
        "records": records,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_trace(path):
    """Re-import an exported trace; returns (BoundsTrace, metadata dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    bounds = {}
    for rec in doc["records"]:
        bounds[rec["node_id"]] = Hyperrectangle(
            np.asarray(rec["center"], dtype=np.float64),
            np.asarray(rec["radius"], dtype=np.float64),
        )
    meta = {"model": doc["model"], "solver": doc["solver"], "input": doc["input"]}
    return BoundsTrace(bounds), meta


def _write_pgm(path, image: np.ndarray):
    """8-bit binary PGM; ``image`` is (H, W) float, already in [0, 255]."""
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.astype(np.uint8).tobytes())


def _quantize(plane: np.ndarray):
    """Min-max map to bytes; a zero range maps everything to 0."""
    lo, hi = float(np.min(plane)), float(np.max(plane))
    if hi > lo:
        q = np.rint((plane - lo) / (hi - lo) * 255.0)
    else:
        q = np.zeros_like(plane)
    return q, lo, hi


_SAFE = re.compile(r"[^A-Za-z0-9_.-]")


def export_heatmaps(trace: BoundsTrace, model: Model, directory):
    """Render every (C, H, W)-shaped node as center/radius grayscale images.

    Writes ``<node>_center_c<k>.pgm`` and ``<node>_radius_c<k>.pgm`` per
    channel plus ``<node>_norm.json`` with the min/max used for each
    image; nodes without an image shape are skipped and listed in
    ``index.json``.
    """
    _check_trace(trace, model)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rendered, skipped = [], []
    for n in model.nodes:
        if len(n.shape) != 3:
            skipped.append(n.id)
            continue
        c, h, w = n.shape
        stem = _SAFE.sub("_", n.id)
        box = trace[n.id]
        norms = {"center": [], "radius": []}
        for label, data in (("center", box.center), ("radius", box.radius)):
            planes = data.reshape(c, h, w)
            for k in range(c):
                q, lo, hi = _quantize(planes[k])
                _write_pgm(directory / f"{stem}_{label}_c{k}.pgm", q)
                norms[label].append({"min": lo, "max": hi})
        with open(directory / f"{stem}_norm.json", "w", encoding="utf-8") as fh:
            json.dump(norms, fh, indent=1)
        rendered.append({"node": n.id, "file_stem": stem, "channels": c})
    with open(directory / "index.json", "w", encoding="utf-8") as fh:
        json.dump({"rendered": rendered, "skipped": skipped}, fh, indent=1)
