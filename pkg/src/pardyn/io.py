"""Persistence of reduced models and CSV output.

Model container layout (all integers little-endian)::

    8 bytes   magic  b"PARDYNRM"
    4 bytes   major version (uint32)
    4 bytes   minor version (uint32)
    8 bytes   header length H (uint64)
    H bytes   UTF-8 JSON header
    ...       array payload, little-endian float64, C order

The header lists every array with its shape and byte offset from the start
of the payload.  Spatial fields are stored node-major (time node, then
interior node).  A JSON manifest is written next to the container.
"""
from __future__ import annotations

import csv
import json
import os
import struct
import subprocess
from importlib import metadata
from pathlib import Path

import numpy as np

from .discretization import Mesh
from .errors import ModelFormatError
from .fom import TimeGrid
from .offline import GreedyStep, ProjectionRecord, ReducedModel, SeparatedTerm, Zeta0
from .problem import problem_from_config

MAGIC = b"PARDYNRM"
FORMAT_VERSION = (1, 0)
_PREFIX = struct.Struct("<8sIIQ")


def package_version() -> str:
    """Installed version plus ``git describe`` output when available."""
    try:
        v = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        v = "0+unknown"
    try:
        d = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                           capture_output=True, text=True, timeout=5)
        if d.returncode == 0 and d.stdout.strip():
            v = f"{v}+g{d.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return v


def _f8(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype="<f8"))


def _model_payload(model: ReducedModel):
    arrays: list[tuple[str, np.ndarray]] = []
    terms = []
    for k, t in enumerate(model.terms):
        rec = t.record.arrays()
        for name, a in rec.items():
            arrays.append((f"t{k}/{name}", a))
        arrays.append((f"t{k}/zeta0_p", t.zeta0.p_weights))
        arrays.append((f"t{k}/zeta0_z", t.zeta0.z_weights))
        if t.g is not None:
            arrays.append((f"t{k}/g", t.g))
        terms.append({
            "anchor": [float(x) for x in t.anchor],
            "norm": float(t.norm),
            "zeta0_degenerate": bool(t.zeta0.degenerate),
            "zeta0_constant": float(t.zeta0.constant),
            "n_nonlinear": len(t.record.h_proj),
            "has_g": t.g is not None,
            "vs_step": int(t.vs_step),
            "vs_candidates": [int(m) for m in t.vs_candidates],
        })
    trace = []
    for i, st in enumerate(model.trace):
        arrays.append((f"trace{i}/deltas", st.deltas))
        if st.relative is not None:
            arrays.append((f"trace{i}/relative", st.relative))
        trace.append({"k": st.k, "anchor_index": st.anchor_index, "delta_max": _json_float(st.delta_max),
                      "elapsed": st.elapsed, "has_relative": st.relative is not None})
    if model.training is not None:
        arrays.append(("training", model.training))
    header = {
        "method": model.method,
        "scheme": model.scheme,
        "problem": model.problem.to_config(),
        "mesh": model.mesh.descriptor(),
        "grid": {"tau": model.grid.tau, "T": model.grid.T},
        "config": model.config,
        "terms": terms,
        "trace": trace,
        "has_training": model.training is not None,
        "affine_terms": {
            "constant": [t.name for t in model.problem.constant_terms],
            "linear": [t.name for t in model.problem.linear_terms],
            "nonlinear": [t.name for t in model.problem.nonlinear_terms],
            "initial": [t.name for t in model.problem.initial_terms],
            "lift": [t.name for t in model.problem.lift_terms],
        },
        "version": package_version(),
    }
    return header, arrays


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else str(x)


def save_model(model: ReducedModel, path, manifest: bool = True) -> Path:
    """Write the binary container (and ``<path>.json`` manifest)."""
    path = Path(path)
    header, arrays = _model_payload(model)
    table, offset = [], 0
    for name, a in arrays:
        a = _f8(a)
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    header["arrays"] = table
    hb = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".part")
    try:
        with open(tmp, "wb") as f:
            f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION[0], FORMAT_VERSION[1], len(hb)))
            f.write(hb)
            for _, a in arrays:
                f.write(_f8(a).tobytes())
        os.replace(tmp, path)
    except OSError:
        if tmp.exists():
            tmp.unlink()
        raise
    if manifest:
        write_manifest(model, Path(str(path) + ".json"))
    return path


def read_header(path) -> tuple[tuple[int, int], dict, int]:
    """(version, header dict, payload offset) of a container."""
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(_PREFIX.size)
        if len(raw) < _PREFIX.size:
            raise ModelFormatError(f"{path}: file too short for a model container")
        magic, major, minor, hlen = _PREFIX.unpack(raw)
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: not a model container (bad magic {magic!r})")
        hb = f.read(hlen)
    if len(hb) != hlen:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(hb.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header ({exc})") from exc
    return (major, minor), header, _PREFIX.size + hlen


def header_summary(header: dict) -> str:
    """Compact JSON of the descriptive header fields (array table omitted)."""
    keys = ("version", "method", "scheme", "grid", "mesh", "config")
    out = {k: header.get(k) for k in keys}
    out["problem"] = header.get("problem", {}).get("name")
    out["n_terms"] = len(header.get("terms", []))
    return json.dumps(out, sort_keys=True)


def load_model(path, mmap: bool = True) -> ReducedModel:
    """Read a container; spatial fields are memory-mapped unless ``mmap=False``."""
    path = Path(path)
    version, header, start = read_header(path)
    if version[0] != FORMAT_VERSION[0]:
        raise ModelFormatError(
            f"{path}: container version {version[0]}.{version[1]} is not readable by format "
            f"{FORMAT_VERSION[0]}.{FORMAT_VERSION[1]}; header: {header_summary(header)}"
        )
    size = path.stat().st_size
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        off = start + entry["offset"]
        if off + 8 * count > size:
            raise ModelFormatError(f"{path}: array {entry['name']} extends past the end of the file")
        if mmap and entry["name"].endswith("/g") and count:
            arrays[entry["name"]] = np.memmap(path, dtype="<f8", mode="r", offset=off, shape=shape)
        else:
            with open(path, "rb") as f:
                f.seek(off)
                arrays[entry["name"]] = np.fromfile(f, dtype="<f8", count=count).reshape(shape)
    problem = problem_from_config(header["problem"])
    terms = []
    for k, meta in enumerate(header["terms"]):
        rec = {name.split("/", 1)[1]: a for name, a in arrays.items() if name.startswith(f"t{k}/")}
        rec_arrays = {key: rec[key] for key in ("g_cross", "g_cross_lag", "a_proj", "c_proj")}
        for i in range(meta["n_nonlinear"]):
            rec_arrays[f"h_proj{i}"] = rec[f"h_proj{i}"]
        z0 = Zeta0(rec["zeta0_p"], rec["zeta0_z"], meta["zeta0_degenerate"], meta["zeta0_constant"])
        terms.append(SeparatedTerm(np.array(meta["anchor"]), rec.get("g") if meta["has_g"] else None,
                                   ProjectionRecord.from_arrays(rec_arrays), z0, meta["norm"],
                                   meta["vs_step"], tuple(meta["vs_candidates"])))
    trace = []
    for i, st in enumerate(header["trace"]):
        rel = arrays.get(f"trace{i}/relative") if st["has_relative"] else None
        trace.append(GreedyStep(st["k"], st["anchor_index"], float(st["delta_max"]), arrays[f"trace{i}/deltas"],
                                rel, st["elapsed"]))
    return ReducedModel(
        problem,
        Mesh.from_descriptor(header["mesh"]),
        TimeGrid(header["grid"]["tau"], header["grid"]["T"]),
        terms,
        trace,
        header["method"],
        header["config"],
        arrays.get("training") if header["has_training"] else None,
        header.get("scheme", "product-rule"),
    )


def manifest_dict(model: ReducedModel) -> dict:
    return {
        "format_version": f"{FORMAT_VERSION[0]}.{FORMAT_VERSION[1]}",
        "version": package_version(),
        "problem": model.problem.name,
        "method": model.method,
        "scheme": model.scheme,
        "n_terms": model.n_terms,
        "mesh": model.mesh.descriptor(),
        "grid": {"tau": model.grid.tau, "T": model.grid.T, "n_steps": model.grid.n_steps},
        "config": model.config,
        "term_norms": [t.norm for t in model.terms],
        "anchors": [[float(x) for x in t.anchor] for t in model.terms],
        "delta_history": [
            {"k": st.k, "anchor_index": st.anchor_index, "delta_max": _json_float(st.delta_max),
             "elapsed": st.elapsed}
            for st in model.trace
        ],
        "has_fields": model.has_fields,
    }


def write_manifest(model: ReducedModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(manifest_dict(model), indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------
def format_value(v) -> str:
    """Integers verbatim, floats in scientific notation with 6 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.5e" % float(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def trace_rows(model: ReducedModel):
    """Greedy trace as CSV rows: step, anchor index, anchor, max indicator, strategy, wall time."""
    strategy = model.config.get("strategy", "true-error")
    header = ["step", "anchor_index"] + [f"xi{i + 1}" for i in range(model.problem.n_params)] + [
        "delta_max", "strategy", "seconds"]
    rows = []
    for st in model.trace:
        if st.anchor_index >= 0 and model.training is not None:
            xi = list(model.training[st.anchor_index])
        else:
            xi = [float("nan")] * model.problem.n_params
        rows.append([st.k, st.anchor_index] + xi + [st.delta_max, strategy, st.elapsed])
    return header, rows
