"""Run-directory files: raw snapshots with JSON sidecars, legacy VTK, manifest, CSV."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from .config import load_schema
from .wavestate import DofLayout, FieldState


def atomic_write_text(path, text: str):
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path, rows: list[str]):
    atomic_write_text(path, "\n".join(rows) + "\n")


def grid_record(layout: DofLayout) -> dict:
    g = layout.grid
    return {"dimension": g.dimension, "system": g.system.value, "cells": list(g.cells),
            "spacing": list(g.spacing), "origin": list(g.origin)}


def write_snapshot(state: FieldState, layout: DofLayout, directory, stem: str, *, time: float,
                   config_hash: str, step: int | None = None, vtk: bool = False) -> dict:
    """Raw little-endian float64 (E then H) plus a schema-checked JSON sidecar."""
    directory = Path(directory)
    state.check(layout)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        data = directory / f"{stem}.f64"
        np.concatenate([state.e, state.h]).astype("<f8").tofile(data)
        meta = {
            "format": "tpwave-snapshot-1",
            "dtype": "<f8",
            "data_file": data.name,
            "vtk_file": None,
            "time": float(time),
            "config_hash": config_hash,
            "grid": grid_record(layout),
            "layout": layout.descriptor(),
            "e_dof_count": layout.e_dof_count,
            "h_dof_count": layout.h_dof_count,
        }
        if step is not None:
            meta["step"] = int(step)
        if vtk:
            vtk_path = directory / f"{stem}.vtk"
            write_vtk(state, layout, vtk_path, title=f"{stem} t={time:.6g}")
            meta["vtk_file"] = vtk_path.name
        jsonschema.validate(meta, load_schema("snapshot"))
        write_json(directory / f"{stem}.json", meta)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write snapshot {stem}: {exc.strerror}",
                      exc.filename) from None
    return meta


def read_snapshot(sidecar) -> tuple[FieldState, dict]:
    sidecar = Path(sidecar)
    meta = json.loads(sidecar.read_text())
    jsonschema.validate(meta, load_schema("snapshot"))
    vec = np.fromfile(sidecar.parent / meta["data_file"], dtype="<f8")
    ne, nh = meta["e_dof_count"], meta["h_dof_count"]
    if vec.size != ne + nh:
        raise ValueError(f"{sidecar}: data has {vec.size} values, expected {ne + nh}")
    return FieldState(vec[:ne].astype(float), vec[ne:].astype(float)), meta


# legacy VTK ------------------------------------------------------------------

def _to_nodes(values: np.ndarray, dirs) -> np.ndarray:
    # average cell-centred samples onto the bounding nodes, axis by axis
    for a in dirs:
        pad = np.concatenate([values.take([0], axis=a), values, values.take([-1], axis=a)], axis=a)
        n = pad.shape[a]
        values = 0.5 * (pad.take(range(n - 1), axis=a) + pad.take(range(1, n), axis=a))
    return values


def _component(fam_dirs, n_fams: int, dim: int) -> int | None:
    if n_fams == 1:
        return None
    if len(fam_dirs) == 1:
        return fam_dirs[0]
    return ({0, 1, 2} - set(fam_dirs)).pop()  # 2-forms in 3D read as vectors


def _nodal_field(vec: np.ndarray, families, dim: int):
    node_shape = None
    comps = {}
    for fam in families:
        arr = _to_nodes(vec[fam.slice()].reshape(fam.shape), fam.dirs)
        node_shape = arr.shape
        comps[_component(fam.dirs, len(families), dim)] = arr
    if None in comps:
        return comps[None], False
    out = np.zeros((3,) + node_shape)
    for c, arr in comps.items():
        out[c] = arr
    return out, True


def write_vtk(state: FieldState, layout: DofLayout, path, title: str = "tpwave"):
    """STRUCTURED_POINTS file with E and H averaged to grid nodes."""
    g = layout.grid
    dim = g.dimension
    dims = [n + 1 for n in g.cells] + [1] * (3 - dim)
    spacing = list(g.spacing) + [1.0] * (3 - dim)
    origin = list(g.origin) + [0.0] * (3 - dim)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS " + " ".join(map(str, dims)),
             "ORIGIN " + " ".join(repr(float(o)) for o in origin),
             "SPACING " + " ".join(repr(float(h)) for h in spacing),
             f"POINT_DATA {int(np.prod(dims))}"]
    for label, vec, fams in (("E", state.e, layout.e_families), ("H", state.h, layout.h_families)):
        arr, is_vector = _nodal_field(np.asarray(vec, dtype=float), fams, dim)
        # VTK wants x fastest; our arrays are C order (last axis fastest)
        if is_vector:
            flat = np.stack([arr[c].transpose().reshape(-1) for c in range(3)], axis=1)
            lines.append(f"VECTORS {label} double")
            lines.extend(" ".join(f"{v:.17g}" for v in row) for row in flat)
        else:
            lines.append(f"SCALARS {label} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" for v in arr.transpose().reshape(-1))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_vtk_header(path) -> dict:
    """Minimal reader for the header fields a viewer reports."""
    out = {}
    with open(path) as fh:
        for line in fh:
            key, _, rest = line.partition(" ")
            if key in ("DIMENSIONS", "ORIGIN", "SPACING"):
                out[key.lower()] = [float(v) for v in rest.split()]
            elif key == "POINT_DATA":
                out["point_data"] = int(rest)
            elif key in ("SCALARS", "VECTORS"):
                out.setdefault("arrays", []).append((key.lower(), rest.split()[0]))
            elif key == "DATASET":
                out["dataset"] = rest.strip()
    return out

