"""File formats: CSV/JSON artifacts with provenance headers and binary collision tables.

CSV files start with ``#``-prefixed provenance lines followed by an
RFC-4180 style table. Floats are written with 17 significant digits so the
output is byte-for-byte reproducible.

Binary collision table layout (little endian)::

    magic     8 bytes   b"FKCOLTAB"
    version   uint32    1
    dim       uint32
    n         uint32
    mode      uint32    0 = mollified, 1 = exact-shell
    eta       float64
    threshold float64
    lam       float64
    count     uint64
    records   count x (k, l, m, p: uint32; weight: float64)
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .collision import EXACT_SHELL, MOLLIFIED, CollisionTable
from .errors import ContractError
from .lattice import MomentumGrid, build_grid

__all__ = [
    "fmt",
    "write_csv",
    "write_json",
    "read_csv",
    "sha256_file",
    "save_table_binary",
    "load_table_binary",
    "save_table_csv",
    "write_occupation",
    "write_profile",
    "write_trajectory",
    "write_regime_report",
    "TABLE_MAGIC",
]

TABLE_MAGIC = b"FKCOLTAB"
_HEADER = struct.Struct("<8sIIIIdddQ")
_RECORD = np.dtype([("k", "<u4"), ("l", "<u4"), ("m", "<u4"), ("p", "<u4"), ("weight", "<f8")])


def fmt(x) -> str:
    """Deterministic text form of a scalar."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return {"real": obj.real, "imag": obj.imag}
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_csv(path, columns, rows, provenance: dict | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, val in sorted((provenance or {}).items()):
            fh.write(f"# {key}: {val}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(x) for x in row])
    return path


def read_csv(path):
    """Return ``(provenance dict, columns, rows as lists of strings)``."""
    prov, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, val = line[2:].rstrip("\n").partition(": ")
                prov[key] = val
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return prov, rows[0], rows[1:]


def write_json(path, obj, provenance: dict | None = None) -> Path:
    path = Path(path)
    data = dict(obj)
    if provenance is not None:
        data = {"provenance": provenance, **data}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_table_binary(table: CollisionTable, path) -> Path:
    path = Path(path)
    mode = 0 if table.mode == MOLLIFIED else 1
    header = _HEADER.pack(TABLE_MAGIC, 1, table.grid.dim, table.grid.n, mode, float(table.eta),
                          float(table.threshold), float(table.lam), len(table))
    rec = np.empty(len(table), dtype=_RECORD)
    rec["k"], rec["l"], rec["m"], rec["p"] = table.k, table.l, table.m, table.p
    rec["weight"] = table.weight
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())
    return path


def load_table_binary(path, eps=None) -> CollisionTable:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ContractError("truncated collision table header")
        magic, version, dim, n, mode, eta, threshold, lam, count = _HEADER.unpack(raw)
        if magic != TABLE_MAGIC or version != 1:
            raise ContractError("not a collision table file (bad magic or version)")
        rec = np.frombuffer(fh.read(), dtype=_RECORD)
    if rec.size != count:
        raise ContractError(f"collision table declares {count} records, found {rec.size}")
    grid = build_grid(dim, n)
    cols = [rec[c].astype(np.int32) for c in ("k", "l", "m", "p")]
    return CollisionTable(grid, *cols, rec["weight"].astype(float),
                          mode=MOLLIFIED if mode == 0 else EXACT_SHELL, eta=eta,
                          threshold=threshold, lam=lam, eps=eps)


def save_table_csv(table: CollisionTable, path, provenance=None) -> Path:
    prov = {"dim": table.grid.dim, "n": table.grid.n, "mode": table.mode,
            "eta": fmt(table.eta), "threshold": fmt(table.threshold), "lam": fmt(table.lam)}
    prov.update(provenance or {})
    rows = zip(table.k, table.l, table.m, table.p, table.weight)
    return write_csv(path, ["k", "l", "m", "p", "weight"], rows, prov)


def write_occupation(path, grid: MomentumGrid, w, provenance=None, t=None) -> tuple[Path, Path]:
    """Occupation CSV (index, coordinates, momenta, value) plus a JSON header file."""
    path = Path(path)
    coords = grid.coords
    mom = grid.momenta
    cols = ["index"] + [f"j{a + 1}" for a in range(grid.dim)] + \
        [f"p{a + 1}" for a in range(grid.dim)] + ["w"]
    rows = ([i, *coords[i], *mom[i], w[i]] for i in range(grid.size))
    write_csv(path, cols, rows, provenance)
    header = {"dim": grid.dim, "n": grid.n, "t": t, "cell_weight": grid.cell_weight,
              "momentum_convention": "p_j = -pi + 2 pi j / n per axis; flat index in C order"}
    jpath = path.with_suffix(".json")
    write_json(jpath, header, provenance)
    return path, jpath


def write_profile(path, profile, provenance=None) -> Path:
    """Torus profile C(d) as CSV with minimal-image coordinates (d..., real, imag)."""
    prof = np.asarray(profile)
    n = prof.shape[0]
    dim = prof.ndim
    cols = [f"d{a + 1}" for a in range(dim)] if dim > 1 else ["d"]
    rows = []
    for idx in np.ndindex(*prof.shape):
        d = [i if i < n // 2 else i - n for i in idx]
        rows.append((*d, prof[idx].real, prof[idx].imag))
    rows.sort(key=lambda r: tuple(r[:dim]))
    return write_csv(path, cols + ["real", "imag"], rows, provenance)


def write_trajectory(path, traj, provenance=None) -> Path:
    rows = ((pt.t, pt.rho, pt.e, pt.s, pt.dist_fd) for pt in traj)
    return write_csv(path, ["t", "rho", "e", "s", "dist_fd"], rows, provenance)


def write_regime_report(stem, report, provenance=None) -> tuple[Path, Path]:
    stem = Path(stem)
    rows = ((c.K, c.N, c.ratio, c.value, c.label or "") for c in report.cells)
    cpath = write_csv(stem.with_suffix(".csv"), ["K", "N", "K/N", "dV", "label"], rows, provenance)
    data = {"moment": report.moment, "exponent": report.exponent,
            "thresholds": report.thresholds, "v_inf": report.v_inf,
            "cells": [{"K": c.K, "N": c.N, "K/N": c.ratio, "dV": c.value, "label": c.label}
                      for c in report.cells]}
    jpath = write_json(stem.with_suffix(".json"), data, provenance)
    return cpath, jpath
