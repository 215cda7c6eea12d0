"""CSV and manifest output.

Numbers are written with 17 significant digits so that a round trip through
text is exact for doubles; files use LF line endings.
"""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path as FsPath
from typing import Iterable, Sequence

import numpy as np

from .core import Path, RoughPath
from .fields import GaussianBasis


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def emit_table(rows: Iterable[Sequence], schema: Sequence[str], path) -> FsPath:
    """Write ``rows`` under the header ``schema``; returns the path written."""
    out = FsPath(path)
    schema = list(schema)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(schema)
            for r in rows:
                r = list(r)
                if len(r) != len(schema):
                    raise ValueError(f"row has {len(r)} fields, schema has {len(schema)}")
                w.writerow([_fmt(v) for v in r])
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from exc
    return out


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_path(p: Path, path, label: str = "x") -> FsPath:
    d = p.values.shape[1]
    rows = [[t, *v] for t, v in zip(p.grid.points, p.values)]
    return emit_table(rows, ["t"] + [f"{label}{k}" for k in range(d)], path)


def write_rough_path(rp: RoughPath, path) -> tuple[FsPath, FsPath]:
    """Path CSV plus a companion with ``ZZ_{0 t_j}`` entries (rows ``(0, j)``)."""
    out = FsPath(path)
    first = write_path(rp.z, out, "z")
    m = rp.m
    j = np.arange(len(rp.grid))
    zz = rp.area(np.zeros_like(j), j).reshape(j.size, m * m)
    rows = [[0, int(jj), rp.grid.points[jj], *vals] for jj, vals in zip(j, zz)]
    schema = ["s_index", "t_index", "t"] + [f"zz{a}{b}" for a in range(m) for b in range(m)]
    second = emit_table(rows, schema, out.with_name(out.stem + "_area" + out.suffix))
    return first, second


def write_atoms(basis: GaussianBasis, coeffs, path) -> FsPath:
    """One row per atom: center, width, direction and coefficient."""
    d = basis.d
    coeffs = np.asarray(coeffs, dtype=float).reshape(basis.K)
    rows = [[k, *basis.centers[k], basis.widths[k], *basis.directions[k], coeffs[k]] for k in range(basis.K)]
    schema = ["atom"] + [f"c{i}" for i in range(d)] + ["width"] + [f"v{i}" for i in range(d)] + ["coef"]
    return emit_table(rows, schema, path)


def write_manifest(out_dir, entries: dict) -> FsPath:
    """Plain ``key=value`` provenance manifest; nested values are JSON-encoded."""
    out = FsPath(out_dir) / "manifest.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    base = {"python": platform.python_version(), "numpy": np.__version__}
    for k, v in {**entries, **base}.items():
        val = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
        lines.append(f"{k}={val}")
    out.write_text("\n".join(lines) + "\n")
    return out
