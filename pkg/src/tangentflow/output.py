"""Writers for run artifacts: CSV tables, JSON summaries and legacy VTK."""
from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else f"{float(v):.10e}"
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def write_vtk(path, vertices, triangles, point_data: dict | None = None,
              deterministic: bool = False, title: str = "tangentflow") -> None:
    """Legacy ASCII VTK polydata with scalar (n,) and vector (n, 3) point fields."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    header = title if deterministic else f"{title} {time.strftime('%Y-%m-%dT%H:%M:%S')}"
    lines = ["# vtk DataFile Version 3.0", header, "ASCII", "DATASET POLYDATA",
             f"POINTS {len(vertices)} double"]
    lines += [f"{p[0]:.12e} {p[1]:.12e} {p[2]:.12e}" for p in vertices]
    lines.append(f"POLYGONS {len(triangles)} {4 * len(triangles)}")
    lines += [f"3 {t[0]} {t[1]} {t[2]}" for t in triangles]
    if point_data:
        lines.append(f"POINT_DATA {len(vertices)}")
        for name in sorted(point_data):
            arr = np.asarray(point_data[name], dtype=float)[: len(vertices)]
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.12e}" for v in arr]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{v[0]:.12e} {v[1]:.12e} {v[2]:.12e}" for v in arr]
    Path(path).write_text("\n".join(lines) + "\n")
