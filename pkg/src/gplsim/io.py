"""CSV ingestion, table writers and SVG band plots."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import DuplicateVisit, ParseError, SchemaError
from .model import LongitudinalDataset

_X = re.compile(r"^x(\d+)$")
_Z = re.compile(r"^z(\d+)$")


def _numbered(header, pattern, prefix):
    found = sorted(int(m.group(1)) for m in map(pattern.match, header) if m)
    expected = list(range(1, (max(found) if found else 0) + 1))
    missing = [f"{prefix}{k}" for k in expected if k not in found]
    return len(expected), missing


def ingest_csv(path, standardize: bool = False, return_frame: bool = False):
    """Read ``subject_id,visit,y,x1..xp,z1..zq`` into a dataset.

    Rows are grouped by subject in order of first appearance and sorted by
    visit.  With ``standardize`` every non-binary x or z column is centred
    and scaled to unit sample standard deviation.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty", 1) from None
        p, miss_x = _numbered(header, _X, "x")
        q, miss_z = _numbered(header, _Z, "z")
        missing = [c for c in ("subject_id", "visit", "y") if c not in header] + miss_x + miss_z
        if q == 0:
            missing.append("z1")
        if missing:
            raise SchemaError(missing)
        col = {h: k for k, h in enumerate(header)}
        xcols = [col[f"x{k}"] for k in range(1, p + 1)]
        zcols = [col[f"z{k}"] for k in range(1, q + 1)]
        ids, visits, ys, Xs, Zs = [], [], [], [], []
        seen = set()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
            try:
                sid = row[col["subject_id"]].strip()
                visit = float(row[col["visit"]])
                y = float(row[col["y"]])
                x = [float(row[c]) for c in xcols]
                z = [float(row[c]) for c in zcols]
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", line) from None
            if not np.all(np.isfinite([visit, y, *x, *z])):
                raise ParseError("non-finite value", line)
            if (sid, visit) in seen:
                raise DuplicateVisit(f"subject {sid!r} has visit {visit:g} twice (line {line})")
            seen.add((sid, visit))
            ids.append(sid)
            visits.append(visit)
            ys.append(y)
            Xs.append(x)
            Zs.append(z)
    if not ids:
        raise ParseError("no data rows", 2)
    ids = np.array(ids, dtype=object)
    visits = np.array(visits)
    y = np.array(ys)
    X = np.array(Xs, dtype=float).reshape(len(y), p)
    Z = np.array(Zs, dtype=float).reshape(len(y), q)
    first = {}
    for k, s in enumerate(ids):
        first.setdefault(s, k)
    order = sorted(range(len(y)), key=lambda k: (first[ids[k]], visits[k]))
    ids, visits, y, X, Z = ids[order], visits[order], y[order], X[order], Z[order]
    if standardize:
        X = standardize_columns(X)
        Z = standardize_columns(Z)
    data = LongitudinalDataset.from_arrays(ids, y, X, Z)
    if return_frame:
        return data, dict(subject_id=ids, visit=visits, y=y, X=X, Z=Z)
    return data


def standardize_columns(M) -> np.ndarray:
    M = np.array(M, dtype=float)
    for j in range(M.shape[1]):
        c = M[:, j]
        if np.all(np.isin(c, (0.0, 1.0))):
            continue
        sd = c.std(ddof=1) if len(c) > 1 else 0.0
        if sd > 0:
            M[:, j] = (c - c.mean()) / sd
    return M


def write_dataset_csv(path, ids, visit, y, X, Z) -> None:
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    Z = np.asarray(Z, dtype=float).reshape(len(y), -1)
    header = (["subject_id", "visit", "y"] + [f"x{k + 1}" for k in range(X.shape[1])]
              + [f"z{k + 1}" for k in range(Z.shape[1])])
    rows = [[str(ids[i]), _num(visit[i]), _num(y[i]), *map(_num, X[i]), *map(_num, Z[i])]
            for i in range(len(y))]
    write_rows(path, header, rows)


def _num(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_theta_csv(path) -> dict:
    return {r["component"]: float(r["estimate"]) for r in read_rows(path)}


def read_eta_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = read_rows(path)
    return (np.array([float(r["grid"]) for r in rows]),
            np.array([float(r["value"]) for r in rows]))


# --------------------------------------------------------------------------
# Plotting
# --------------------------------------------------------------------------


def normalize_curve(grid, eta, lo=None, hi=None):
    """Common display convention: mean zero and increasing at the grid midpoint.

    ``lo``/``hi`` (band limits) follow the same shift and reflection.
    """
    grid = np.asarray(grid, dtype=float)
    eta = np.asarray(eta, dtype=float)
    shift = eta.mean()
    mid = len(grid) // 2
    k0, k1 = max(mid - 1, 0), min(mid + 1, len(grid) - 1)
    sign = -1.0 if eta[k1] - eta[k0] < 0 else 1.0
    out = sign * (eta - shift)
    if lo is None:
        return out
    a = sign * (np.asarray(lo, dtype=float) - shift)
    b = sign * (np.asarray(hi, dtype=float) - shift)
    return out, np.minimum(a, b), np.maximum(a, b)


def band_svg(grid, eta, lo, hi, overlays=(), width=640, height=400, title="") -> str:
    """Plain SVG: shaded band polygon, estimate polyline, optional overlay curves."""
    pad = 48
    ys = np.concatenate([eta, lo, hi] + [np.asarray(c) for _, c in overlays])
    ys = ys[np.isfinite(ys)]
    y0, y1 = (float(ys.min()), float(ys.max())) if len(ys) else (-1.0, 1.0)
    if not y1 > y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    x0, x1 = float(grid[0]), float(grid[-1])

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    def pts(xs, vs):
        return " ".join(f"{px(x):.2f},{py(v):.2f}" for x, v in zip(xs, vs))

    poly = pts(np.concatenate([grid, grid[::-1]]), np.concatenate([lo, hi[::-1]]))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#444" stroke-width="1"/>',
        f'<polygon points="{poly}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>',
        f'<polyline points="{pts(grid, eta)}" fill="none" stroke="#08519c" stroke-width="2"/>',
    ]
    colors = ("#d94801", "#238b45", "#6a51a3")
    for k, (name, curve) in enumerate(overlays):
        parts.append(f'<polyline points="{pts(grid, curve)}" fill="none" '
                     f'stroke="{colors[k % len(colors)]}" stroke-width="1.5" '
                     f'stroke-dasharray="6,3"><title>{name}</title></polyline>')
    for v in (x0, (x0 + x1) / 2, x1):
        parts.append(f'<text x="{px(v):.2f}" y="{height - pad + 16}" font-size="11" '
                     f'text-anchor="middle">{v:.2f}</text>')
    for v in (y0, (y0 + y1) / 2, y1):
        parts.append(f'<text x="{pad - 6}" y="{py(v) + 4:.2f}" font-size="11" '
                     f'text-anchor="end">{v:.2f}</text>')
    if title:
        parts.append(f'<text x="{width / 2:.2f}" y="{pad - 16}" font-size="13" '
                     f'text-anchor="middle">{title}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
