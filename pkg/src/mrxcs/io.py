"""Plain-text artifact formats: CSV with round-trip floats and 8-bit PGM (P2)."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np


def fmt_float(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def write_matrix_csv(path, mat) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in mat.tolist():
            fh.write(",".join(map(repr, row)))
            fh.write("\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = [[float(tok) for tok in line.split(",")] for line in fh if line.strip()]
    return np.array(rows, dtype=float)


def write_vector_csv(path, vec) -> None:
    with open(path, "w", newline="") as fh:
        for x in np.asarray(vec, dtype=float).ravel().tolist():
            fh.write(repr(x))
            fh.write("\n")


def read_vector_csv(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([float(line) for line in fh if line.strip()])


def write_pgm(path, image, n_max: float = 1.0) -> None:
    """P2 grayscale, value = round(255 * n / n_max) clipped to [0, 255].

    Rows are written top to bottom, so the image's last row (largest y)
    comes first.
    """
    img = np.asarray(image, dtype=float)
    pix = np.clip(np.rint(255.0 * img / n_max), 0, 255).astype(int)[::-1]
    h, w = pix.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in pix]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`; returns integer pixels in the stored orientation flipped back."""
    tokens = [tok for line in Path(path).read_text().splitlines()
              if not line.startswith("#") for tok in line.split()]
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM (P2) file")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.array([int(t) for t in tokens[4:4 + w * h]]).reshape(h, w)
    return pix[::-1]


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else fmt_float(v) if isinstance(v, float) else v
                             for v in row])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def json_float(x):
    """JSON-safe float: infinities become strings."""
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return None
    return x


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
