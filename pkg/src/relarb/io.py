"""Deterministic JSON/CSV emission: 17-significant-digit decimals, sorted keys."""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


def _fmt_float(x: float) -> str:
    if np.isnan(x):
        return '"nan"'
    if np.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(float(x), ".17g")


def canonical_json(obj, indent: int = 0) -> str:
    """Round-trip-exact JSON: floats at 17 significant digits, keys sorted.

    Non-finite floats are emitted as the strings "inf"/"-inf"/"nan".
    """
    pad = "  " * indent
    child = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [canonical_json(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(child + s for s in items) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        keys = sorted(str(k) for k in obj)
        items = [f'{child}"{k}": ' + canonical_json(obj[str(k) if str(k) in obj else k], indent + 1)
                 for k in keys]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj) + "\n", encoding="utf-8")
    return path


def sha256_of(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_csv(path: Path, t: np.ndarray, columns: dict[str, np.ndarray]) -> Path:
    """Path dump: header `t,<series names>`, decimals with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns.keys())
    lines = ["t," + ",".join(names)]
    cols = [np.asarray(columns[k], dtype=np.float64) for k in names]
    for i, ti in enumerate(np.asarray(t, dtype=np.float64)):
        row = [format(ti, ".17g")] + [format(float(c[i]), ".17g") for c in cols]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
