"""CSV writing with fixed column order and reproducible float formatting."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["write_csv", "fmt_float"]


def fmt_float(v) -> str:
    """Shortest round-trip representation; reruns are byte-identical."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header: list[str], columns: list) -> None:
    """Write columns (equal-length sequences) under `header` to `path`."""
    cols = [np.atleast_1d(c) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("all columns must have the same length")
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(fmt_float(c[i]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")
