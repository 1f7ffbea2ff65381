"""Plain-text plot data: ``# <section>`` headers followed by whitespace-separated float rows.

Floats are written with 17 significant digits so a write/read cycle is exact.
Lines starting with ``##`` are comments.
"""
from __future__ import annotations

import numpy as np


def format_rows(arr) -> list[str]:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    return [" ".join(f"{v:.17g}" for v in row) for row in arr]


def write_plot_data(path, sections: dict, comments=()) -> None:
    lines = [f"## {c}" for c in comments]
    for name, arr in sections.items():
        if "\n" in name or not name.strip():
            raise ValueError(f"bad section name {name!r}")
        lines.append(f"# {name}")
        lines.extend(format_rows(arr))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_plot_data(path) -> dict:
    sections: dict = {}
    current = None
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("##"):
                continue
            if line.startswith("#"):
                current = line[1:].strip()
                sections[current] = []
                continue
            if current is None:
                raise ValueError(f"{path}: data row before the first section header")
            sections[current].append([float(v) for v in line.split()])
    return {k: np.array(v, dtype=np.float64) for k, v in sections.items()}
