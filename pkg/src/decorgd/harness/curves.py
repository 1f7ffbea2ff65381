"""Multi-seed learning-curve envelopes."""
from __future__ import annotations

import numpy as np

from ..plotdata import read_plot_data, write_plot_data

CURVE_METRICS = ("train_loss", "train_acc", "val_acc", "test_acc")


def curve_table(records_by_seed: dict, metrics=CURVE_METRICS) -> tuple[list[str], np.ndarray]:
    """Columns ``epoch`` then ``<metric>_mean, <metric>_min, <metric>_max`` per metric.

    Seeds that stopped early (divergence) simply drop out of later epochs.
    """
    if not records_by_seed:
        raise ValueError("need at least one seed")
    n_epochs = max(len(r) for r in records_by_seed.values())
    columns = ["epoch"]
    table = [np.arange(1, n_epochs + 1, dtype=np.float64)]
    for m in metrics:
        vals = np.full((len(records_by_seed), n_epochs), np.nan)
        for row, records in enumerate(records_by_seed.values()):
            for r in records:
                if not r.diverged:
                    vals[row, r.epoch - 1] = getattr(r, m)
        with np.errstate(all="ignore"):
            present = ~np.all(np.isnan(vals), axis=0)
            mean = np.full(n_epochs, np.nan)
            lo = np.full(n_epochs, np.nan)
            hi = np.full(n_epochs, np.nan)
            mean[present] = np.nanmean(vals[:, present], axis=0)
            lo[present] = np.nanmin(vals[:, present], axis=0)
            hi[present] = np.nanmax(vals[:, present], axis=0)
        columns += [f"{m}_mean", f"{m}_min", f"{m}_max"]
        table += [mean, lo, hi]
    return columns, np.column_stack(table)


def emit_curves(records_by_seed: dict, path, metrics=CURVE_METRICS) -> None:
    """Write the envelope table as a single plot-data section headed by its column names."""
    columns, table = curve_table(records_by_seed, metrics)
    write_plot_data(path, {"curves " + " ".join(columns): table},
                    comments=[f"seeds: {', '.join(str(s) for s in records_by_seed)}",
                              "envelope = min/max across seeds"])


def read_curves(path) -> tuple[list[str], np.ndarray]:
    sections = read_plot_data(path)
    (name, table), = sections.items()
    return name.split()[1:], table
