"""Learning-rate grid search over forward and decorrelation rates."""
from __future__ import annotations

import csv
import itertools
import logging
import math
import os
from dataclasses import dataclass, replace

from ..data import VALIDATION_COUNT
from .config import RunConfig
from .training import prepare_data, train_run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridRow:
    lr: float
    decor_lr: float
    final_val_acc: float
    best_val_acc: float
    best_epoch: int
    diverged: bool


@dataclass
class GridResult:
    best: RunConfig
    table: list


def _score(records) -> GridRow:
    vals = [r.val_acc for r in records if not r.diverged and math.isfinite(r.val_acc)]
    if not vals:
        return GridRow(math.nan, math.nan, -math.inf, -math.inf, 0, True)
    best = max(vals)
    best_epoch = next(r.epoch for r in records if r.val_acc == best)
    return GridRow(math.nan, math.nan, vals[-1], best, best_epoch,
                   any(r.diverged for r in records))


def grid_search(config: RunConfig, forward_lr_set, decor_lr_set) -> GridResult:
    """One run per ``(lr, decor_lr)`` pair on the validation split, first seed only.

    The winner has the highest best-epoch validation accuracy; ties go to the
    pair that got there in fewer epochs, then to the earlier pair in the grid.
    If ``config.val_count`` is 0, a fifth of the training set is held out.
    """
    forward_lr_set, decor_lr_set = list(forward_lr_set), list(decor_lr_set)
    if not forward_lr_set or not decor_lr_set:
        raise ValueError("grid_search needs nonempty learning-rate sets")
    if config.val_count == 0:
        config = replace(config, val_count=config.n_samples // 5 if config.dataset == "synthetic"
                         else VALIDATION_COUNT)
    config = replace(config, preset="")
    data = prepare_data(config)
    seed = config.seeds[0]
    table = []
    best_key, best_cfg = None, None
    for lr, decor_lr in itertools.product(forward_lr_set, decor_lr_set):
        cfg = replace(config, lr=lr, decor_lr=decor_lr)
        records, _ = train_run(cfg, seed, data)
        row = replace(_score(records), lr=lr, decor_lr=decor_lr)
        table.append(row)
        log.info("grid lr=%g decor_lr=%g best_val=%.4f @%d", lr, decor_lr, row.best_val_acc,
                 row.best_epoch)
        key = (row.best_val_acc, -row.best_epoch)
        if best_key is None or key > best_key:
            best_key, best_cfg = key, cfg
    if config.out:
        os.makedirs(config.out, exist_ok=True)
        write_grid_csv(os.path.join(config.out, "grid.csv"), table)
    return GridResult(best=best_cfg, table=table)


def write_grid_csv(path, table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lr", "decor_lr", "final_val_acc", "best_val_acc", "best_epoch", "diverged"])
        for r in table:
            w.writerow([repr(r.lr), repr(r.decor_lr), repr(r.final_val_acc),
                        repr(r.best_val_acc), r.best_epoch, int(r.diverged)])
