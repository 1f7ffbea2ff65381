"""Training loop: forward, credit deltas, decorrelation update, then forward-weight update."""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import credit as credit_mod
from ..data import (BatchPlan, Dataset, batches, load_cifar10, load_cifar100, load_dataset,
                    rho_covariance, synthetic_correlated, to_network_layout, train_val_split)
from ..decorrelation import (DecorrelationError, activity_norm_ratio, correlation_report,
                             decorrelate, update_decorrelation)
from ..network import Network, forward, logits, per_sample_loss, save_checkpoint
from ..optim import AdamState, adam_step, sgd_step
from .config import RunConfig, apply_preset, build_specs

log = logging.getLogger(__name__)


@dataclass
class TrainRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float
    off_diag: list = field(default_factory=list)
    norm_ratio: list = field(default_factory=list)
    wall_time_s: float = 0.0
    diverged: bool = False
    weight_checksum: float = math.nan


@dataclass
class RunData:
    train: Dataset
    val: Dataset | None
    test: Dataset | None


def prepare_data(config: RunConfig) -> RunData:
    """Load or synthesise the datasets named by ``config`` and carve off the validation split."""
    if config.dataset == "synthetic":
        cov = rho_covariance(config.dim, config.rho, config.cov_kind)
        train = synthetic_correlated(config.n_samples, config.dim, cov, config.teacher_seed,
                                     config.classes, sample_seed=config.teacher_seed + 1)
        test = synthetic_correlated(config.test_samples, config.dim, cov, config.teacher_seed,
                                    config.classes, sample_seed=config.teacher_seed + 2,
                                    split="test") if config.test_samples else None
    elif config.dataset == "cifar10":
        train, test = load_cifar10(config.data_path)
    elif config.dataset == "cifar100":
        train, test = load_cifar100(config.data_path)
    elif config.dataset == "file":
        train, test = load_dataset(config.data_path), None
    else:
        raise ValueError(f"unknown dataset {config.dataset!r}")
    val = None
    if config.val_count:
        train, val = train_val_split(train, config.val_count, seed=config.teacher_seed)
    return RunData(train=train, val=val, test=test)


def build_network(config: RunConfig, data: RunData, seed: int) -> Network:
    shape = data.train.sample_shape
    specs = build_specs(config.arch, shape, data.train.class_count)
    return Network(specs, shape, loss=config.loss, seed=seed, eta_M=config.decor_lr,
                   mu_rate=config.mu_rate, gain_mode=config.gain_mode,
                   decorrelate=config.decorrelated)


def evaluate(net: Network, ds: Dataset | None, batch_size: int = 2000):
    """Mean loss and accuracy over ``ds``; ``(nan, nan)`` when there is no data."""
    if ds is None or len(ds) == 0:
        return math.nan, math.nan
    total_loss, correct = 0.0, 0
    for start in range(0, len(ds), batch_size):
        X, Y = to_network_layout(ds.X[start:start + batch_size], ds.Y[start:start + batch_size])
        out = logits(forward(net, X))
        total_loss += float(np.sum(per_sample_loss(net.loss, out, Y)))
        correct += int(np.sum(np.argmax(out, axis=0) == np.argmax(Y, axis=0)))
    return total_loss / len(ds), correct / len(ds)


def decor_diagnostics(net: Network, trace) -> tuple[list, list]:
    """off-diagonal loss and activity-norm ratio per weighted layer on one batch."""
    off, ratio = [], []
    for i in net.weighted_layers:
        state = net.layers[i].decor
        X = trace.inputs[i]
        X_hat = decorrelate(state, X) if net.decorrelate else X
        off.append(correlation_report(X_hat).off_diag_loss)
        ratio.append(activity_norm_ratio(state, X) if net.decorrelate else 1.0)
    return off, ratio


class Diverged(RuntimeError):
    pass


def train_step(net: Network, X, Y, method, opt_states: dict, config: RunConfig, rng):
    """One batch step.  Mutates ``net`` and ``opt_states``; returns the clean trace."""
    trace = forward(net, X)
    deltas = credit_mod.compute_deltas(net, trace, X, Y, method, rng=rng)
    grads = credit_mod.weight_gradients(trace, deltas)
    for i in net.weighted_layers:
        if not np.all(np.isfinite(grads[i])):
            raise Diverged(f"non-finite gradient at layer {i}")
    if net.decorrelate:
        for i in net.weighted_layers:
            layer = net.layers[i]
            try:
                layer.decor = update_decorrelation(layer.decor, trace.inputs[i])
            except DecorrelationError as exc:
                raise Diverged(str(exc)) from exc
    for i in net.weighted_layers:
        layer = net.layers[i]
        if config.optimizer == "adam":
            opt_states[i], layer.W = adam_step(opt_states[i], layer.W, grads[i])
        else:
            layer.W = sgd_step(layer.W, grads[i], config.lr)
    return trace


def train_run(config: RunConfig, seed: int, data: RunData | None = None):
    """Train one seed.  Returns ``(records, net)``; diverged runs end with a marked record."""
    config = apply_preset(config)
    data = data or prepare_data(config)
    net = build_network(config, data, seed)
    method = credit_mod.make_method(config.credit, net, seed=seed + 104729,
                                    sigma=config.np_sigma)
    rng = np.random.default_rng([seed, 31337])
    opt_states = {i: AdamState.zeros_like(net.layers[i].W, lr=config.lr)
                  for i in net.weighted_layers}
    plan = BatchPlan(batch_size=config.batch_size, seed=seed)
    records = []
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        trace = None
        try:
            # overflow is caught below as divergence, so numpy need not warn about it
            with np.errstate(over="ignore", invalid="ignore"):
                for X, Y in batches(data.train, plan, epoch):
                    trace = train_step(net, X, Y, method, opt_states, config, rng)
                train_loss, train_acc = evaluate(net, data.train, config.eval_batch_size)
            if not math.isfinite(train_loss):
                raise Diverged("non-finite training loss")
        except Diverged as exc:
            log.warning("seed %d diverged in epoch %d: %s", seed, epoch, exc)
            n = len(net.weighted_layers)
            records.append(TrainRecord(epoch, math.nan, math.nan, math.nan, math.nan,
                                       [math.nan] * n, [math.nan] * n,
                                       time.perf_counter() - t0, diverged=True))
            break
        off, ratio = decor_diagnostics(net, trace) if trace is not None else ([], [])
        _, val_acc = evaluate(net, data.val, config.eval_batch_size)
        _, test_acc = evaluate(net, data.test, config.eval_batch_size)
        records.append(TrainRecord(epoch, train_loss, train_acc, val_acc, test_acc, off, ratio,
                                   time.perf_counter() - t0,
                                   weight_checksum=net.weight_checksum()))
        log.info("seed %d epoch %d loss %.4f train %.4f val %.4f test %.4f", seed, epoch,
                 train_loss, train_acc, val_acc, test_acc)
    return records, net


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def metrics_header(n_layers: int) -> list[str]:
    return (["epoch", "train_loss", "train_acc", "val_acc", "test_acc"]
            + [f"off_diag_{k}" for k in range(n_layers)]
            + [f"norm_ratio_{k}" for k in range(n_layers)] + ["weight_checksum", "diverged"])


def write_metrics_csv(path, records: list[TrainRecord], n_layers: int) -> None:
    """Per-epoch metrics.  Wall-clock time is kept out so reruns are byte-identical."""
    lines = [",".join(metrics_header(n_layers))]
    for r in records:
        row = [r.epoch, r.train_loss, r.train_acc, r.val_acc, r.test_acc,
               *r.off_diag, *r.norm_ratio, r.weight_checksum, r.diverged]
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[dict]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        return [dict(zip(header, line.strip().split(","))) for line in fh if line.strip()]


def write_timing_csv(path, records: list[TrainRecord]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,wall_time_s\n")
        fh.writelines(f"{r.epoch},{r.wall_time_s:.6f}\n" for r in records)


def _run_seed(args):
    config, seed = args
    return seed, train_run(config, seed)


def train(config: RunConfig, jobs: int = 1) -> dict:
    """Train every seed in ``config.seeds``; returns ``{seed: [TrainRecord, ...]}``.

    When ``config.out`` is set, each seed writes ``metrics_seed<k>.csv``,
    ``timing_seed<k>.csv`` and, if it did not diverge, ``net_seed<k>.dcnw``.
    """
    config = apply_preset(config)
    results = {}
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = dict(pool.map(_run_seed, [(config, s) for s in config.seeds]))
    else:
        data = prepare_data(config)
        runs = {s: train_run(config, s, data) for s in config.seeds}
    for seed in config.seeds:
        records, net = runs[seed]
        results[seed] = records
        if config.out:
            os.makedirs(config.out, exist_ok=True)
            n = len(net.weighted_layers)
            write_metrics_csv(os.path.join(config.out, f"metrics_seed{seed}.csv"), records, n)
            write_timing_csv(os.path.join(config.out, f"timing_seed{seed}.csv"), records)
            if config.checkpoint and not any(r.diverged for r in records):
                save_checkpoint(net, os.path.join(config.out, f"net_seed{seed}.dcnw"))
    return results


def epochs_to_accuracy(records: list[TrainRecord], threshold: float,
                       metric: str = "train_acc") -> float:
    """First epoch whose ``metric`` reaches ``threshold``; ``inf`` if never."""
    for r in records:
        if getattr(r, metric) >= threshold:
            return r.epoch
    return math.inf
