"""Seeded training loop and hyperparameter grid search.

All randomness flows from explicit integer seeds: model init from
ModelConfig.seed, epoch shuffling from SolverConfig.seed, and grid cells
from a root seed combined with a hash of the cell's configuration, so the
same invocation always produces the same parameters and ranking.
"""

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np
import torch
import torch.nn.functional as F

from . import evaluation
from . import model as model_mod

SOLVERS = ("adam", "adamw")


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass(frozen=True)
class SolverConfig:
    """Optimizer settings; weight_decay only applies to adamw."""

    solver: str = "adam"
    learning_rate: float = 0.001
    batch_size: int = 16
    epochs: int = 30
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch training curve plus the final held-out score."""

    epoch_losses: tuple[float, ...]
    epoch_accuracies: tuple[float, ...]
    test_rank1: float | None
    wall_time_s: float
    config: dict

    def as_dict(self):
        return {
            "epoch_losses": list(self.epoch_losses),
            "epoch_accuracies": list(self.epoch_accuracies),
            "test_rank1": self.test_rank1,
            "wall_time_s": self.wall_time_s,
            "config": self.config,
        }


def derive_seed(root, *parts):
    """Stable child seed from a root seed and a path of string labels."""
    text = ":".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:4], "little") % (2 ** 31)


def make_optimizer(net, solver):
    if solver.solver == "adam":
        return torch.optim.Adam(net.parameters(), lr=solver.learning_rate)
    return torch.optim.AdamW(net.parameters(), lr=solver.learning_rate,
                             weight_decay=solver.weight_decay)


def fit_classifier(net, batch_fn, labels, solver):
    """Minimize cross-entropy of net(*batch_fn(indices)) against labels.

    batch_fn maps an index array to the tuple of tensors the network's
    forward expects; this keeps the loop shared between the dual-pathway
    model (two tensors) and the static-frame control (one tensor).
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty 1-D array")
    if labels.min() < 0:
        raise ValueError("labels must be non-negative")
    y_all = torch.from_numpy(labels.astype(np.int64))

    rng = np.random.default_rng(derive_seed(solver.seed, "shuffle"))
    opt = make_optimizer(net, solver)
    n = labels.size
    started = time.perf_counter()
    losses, accs = [], []
    net.train()
    for epoch in range(solver.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        hit_sum = 0
        for i in range(0, n, solver.batch_size):
            idx = perm[i:i + solver.batch_size]
            inputs = batch_fn(idx)
            y = y_all[idx]
            logits = net(*inputs)
            if labels.max() >= logits.shape[1]:
                raise ValueError(
                    f"label {labels.max()} out of range for {logits.shape[1]} classes")
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {i // solver.batch_size} "
                    f"(solver={solver.solver}, lr={solver.learning_rate})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(loss.detach()) * len(idx)
            hit_sum += int((logits.detach().argmax(dim=1) == y).sum())
        losses.append(loss_sum / n)
        accs.append(100.0 * hit_sum / n)
    net.eval()
    return TrainReport(
        epoch_losses=tuple(losses),
        epoch_accuracies=tuple(accs),
        test_rank1=None,
        wall_time_s=time.perf_counter() - started,
        config=dataclasses.asdict(solver),
    )


def train_model(config, solver, train_clips, train_labels,
                test_clips=None, test_labels=None):
    """Train a dual-pathway model on clip tensors; returns (net, report).

    Clips are stacked into pathway tensors once up front so each epoch only
    does indexing; the model is returned in eval mode.
    """
    train_labels = np.asarray(train_labels)
    if len(train_clips) != train_labels.size:
        raise ValueError("train clips and labels disagree on length")
    if train_labels.size and (train_labels.min() < 0
                              or train_labels.max() >= config.num_classes):
        raise ValueError("train labels out of range for num_classes")

    net = model_mod.SlowFastNet(config)
    slow, fast = model_mod.clips_to_batch(train_clips, config.alpha,
                                          expected_shape=config.input_shape)
    report = fit_classifier(net, lambda idx: (slow[idx], fast[idx]),
                            train_labels, solver)

    test_rank1 = None
    if test_clips:
        if test_labels is None or len(test_clips) != len(test_labels):
            raise ValueError("test clips and labels disagree on length")
        test_report, _ = evaluation.evaluate_model(
            net, test_clips, test_labels, batch_size=solver.batch_size)
        test_rank1 = test_report.rank1

    echo = dict(report.config)
    echo["model"] = model_mod.config_to_dict(config)
    return net, dataclasses.replace(report, test_rank1=test_rank1, config=echo)


def config_pair_hash(config, solver):
    """Short stable hash identifying a (ModelConfig, SolverConfig) grid cell."""
    blob = json.dumps(
        {"model": model_mod.config_to_dict(config),
         "solver": dataclasses.asdict(solver)},
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class GridResult:
    """Outcome of one grid cell; error is None on success."""

    config: "model_mod.ModelConfig"
    solver: SolverConfig
    accuracy: float | None
    error: str | None
    cell_hash: str

    @property
    def ok(self):
        return self.error is None


def default_grid(num_classes, input_shape, epochs=30, learning_rate=0.001,
                 base_channels=48, stage_depths=(1, 1)):
    """The default search space: alpha x beta x solver x batch = 16 cells."""
    cells = []
    for alpha in (4, 16):
        for beta in (1 / 8, 1 / 16):
            for solver_name in SOLVERS:
                for batch in (16, 32):
                    cells.append((
                        model_mod.ModelConfig(
                            num_classes=num_classes, input_shape=input_shape,
                            alpha=alpha, beta=beta, base_channels=base_channels,
                            stage_depths=stage_depths),
                        SolverConfig(solver=solver_name, learning_rate=learning_rate,
                                     batch_size=batch, epochs=epochs),
                    ))
    return cells


def _run_cell(payload):
    """Train and score one grid cell; built for process-pool workers."""
    (config_d, solver_d, train_arrays, train_labels,
     val_arrays, val_labels, root_seed, out_dir) = payload
    config = model_mod.config_from_dict(config_d)
    solver = SolverConfig(**solver_d)
    cell = config_pair_hash(config, solver)
    try:
        config = dataclasses.replace(config, seed=derive_seed(root_seed, cell, "init"))
        solver = dataclasses.replace(solver, seed=derive_seed(root_seed, cell, "solve"))
        net, _ = train_model(config, solver, list(train_arrays), train_labels)
        report, _ = evaluation.evaluate_model(net, list(val_arrays), val_labels,
                                              batch_size=solver.batch_size)
        if out_dir is not None:
            model_mod.save_checkpoint(net, f"{out_dir}/cell-{cell}.pt")
        return {"cell": cell, "accuracy": report.rank1, "error": None}
    except Exception as exc:  # recorded, not fatal: the sweep must finish
        return {"cell": cell, "accuracy": None, "error": f"{type(exc).__name__}: {exc}"}


def grid_search(space, train_clips, train_labels, val_clips, val_labels,
                root_seed=0, out_dir=None, jobs=1):
    """Train every (ModelConfig, SolverConfig) cell and rank by val rank-1.

    Each cell gets seeds derived from root_seed and its config hash, so the
    ranking is reproducible and independent of execution order. Failed cells
    are kept in the output with their error message and sort last.
    """
    space = list(space)
    if not space:
        raise ValueError("empty search space")
    train_arrays = [np.asarray(c.data if hasattr(c, "data") else c) for c in train_clips]
    val_arrays = [np.asarray(c.data if hasattr(c, "data") else c) for c in val_clips]
    train_labels = np.asarray(train_labels)
    val_labels = np.asarray(val_labels)

    payloads = [
        (model_mod.config_to_dict(cfg), dataclasses.asdict(sol),
         train_arrays, train_labels, val_arrays, val_labels,
         int(root_seed), str(out_dir) if out_dir is not None else None)
        for cfg, sol in space
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs,
                                 mp_context=get_context("spawn")) as pool:
            raw = list(pool.map(_run_cell, payloads))
    else:
        raw = [_run_cell(p) for p in payloads]

    results = [
        GridResult(config=cfg, solver=sol, accuracy=r["accuracy"],
                   error=r["error"], cell_hash=r["cell"])
        for (cfg, sol), r in zip(space, raw)
    ]
    results.sort(key=lambda r: (
        not r.ok,
        -(r.accuracy if r.accuracy is not None else 0.0),
        r.config.alpha,
        r.config.beta,
        r.solver.solver,
        r.solver.batch_size,
    ))
    if out_dir is not None:
        rows = [{
            "cell": r.cell_hash,
            "accuracy": r.accuracy,
            "error": r.error,
            "alpha": r.config.alpha,
            "beta": r.config.beta,
            "solver": r.solver.solver,
            "batch_size": r.solver.batch_size,
        } for r in results]
        with open(f"{out_dir}/grid_results.json", "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    return results
