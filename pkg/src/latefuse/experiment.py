"""Run orchestration shared by the CLI and the experiment scripts.

Glues the pieces together: cached samples -> temporal split -> train-split
normalization -> encoded datasets -> training/evaluation -> artifacts
(series, metrics, checkpoint, manifest).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import SequenceBatch
from .kernel import Rng
from .model import (TASK_CLASSIFICATION, TASK_REGRESSION, Model, ModelConfig,
                    init_model, model_from_arrays, model_to_arrays)
from .pipeline import (VIEW_DIMS, VIEW_NAMES, DataError, Normalizer,
                       SampleRecord, read_cache)
from .training import (EncodedDataset, Metrics, TrainConfig, TrainHistory,
                       dichotomize_hdrs, evaluate, temporal_split, train)

logger = logging.getLogger(__name__)

TASK_HDRS = "hdrs"
TASK_YMRS = "ymrs"
GRID_VALUES = (4, 8, 16)
SPLIT_RATIO = 0.8

SERIES_FILE = "series.csv"
METRICS_FILE = "metrics.json"
CHECKPOINT_FILE = "checkpoint.bin"


@dataclass
class RunConfig:
    """Everything that defines one training run (echoed into artifacts)."""

    head: str = "mvm"
    task: str = TASK_HDRS
    d_h: int = 8
    k: int = 8
    epochs: int = 500
    batch_size: int = 256
    learning_rate: float = 0.001
    dropout_fraction: float = 0.1
    seed: int = 0
    views: Tuple[str, ...] = VIEW_NAMES
    split_ratio: float = SPLIT_RATIO

    def __post_init__(self):
        if self.task not in (TASK_HDRS, TASK_YMRS):
            raise ValueError(f"unknown task {self.task!r}; expected hdrs or ymrs")
        unknown = [v for v in self.views if v not in VIEW_NAMES]
        if unknown:
            raise ValueError(f"unknown view(s) {unknown}; valid views are "
                             f"{list(VIEW_NAMES)}")
        if len(self.views) == 0:
            raise ValueError("need at least one view")
        if self.head == "mvm" and len(self.views) < 2:
            raise ValueError("the mvm head needs at least 2 views")

    @property
    def model_task(self) -> str:
        return TASK_CLASSIFICATION if self.task == TASK_HDRS else TASK_REGRESSION

    def view_indices(self) -> List[int]:
        return [VIEW_NAMES.index(v) for v in self.views]

    def model_config(self) -> ModelConfig:
        idx = self.view_indices()
        return ModelConfig(
            view_names=tuple(VIEW_NAMES[i] for i in idx),
            view_dims=tuple(VIEW_DIMS[i] for i in idx),
            d_h=self.d_h, k=self.k, head=self.head, task=self.model_task,
            bidirectional=True, dropout_fraction=self.dropout_fraction)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=self.seed)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["views"] = list(self.views)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["views"] = tuple(d.get("views", VIEW_NAMES))
        return cls(**d)


def _label_of(sample: SampleRecord, task: str) -> float:
    if task == TASK_HDRS:
        return float(dichotomize_hdrs(sample.hdrs))
    return float(sample.ymrs)


def build_dataset(samples: Sequence[SampleRecord], normalizer: Normalizer,
                  task: str, view_indices: Sequence[int]) -> EncodedDataset:
    """Normalize and pad a sample list into per-view batches."""
    if not samples:
        raise DataError("cannot build a dataset from zero samples")
    per_view: List[List[np.ndarray]] = [[] for _ in view_indices]
    labels = []
    for s in samples:
        views = normalizer.transform_views(s.views)
        for out, idx in zip(per_view, view_indices):
            out.append(views[idx])
        labels.append(_label_of(s, task))
    batches = [SequenceBatch.from_sequences(seqs) for seqs in per_view]
    dtype = np.int64 if task == TASK_HDRS else np.float64
    return EncodedDataset(views=batches, labels=np.array(labels, dtype=dtype))


def prepare_data(samples: Sequence[SampleRecord], config: RunConfig):
    """Split, fit the normalizer on train only, and encode both splits."""
    train_samples, val_samples = temporal_split(samples, config.split_ratio)
    if not train_samples or not val_samples:
        raise DataError(
            f"temporal split produced {len(train_samples)} train / "
            f"{len(val_samples)} val sessions; not enough data to train")
    normalizer = Normalizer().fit(train_samples)
    idx = config.view_indices()
    train_ds = build_dataset(train_samples, normalizer, config.task, idx)
    val_ds = build_dataset(val_samples, normalizer, config.task, idx)
    return train_ds, val_ds, normalizer


@dataclass
class RunResult:
    config: RunConfig
    model: Model
    normalizer: Normalizer
    history: TrainHistory

    @property
    def final(self) -> Metrics:
        return self.history.final


def train_run(samples: Sequence[SampleRecord], config: RunConfig) -> RunResult:
    train_ds, val_ds, normalizer = prepare_data(samples, config)
    rng = Rng(config.seed)
    model = init_model(config.model_config(), rng)
    history = train(model, train_ds, val_ds, config.train_config(), rng,
                    log_every=max(1, config.epochs // 10))
    return RunResult(config=config, model=model, normalizer=normalizer,
                     history=history)


def save_run(out_dir, result: RunResult) -> Dict[str, str]:
    """Write series.csv, metrics.json and checkpoint.bin into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "series": os.path.join(out_dir, SERIES_FILE),
        "metrics": os.path.join(out_dir, METRICS_FILE),
        "checkpoint": os.path.join(out_dir, CHECKPOINT_FILE),
    }
    from .reports import write_metrics, write_series
    write_series(paths["series"], result.history.columns)
    write_metrics(paths["metrics"], {
        "task": result.config.task,
        "config": result.config.to_dict(),
        "epochs_run": len(result.history.columns["epoch"]),
        "final": result.final.to_dict(),
    })
    meta = {
        "kind": "model-checkpoint",
        "model_config": result.model.config.to_dict(),
        "run_config": result.config.to_dict(),
    }
    arrays = dict(model_to_arrays(result.model))
    arrays.update(result.normalizer.to_arrays())
    save_checkpoint(paths["checkpoint"], meta, arrays)
    return paths


def load_run_checkpoint(path) -> Tuple[RunConfig, Model, Normalizer]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "model-checkpoint":
        raise DataError(f"checkpoint at {path} is not a model checkpoint")
    run_config = RunConfig.from_dict(meta["run_config"])
    model_config = ModelConfig.from_dict(meta["model_config"])
    normalizer = Normalizer.from_arrays(arrays)
    params = {name: arr for name, arr in arrays.items()
              if not name.startswith("norm.")}
    model = model_from_arrays(model_config, params)
    return run_config, model, normalizer


def eval_checkpoint(checkpoint_path, cache_path,
                    ablate_view: Optional[str] = None) -> Tuple[Metrics, RunConfig]:
    """Rebuild the run's validation split and evaluate the stored model.

    ``ablate_view`` zeroes that view's (normalized) inputs, measuring how
    much the trained model leans on it.
    """
    run_config, model, normalizer = load_run_checkpoint(checkpoint_path)
    samples = read_cache(cache_path)
    _, val_samples = temporal_split(samples, run_config.split_ratio)
    if not val_samples:
        raise DataError("validation split is empty for this cache")
    idx = run_config.view_indices()
    val_ds = build_dataset(val_samples, normalizer, run_config.task, idx)
    if ablate_view is not None:
        if ablate_view not in run_config.views:
            raise ValueError(
                f"unknown view {ablate_view!r}; this model's views are "
                f"{list(run_config.views)}")
        val_ds = val_ds.ablate_view(run_config.views.index(ablate_view))
    return evaluate(model, val_ds), run_config


def _selection_score(metrics: Metrics, task: str) -> float:
    if task == TASK_HDRS:
        return metrics.accuracy
    return -metrics.rmse


def grid_run(samples: Sequence[SampleRecord], base: RunConfig, out_dir,
             grid: Sequence[int] = GRID_VALUES) -> dict:
    """Train every (d_h, k) grid cell; per-cell seeds derive from the base seed.

    Returns a summary dict with every cell's final metrics and the
    validation-selected cell.
    """
    os.makedirs(out_dir, exist_ok=True)
    cells = []
    best = None
    master = Rng(base.seed)
    for i, d_h in enumerate(grid):
        for j, k in enumerate(grid):
            cell_seed = int(master.child(i, j).integers(0, 2 ** 31))
            cfg_dict = base.to_dict()
            cfg_dict.update(d_h=d_h, k=k, seed=cell_seed)
            cfg = RunConfig.from_dict(cfg_dict)
            cell_dir = os.path.join(out_dir, f"cell_dh{d_h}_k{k}")
            logger.info("grid cell d_h=%d k=%d (seed %d)", d_h, k, cell_seed)
            result = train_run(samples, cfg)
            save_run(cell_dir, result)
            entry = {"d_h": d_h, "k": k, "seed": cell_seed,
                     "dir": os.path.basename(cell_dir),
                     "final": result.final.to_dict()}
            cells.append(entry)
            score = _selection_score(result.final, base.task)
            if best is None or score > best[0]:
                best = (score, entry)
    summary = {"task": base.task, "head": base.head, "grid": list(grid),
               "cells": cells, "selected": best[1]}
    from .reports import write_metrics
    write_metrics(os.path.join(out_dir, "summary.json"), summary)
    return summary
