"""End-to-end model: one recurrent encoder per view, dropout, fusion head.

Parameters are exposed as a flat, deterministically ordered list of
(name, array) pairs so the optimizer and the checkpoint writer see one
stable layout regardless of head choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .encoder import (BiGruParams, EncoderConfig, SequenceBatch,
                      encode_sequence, encode_sequence_backward)
from .fusion import (DropoutConfig, HeadParams, dropout, dropout_backward,
                     head_backward, head_forward, make_head)
from .kernel import Rng, ShapeError

TASK_CLASSIFICATION = "classification"
TASK_REGRESSION = "regression"


@dataclass
class ModelConfig:
    view_names: Tuple[str, ...]
    view_dims: Tuple[int, ...]
    d_h: int = 8
    k: int = 8
    head: str = "mvm"
    task: str = TASK_CLASSIFICATION
    bidirectional: bool = True
    dropout_fraction: float = 0.1

    def __post_init__(self):
        if len(self.view_names) != len(self.view_dims):
            raise ValueError("view_names and view_dims must align")
        if len(self.view_names) == 0:
            raise ValueError("need at least one view")
        if self.head == "mvm" and len(self.view_names) < 2:
            raise ValueError("the mvm head needs at least 2 views")
        if self.task not in (TASK_CLASSIFICATION, TASK_REGRESSION):
            raise ValueError(f"unknown task {self.task!r}")
        if self.head not in ("fc", "fm", "mvm"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def num_classes(self) -> int:
        return 2 if self.task == TASK_CLASSIFICATION else 1

    @property
    def encoder_out_dim(self) -> int:
        return 2 * self.d_h if self.bidirectional else self.d_h

    @property
    def fused_dim(self) -> int:
        return self.encoder_out_dim * len(self.view_names)

    def encoder_config(self, view_index: int) -> EncoderConfig:
        return EncoderConfig(d_x=self.view_dims[view_index], d_h=self.d_h,
                             bidirectional=self.bidirectional)

    def to_dict(self) -> dict:
        return {
            "view_names": list(self.view_names),
            "view_dims": list(self.view_dims),
            "d_h": self.d_h,
            "k": self.k,
            "head": self.head,
            "task": self.task,
            "bidirectional": self.bidirectional,
            "dropout_fraction": self.dropout_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(view_names=tuple(d["view_names"]),
                   view_dims=tuple(d["view_dims"]),
                   d_h=int(d["d_h"]), k=int(d["k"]), head=d["head"],
                   task=d["task"], bidirectional=bool(d["bidirectional"]),
                   dropout_fraction=float(d["dropout_fraction"]))


@dataclass
class Model:
    config: ModelConfig
    encoders: List[BiGruParams]
    head: HeadParams


def init_model(config: ModelConfig, rng: Rng) -> Model:
    """Build a model with uniform(-0.08, 0.08) weights, drawn in fixed order:
    encoders in view order (forward cell then reverse cell), then the head."""
    encoders = [BiGruParams.init(config.encoder_config(i), rng)
                for i in range(len(config.view_names))]
    view_out_dims = [config.encoder_out_dim] * len(config.view_names)
    head = make_head(config.head, view_out_dims, config.k, config.num_classes, rng)
    return Model(config=config, encoders=encoders, head=head)


def named_params(model: Model) -> List[Tuple[str, np.ndarray]]:
    out = []
    for name, enc in zip(model.config.view_names, model.encoders):
        out += [(f"{name}.{suffix}", arr) for suffix, arr in enc.arrays()]
    out += [(f"head.{suffix}", arr) for suffix, arr in model.head.arrays()]
    return out


def model_to_arrays(model: Model) -> Dict[str, np.ndarray]:
    return dict(named_params(model))


def model_from_arrays(config: ModelConfig, arrays: Dict[str, np.ndarray]) -> Model:
    """Rebuild a model from named arrays (as stored in a checkpoint)."""
    model = init_model(config, Rng(0))
    expected = named_params(model)
    if set(arrays) != {name for name, _ in expected}:
        missing = {name for name, _ in expected} - set(arrays)
        extra = set(arrays) - {name for name, _ in expected}
        raise ShapeError(f"parameter names do not match config "
                         f"(missing {sorted(missing)}, unexpected {sorted(extra)})")
    for name, arr in expected:
        stored = arrays[name]
        if stored.shape != arr.shape:
            raise ShapeError(f"parameter {name} has shape {stored.shape}, "
                             f"expected {arr.shape}")
        arr[...] = stored
    return model


@dataclass
class ModelCache:
    encode_caches: list
    keep_masks: list
    head_cache: tuple
    train_mode: bool


def model_forward(model: Model, views: Sequence[SequenceBatch],
                  train_mode: bool = False, rng: Optional[Rng] = None):
    """Forward pass over one padded batch.

    Args:
        views: one SequenceBatch per view, in config order.
        train_mode: enables dropout (requires rng).

    Returns:
        (y, cache): raw head outputs (n, num_classes) and the cache for
        :func:`model_backward`.
    """
    cfg = model.config
    if len(views) != len(cfg.view_names):
        raise ShapeError(f"model has {len(cfg.view_names)} views, got {len(views)}")
    drop_cfg = DropoutConfig(fraction=cfg.dropout_fraction, train_mode=train_mode)
    hs = []
    encode_caches = []
    keep_masks = []
    for i, batch in enumerate(views):
        h, ec = encode_sequence(model.encoders[i], batch, cfg.encoder_config(i))
        h, keep = dropout(h, drop_cfg, rng)
        hs.append(h)
        encode_caches.append(ec)
        keep_masks.append(keep)
    y, head_cache = head_forward(model.head, hs)
    return y, ModelCache(encode_caches=encode_caches, keep_masks=keep_masks,
                         head_cache=head_cache, train_mode=train_mode)


def model_backward(model: Model, cache: ModelCache,
                   grad_y: np.ndarray) -> Dict[str, np.ndarray]:
    """Backward pass; returns gradients keyed exactly like named_params."""
    cfg = model.config
    head_grads, d_views = head_backward(model.head, cache.head_cache, grad_y)
    grads: Dict[str, np.ndarray] = {}
    for i, name in enumerate(cfg.view_names):
        dh = dropout_backward(d_views[i], cache.keep_masks[i],
                              cfg.dropout_fraction)
        enc_grads, _ = encode_sequence_backward(model.encoders[i],
                                                cache.encode_caches[i], dh)
        for suffix, arr in enc_grads.arrays():
            grads[f"{name}.{suffix}"] = arr
    for suffix, arr in head_grads.arrays():
        grads[f"head.{suffix}"] = arr
    return grads


def count_model_params(model: Model) -> int:
    return int(sum(arr.size for _, arr in named_params(model)))
