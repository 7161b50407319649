"""Low-rank adapters on attention projections, plus the improved recipe
that additionally unfreezes embedding and normalization weights.

Convention matches the model's ``y = x @ W`` layout: a base weight
W (d x k) is updated to W + (alpha/r) * B @ A with B (d x r) and
A (r x k). B starts at zero so a freshly attached adapter changes no
output; A starts Gaussian so gradient reaches B immediately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import numcore as nc
from .errors import ConfigurationError, DimensionError, StateError
from .numcore import Tensor

ALL_TARGETS = ("wq", "wk", "wv", "wo")


@dataclass(frozen=True)
class LoraSpec:
    rank: int = 8
    alpha: float | None = None  # defaults to rank (scale alpha/r == 1)
    targets: tuple[str, ...] = ALL_TARGETS
    train_embedding: bool = False
    train_norm: bool = False

    def validate(self):
        if not self.targets:
            raise ConfigurationError("adapter spec has no target projections")
        unknown = set(self.targets) - set(ALL_TARGETS)
        if unknown:
            raise ConfigurationError(f"unknown adapter targets: {sorted(unknown)}")
        if self.rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")

    @property
    def effective_alpha(self) -> float:
        return float(self.rank if self.alpha is None else self.alpha)


class LoraAdapter:
    """One rank-r update for a single projection matrix."""

    def __init__(self, d: int, k: int, rank: int, alpha: float, target: str,
                 rng: np.random.Generator, dtype=np.float32):
        if rank > min(d, k) // 2:
            raise ConfigurationError(
                f"rank {rank} too large for a {d}x{k} projection "
                f"(must be <= min(d, k) / 2)")
        self.rank = rank
        self.alpha = float(alpha)
        self.target = target
        self.b = Tensor(np.zeros((d, rank), dtype=dtype), requires_grad=True)
        self.a = Tensor(rng.normal(0.0, 0.02, (rank, k)).astype(dtype),
                        requires_grad=True)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        return self.scaling * (self.b.data @ self.a.data)


def adapted_forward(x: Tensor, w: Tensor, adapter: LoraAdapter) -> Tensor:
    """y = x @ (W + (alpha/r) B A), with the low-rank path kept factored."""
    d, k = w.shape
    if adapter.b.shape[0] != d or adapter.a.shape[1] != k:
        raise DimensionError(
            f"adapter ({adapter.b.shape} @ {adapter.a.shape}) does not match "
            f"base weight {w.shape}")
    base = nc.matmul(x, w)
    low = nc.matmul(nc.matmul(x, adapter.b), adapter.a)
    return nc.add(base, nc.scale(low, adapter.scaling))


def merge(w, adapter: LoraAdapter) -> np.ndarray:
    """Return W + (alpha/r) B A as a plain matrix."""
    w = w.data if isinstance(w, Tensor) else np.asarray(w)
    d, k = w.shape
    if adapter.b.shape[0] != d or adapter.a.shape[1] != k:
        raise DimensionError(
            f"adapter ({adapter.b.shape} @ {adapter.a.shape}) does not match "
            f"base weight {w.shape}")
    return w + adapter.delta().astype(w.dtype)


class LoraState:
    """Adapters attached to a model, plus the freeze bookkeeping."""

    def __init__(self, spec: LoraSpec):
        self.spec = spec
        self.adapters: dict[tuple[int, str], LoraAdapter] = {}

    def trainable_parameters(self):
        named = []
        for (layer, target), adapter in self.adapters.items():
            named.append((f"lora.{layer}.{target}.a", adapter.a))
            named.append((f"lora.{layer}.{target}.b", adapter.b))
        return named


def attach(model, spec: LoraSpec, seed: int = 0) -> dict:
    """Freeze the base model and attach trainable adapters per ``spec``.

    Embedding / normalization weights stay trainable iff the spec's flags
    say so. Returns a trainable-parameter report.
    """
    spec.validate()
    if model.lora is not None:
        raise StateError("adapters already attached to this model")
    rng = np.random.default_rng(seed)
    state = LoraState(spec)
    d = model.cfg.d_model
    for name, param in model.params.items():
        is_norm = name.endswith("norm")
        # "embedding" covers both token-embedding matrices: the input
        # lookup table and the output projection onto the vocabulary
        if name in ("embed", "head"):
            param.requires_grad = spec.train_embedding
        elif is_norm:
            param.requires_grad = spec.train_norm
        else:
            param.requires_grad = False
    for layer in range(model.cfg.n_layers):
        for target in spec.targets:
            state.adapters[(layer, target)] = LoraAdapter(
                d, d, spec.rank, spec.effective_alpha, target, rng,
                dtype=model.dtype)
    model.lora = state

    trainable = sum(p.data.size for _, p in model.trainable_parameters())
    total = sum(p.data.size for _, p in model.parameters())
    report = {
        "trainable": trainable,
        "base_total": total,
        "fraction": trainable / total,
        "adapter_params": sum(a.a.data.size + a.b.data.size
                              for a in state.adapters.values()),
        "embedding_params": (model.params["embed"].data.size
                             + model.params["head"].data.size)
        if spec.train_embedding else 0,
        "norm_params": sum(p.data.size for n, p in model.params.items()
                           if n.endswith("norm")) if spec.train_norm else 0,
    }
    return report


def save_adapters(model, path) -> None:
    """Checkpoint only A, B, and any unfrozen embedding/norm weights."""
    if model.lora is None:
        raise StateError("no adapters attached")
    named = [(n, p.data) for n, p in model.trainable_parameters()]
    config = {
        "rank": model.lora.spec.rank,
        "alpha": model.lora.spec.effective_alpha,
        "targets": ",".join(model.lora.spec.targets),
        "train_embedding": model.lora.spec.train_embedding,
        "train_norm": model.lora.spec.train_norm,
    }
    ckpt.save_checkpoint(path, config, named)


def load_adapters(model, path) -> None:
    """Attach adapters recorded at ``path`` onto a fresh base model."""
    config, arrays = ckpt.load_checkpoint(path)
    spec = LoraSpec(
        rank=int(config["rank"]), alpha=float(config["alpha"]),
        targets=tuple(config["targets"].split(",")),
        train_embedding=config["train_embedding"] == "True",
        train_norm=config["train_norm"] == "True")
    attach(model, spec)
    for name, param in model.trainable_parameters():
        if name not in arrays:
            raise ConfigurationError(f"adapter checkpoint missing {name!r}")
        if arrays[name].shape != param.shape:
            raise ConfigurationError(
                f"adapter checkpoint shape {arrays[name].shape} for {name!r} "
                f"does not match {param.shape}")
        param.data = arrays[name].astype(model.dtype)
