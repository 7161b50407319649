"""Shared fixtures: finite-difference oracles and small model builders."""

import numpy as np
import pytest

from shiftattn import numcore as nc
from shiftattn.model import ModelConfig, TransformerModel


def directional_fd(f, tensors, seed=0, h=1e-6):
    """Directional derivative of scalar f() along a random unit direction
    in the given parameter tensors, by central differences in f64.

    Returns (fd_value, autodiff_value) where the autodiff value is
    sum(grad . direction) after a fresh backward pass.
    """
    rng = np.random.default_rng(seed)
    dirs = [rng.standard_normal(t.shape) for t in tensors]
    norm = np.sqrt(sum((d * d).sum() for d in dirs))
    dirs = [d / norm for d in dirs]

    originals = [t.data.copy() for t in tensors]

    def eval_at(eps):
        for t, x0, d in zip(tensors, originals, dirs):
            t.data = x0 + eps * d
        return float(f().data)

    f_plus = eval_at(h)
    f_minus = eval_at(-h)
    for t, x0 in zip(tensors, originals):
        t.data = x0

    for t in tensors:
        t.grad = None
    loss = f()
    nc.backward(loss)
    auto = sum(float((t.grad * d).sum()) for t, d in zip(tensors, dirs))
    return (f_plus - f_minus) / (2.0 * h), auto


def fd_rel_err(f, tensors, seed=0, h=1e-6):
    fd, auto = directional_fd(f, tensors, seed=seed, h=h)
    denom = max(abs(fd), abs(auto), 1e-12)
    return abs(fd - auto) / denom


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=16, n_layers=2, n_heads=2, d_ff=44,
                       vocab_size=64, max_positions=64)


def perturbed_model(cfg, seed=0, dtype=np.float64, scale=0.3):
    """Model at a non-degenerate point: weights ~ N(0, scale), norm gains
    jittered around 1. Gradient magnitudes at the default tiny init are
    too small to compare against finite differences reliably."""
    model = TransformerModel(cfg, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 1)
    for name, p in model.parameters():
        if "norm" in name:
            p.data = (1.0 + 0.1 * rng.standard_normal(p.shape)).astype(dtype)
        else:
            p.data = (scale * rng.standard_normal(p.shape)).astype(dtype)
    return model
