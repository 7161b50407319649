"""Decoder-only transformer in the Llama lineage.

Block structure: RMS norm -> attention with rotary positions -> residual;
RMS norm -> gated (SiLU) feed-forward -> residual. Final norm, untied
output head. The attention pattern is a call-time argument dispatched to
:mod:`shiftattn.patterns`; inference defaults to full attention, so a
model trained under any sparse pattern runs dense without structural
change.

All linear layers use the row-vector convention ``y = x @ W`` with W
stored as (in, out).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint as ckpt
from . import numcore as nc
from . import patterns
from .errors import CapacityError, ConfigurationError
from .numcore import Tensor
from .patterns import AttentionSpec

FULL_ATTENTION = AttentionSpec(pattern="full")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int
    n_layers: int
    n_heads: int
    d_ff: int
    vocab_size: int
    max_positions: int
    rope_base: float = 10000.0
    pi_scale: float = 1.0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.head_dim % 2 != 0:
            raise ConfigurationError(
                f"head_dim={self.head_dim} must be even for rotary positions")
        if self.pi_scale < 1.0:
            raise ConfigurationError(f"pi_scale must be >= 1, got {self.pi_scale}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def with_pi_scale(self, pi_scale: float) -> "ModelConfig":
        fields = asdict(self)
        fields["pi_scale"] = pi_scale
        return ModelConfig(**fields)


# Geometry that reproduces the published 7B FLOPs and parameter-fraction
# numbers (derived by inverting the per-category FLOPs formulas).
LLAMA2_7B = ModelConfig(
    d_model=4096, n_layers=32, n_heads=32, d_ff=11008,
    vocab_size=32000, max_positions=4096)


def rope_apply(x: Tensor, positions, base: float, pi_scale: float = 1.0) -> Tensor:
    """Rotate consecutive pairs of the last axis by position-dependent angles.

    x: (..., N, D) with D even; pair i turns by base**(-2i/D) * t/pi_scale.
    """
    d = x.shape[-1]
    if d % 2 != 0:
        raise ConfigurationError(f"rotary dimension must be even, got {d}")
    positions = np.asarray(positions, dtype=np.float64)
    theta = float(base) ** (-2.0 * np.arange(d // 2) / d)
    angles = np.repeat(positions[:, None] / float(pi_scale) * theta[None, :], 2, axis=1)
    cos = np.cos(angles).astype(x.dtype)
    sin = np.sin(angles).astype(x.dtype)
    # Pre-broadcast the (N, D) tables to x's full shape so elementwise ops
    # stay shape-exact; positions index the second-to-last axis.
    cos_full = np.broadcast_to(cos, x.shape)
    sin_full = np.broadcast_to(sin, x.shape)
    return nc.add(nc.mul(x, Tensor(cos_full)),
                  nc.mul(nc.rotate_pairs(x), Tensor(sin_full)))


def count_parameters(cfg: ModelConfig) -> dict:
    """Exact per-category parameter counts and fractions of the total."""
    counts = {
        "embedding": cfg.vocab_size * cfg.d_model,
        "norms": (2 * cfg.n_layers + 1) * cfg.d_model,
        "attention_proj": 4 * cfg.n_layers * cfg.d_model * cfg.d_model,
        "ffn": 3 * cfg.n_layers * cfg.d_model * cfg.d_ff,
        "head": cfg.d_model * cfg.vocab_size,
    }
    total = sum(counts.values())
    return {
        "counts": counts,
        "total": total,
        "fractions": {k: v / total for k, v in counts.items()},
    }


class TransformerModel:
    """Parameter container plus autodiff forward pass."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.lora = None  # set by adapters.attach
        rng = np.random.default_rng(seed)
        d, dff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
        std = 0.02

        def w(*shape):
            return Tensor(rng.normal(0.0, std, shape).astype(self.dtype),
                          requires_grad=True)

        def ones(n):
            return Tensor(np.ones(n, dtype=self.dtype), requires_grad=True)

        self.params: dict[str, Tensor] = {}
        self.params["embed"] = w(v, d)
        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            self.params[p + "attn_norm"] = ones(d)
            for t in ("wq", "wk", "wv", "wo"):
                self.params[p + t] = w(d, d)
            self.params[p + "ffn_norm"] = ones(d)
            self.params[p + "w_gate"] = w(d, dff)
            self.params[p + "w_up"] = w(d, dff)
            self.params[p + "w_down"] = w(dff, d)
        self.params["final_norm"] = ones(d)
        self.params["head"] = w(d, v)

    # -- parameter access ---------------------------------------------------

    def parameters(self):
        return list(self.params.items())

    def trainable_parameters(self):
        named = [(n, p) for n, p in self.params.items() if p.requires_grad]
        if self.lora is not None:
            named.extend(self.lora.trainable_parameters())
        return named

    def zero_grad(self):
        for _, p in self.trainable_parameters():
            p.zero_grad()

    # -- forward ------------------------------------------------------------

    def _proj(self, x: Tensor, layer: int, target: str) -> Tensor:
        w = self.params[f"layers.{layer}.{target}"]
        if self.lora is not None:
            adapter = self.lora.adapters.get((layer, target))
            if adapter is not None:
                from .adapters import adapted_forward
                return adapted_forward(x, w, adapter)
        return nc.matmul(x, w)

    def forward(self, tokens, spec: AttentionSpec = FULL_ATTENTION) -> Tensor:
        """tokens: int array (B, N) -> next-token logits (B, N, vocab)."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        b, n = tokens.shape
        cfg = self.cfg
        if n > cfg.max_positions * cfg.pi_scale:
            raise CapacityError(
                f"sequence length {n} exceeds capacity "
                f"{cfg.max_positions} * pi_scale {cfg.pi_scale}")
        h = nc.embedding_lookup(self.params["embed"], tokens)
        pos = np.arange(n)
        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            a = nc.rms_norm(h, self.params[p + "attn_norm"])
            q = self._heads(self._proj(a, i, "wq"), b, n)
            k = self._heads(self._proj(a, i, "wk"), b, n)
            v = self._heads(self._proj(a, i, "wv"), b, n)
            q = self._rope_heads(q, pos)
            k = self._rope_heads(k, pos)
            attn = patterns.run_attention(q, k, v, spec, layer_index=i)
            attn = nc.reshape(attn, (b, n, cfg.d_model))
            h = nc.add(h, self._proj(attn, i, "wo"))
            f = nc.rms_norm(h, self.params[p + "ffn_norm"])
            gated = nc.mul(nc.silu(nc.matmul(f, self.params[p + "w_gate"])),
                           nc.matmul(f, self.params[p + "w_up"]))
            h = nc.add(h, nc.matmul(gated, self.params[p + "w_down"]))
        h = nc.rms_norm(h, self.params["final_norm"])
        return nc.matmul(h, self.params["head"])

    def _heads(self, x: Tensor, b: int, n: int) -> Tensor:
        return nc.reshape(x, (b, n, self.cfg.n_heads, self.cfg.head_dim))

    def _rope_heads(self, x: Tensor, pos) -> Tensor:
        # (B, N, H, D): rotate per token position, shared across heads.
        xt = nc.transpose(x, (0, 2, 1, 3))
        xt = rope_apply(xt, pos, self.cfg.rope_base, self.cfg.pi_scale)
        return nc.transpose(xt, (0, 2, 1, 3))

    # -- checkpointing ------------------------------------------------------

    def save(self, path) -> None:
        named = [(n, p.data) for n, p in self.params.items()]
        ckpt.save_checkpoint(path, asdict(self.cfg), named)

    @classmethod
    def load(cls, path) -> "TransformerModel":
        config, arrays = ckpt.load_checkpoint(path)
        cfg = ModelConfig(
            d_model=int(config["d_model"]), n_layers=int(config["n_layers"]),
            n_heads=int(config["n_heads"]), d_ff=int(config["d_ff"]),
            vocab_size=int(config["vocab_size"]),
            max_positions=int(config["max_positions"]),
            rope_base=float(config["rope_base"]),
            pi_scale=float(config["pi_scale"]))
        dtype = arrays[next(iter(arrays))].dtype if arrays else np.float32
        model = cls(cfg, seed=0, dtype=dtype)
        for name, param in model.params.items():
            if name not in arrays:
                raise ConfigurationError(f"checkpoint missing parameter {name!r}")
            if arrays[name].shape != param.shape:
                raise ConfigurationError(
                    f"checkpoint shape {arrays[name].shape} for {name!r} does not "
                    f"match model shape {param.shape}")
            param.data = arrays[name].astype(model.dtype)
        return model
