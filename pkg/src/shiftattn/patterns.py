"""Attention patterns: shifted grouped attention, its variants, and rivals.

Two independent routes exist for every pattern:

* an execution route (``run_attention`` / ``s2_attention``) that actually
  rolls, regroups, and attends group-by-group, and
* an oracle route (``build_equivalent_mask`` + ``masked_full_attention``)
  that renders the pattern as an explicit allowed-pairs matrix over full
  attention.

Tests pin the two routes against each other; keep them independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigurationError, ContractError, DimensionError
from .numcore import Tensor

PATTERNS = ("full", "short", "s2", "dilated", "block_sparse", "stride_sparse")
VARIANTS = ("baseline", "v1", "v2", "v3")
SWAP_MODES = ("across_heads", "across_layers", "only_p1", "only_p2")

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class AttentionSpec:
    """Which attention pattern to run and its geometry knobs.

    Only the fields relevant to ``pattern`` are consulted: ``group_size``
    for grouped patterns (and as the reach limit of dilated heads),
    ``variant``/``swap_mode`` for the shifted pattern, ``dilate_rates``,
    ``n_blocks``, ``local_size``/``stride`` for the competitors.
    """

    pattern: str = "full"
    group_size: int | None = None
    variant: str = "baseline"
    swap_mode: str = "across_heads"
    dilate_rates: tuple[int, ...] | None = None
    n_blocks: int = 4
    local_size: int | None = None
    stride: int | None = None

    def validate(self, n: int, h: int) -> None:
        if self.pattern not in PATTERNS:
            raise ConfigurationError(f"unknown attention pattern {self.pattern!r}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.swap_mode not in SWAP_MODES:
            raise ConfigurationError(f"unknown swap mode {self.swap_mode!r}")
        if self.pattern in ("short", "s2"):
            g = self.group_size
            if g is None or g < 2 or g % 2 != 0:
                raise ConfigurationError(
                    f"group_size must be an even integer >= 2, got {g}")
            if n % g != 0:
                raise ConfigurationError(
                    f"sequence length {n} not divisible by group size {g}")
        if self.pattern == "s2" and self.swap_mode == "across_heads" and h % 2 != 0:
            raise ConfigurationError(
                f"shifting across heads needs an even head count, got {h}")
        if self.pattern == "dilated":
            rates = self.dilate_rates or _default_dilate_rates(h)
            if len(rates) != h:
                raise ConfigurationError(
                    f"need one dilate rate per head: {len(rates)} rates, {h} heads")
            if any(r < 1 for r in rates):
                raise ConfigurationError("dilate rates must be >= 1")
        if self.pattern == "block_sparse":
            if self.n_blocks < 1 or n % self.n_blocks != 0:
                raise ConfigurationError(
                    f"n_blocks={self.n_blocks} must divide sequence length {n}")
        if self.pattern == "stride_sparse":
            stride = self.stride
            if stride is None:
                root = int(round(np.sqrt(n)))
                if root * root != n:
                    raise ConfigurationError(
                        f"default stride needs a perfect-square length, got {n}")


@dataclass
class PatternMask:
    """Per-head N x N boolean allowed-pairs matrices (query attends key)."""

    allowed: np.ndarray  # (H, N, N) bool

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if self.allowed.ndim != 3 or self.allowed.shape[1] != self.allowed.shape[2]:
            raise DimensionError(
                f"PatternMask expects (H, N, N), got {self.allowed.shape}")

    @property
    def n_heads(self) -> int:
        return self.allowed.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.allowed.shape[1]


def _default_dilate_rates(h: int) -> tuple[int, ...]:
    # Rates interpolate evenly from 1 to 2 across heads: first half local,
    # second half every-other-token.
    return tuple(1 if i < h - h // 2 else 2 for i in range(h))


# ---------------------------------------------------------------------------
# layouts: every grouped pattern is (token order, group sizes, causal order)


def _layout_p1(n: int, g: int):
    return np.arange(n), [g] * (n // g)


def _layout_p2(n: int, g: int, variant: str):
    half = g // 2
    if variant == "baseline":
        return np.roll(np.arange(n), -half), [g] * (n // g)
    if variant == "v1":
        # Shift in the opposite direction; the wrap group becomes the first.
        return np.roll(np.arange(n), half), [g] * (n // g)
    if variant == "v2":
        # Same roll as baseline, but the wrap group is split into two
        # isolated half-groups so the trailing tokens never feed the front.
        sizes = [g] * (n // g - 1) + [half, half]
        return np.roll(np.arange(n), -half), sizes
    if variant == "v3":
        # Swap the last half-group with the front tokens; no roll.
        order = np.arange(n)
        order[:half], order[n - half:] = (
            order[n - half:].copy(), order[:half].copy())
        return order, [g] * (n // g)
    raise ConfigurationError(f"unknown variant {variant!r}")


def _head_layouts(spec: AttentionSpec, n: int, h: int, layer_index: int = 0):
    """Return [(head_start, head_count, order, group_sizes), ...]."""
    if spec.pattern == "full":
        return [(0, h, np.arange(n), [n])]
    g = spec.group_size
    if spec.pattern == "short":
        order, sizes = _layout_p1(n, g)
        return [(0, h, order, sizes)]
    if spec.pattern != "s2":
        raise ConfigurationError(
            f"no grouped layout for pattern {spec.pattern!r}")
    p1 = _layout_p1(n, g)
    p2 = _layout_p2(n, g, spec.variant)
    if spec.swap_mode == "across_heads":
        return [(0, h // 2, *p1), (h // 2, h - h // 2, *p2)]
    if spec.swap_mode == "only_p1":
        return [(0, h, *p1)]
    if spec.swap_mode == "only_p2":
        return [(0, h, *p2)]
    if spec.swap_mode == "across_layers":
        chosen = p1 if layer_index % 2 == 0 else p2
        return [(0, h, *chosen)]
    raise ConfigurationError(f"unknown swap mode {spec.swap_mode!r}")


def spec_for_layer(spec: AttentionSpec, layer_index: int) -> AttentionSpec:
    """Resolve the across-layers swap mode to a concrete per-layer spec."""
    if spec.pattern == "s2" and spec.swap_mode == "across_layers":
        mode = "only_p1" if layer_index % 2 == 0 else "only_p2"
        return AttentionSpec(
            pattern="s2", group_size=spec.group_size, variant=spec.variant,
            swap_mode=mode)
    return spec


# ---------------------------------------------------------------------------
# shift / unshift (the literal two-line procedure)


def shift_halves(qkv: Tensor, group_size: int) -> Tensor:
    """Roll the last half of the heads back by half a group, then fold
    groups into the batch axis.

    qkv: (B, N, 3, H, D) -> (B*N/G, G, 3, H, D).
    """
    b, n, three, h, d = _check_qkv_shape(qkv)
    g = group_size
    if n % g != 0:
        raise ConfigurationError(f"sequence length {n} not divisible by G={g}")
    if h % 2 != 0:
        raise ConfigurationError(f"head count must be even, got {h}")
    keep = nc.narrow(qkv, 3, 0, h // 2)
    shifted = nc.roll(nc.narrow(qkv, 3, h // 2, h - h // 2), -(g // 2), axis=1)
    merged = nc.concat([keep, shifted], axis=3)
    return nc.reshape(merged, (b * n // g, g, 3, h, d))


def unshift_halves(out: Tensor, group_size: int) -> Tensor:
    """Inverse of the head-half roll: (B, N, H, D) -> (B, N, H, D)."""
    if len(out.shape) != 4:
        raise DimensionError(f"expected (B, N, H, D), got {out.shape}")
    b, n, h, d = out.shape
    g = group_size
    if n % g != 0:
        raise ConfigurationError(f"sequence length {n} not divisible by G={g}")
    if h % 2 != 0:
        raise ConfigurationError(f"head count must be even, got {h}")
    keep = nc.narrow(out, 2, 0, h // 2)
    rolled = nc.roll(nc.narrow(out, 2, h // 2, h - h // 2), g // 2, axis=1)
    return nc.concat([keep, rolled], axis=2)


def _check_qkv_shape(qkv: Tensor):
    if len(qkv.shape) != 5 or qkv.shape[2] != 3:
        raise DimensionError(f"expected qkv of shape (B, N, 3, H, D), got {qkv.shape}")
    return qkv.shape


# ---------------------------------------------------------------------------
# execution


def _causal_bias(g: int, dtype) -> np.ndarray:
    bias = np.zeros((g, g), dtype=dtype)
    bias[np.triu_indices(g, k=1)] = _NEG_INF
    return bias


def _attend_block(q: Tensor, k: Tensor, v: Tensor, bias: np.ndarray) -> Tensor:
    """Scaled dot-product attention with an additive bias.

    q, k, v: (B, H, T, D); bias broadcastable to (B, H, T, T).
    """
    d = q.shape[-1]
    scores = nc.scale(nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    scores = nc.add(scores, Tensor(np.broadcast_to(bias, scores.shape)))
    return nc.matmul(nc.softmax_lastdim(scores), v)


def _grouped_causal(q: Tensor, k: Tensor, v: Tensor, order, group_sizes) -> Tensor:
    """Causal attention within groups of tokens taken in ``order``.

    q, k, v: (B, N, Hs, D) -> output of the same shape in the original
    token order.
    """
    n = q.shape[1]
    identity = np.array_equal(order, np.arange(n))
    if not identity:
        q = nc.take(q, order, axis=1)
        k = nc.take(k, order, axis=1)
        v = nc.take(v, order, axis=1)
    outs = []
    pos = 0
    for gs in group_sizes:
        bias = _causal_bias(gs, q.dtype)
        qg = nc.transpose(nc.narrow(q, 1, pos, gs), (0, 2, 1, 3))
        kg = nc.transpose(nc.narrow(k, 1, pos, gs), (0, 2, 1, 3))
        vg = nc.transpose(nc.narrow(v, 1, pos, gs), (0, 2, 1, 3))
        og = _attend_block(qg, kg, vg, bias)
        outs.append(nc.transpose(og, (0, 2, 1, 3)))
        pos += gs
    out = outs[0] if len(outs) == 1 else nc.concat(outs, axis=1)
    if not identity:
        out = nc.take(out, np.argsort(order), axis=1)
    return out


def run_attention(q: Tensor, k: Tensor, v: Tensor, spec: AttentionSpec,
                  layer_index: int = 0) -> Tensor:
    """Execute ``spec`` on projected q, k, v of shape (B, N, H, D)."""
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(
            f"q, k, v shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    if len(q.shape) != 4:
        raise DimensionError(f"expected (B, N, H, D), got {q.shape}")
    _, n, h, _ = q.shape
    spec.validate(n, h)
    if spec.pattern in ("dilated", "block_sparse", "stride_sparse"):
        mask = build_equivalent_mask(spec, n, h)
        return masked_full_attention(q, k, v, mask)
    outs = []
    for start, count, order, sizes in _head_layouts(spec, n, h, layer_index):
        qs = nc.narrow(q, 2, start, count)
        ks = nc.narrow(k, 2, start, count)
        vs = nc.narrow(v, 2, start, count)
        outs.append(_grouped_causal(qs, ks, vs, order, sizes))
    return outs[0] if len(outs) == 1 else nc.concat(outs, axis=2)


def s2_attention(qkv: Tensor, spec: AttentionSpec, layer_index: int = 0) -> Tensor:
    """Grouped attention on stacked qkv (B, N, 3, H, D) -> (B, N, H, D).

    The shifted baseline goes through the literal roll / fold-to-batch /
    roll-back procedure; every other configuration goes through the
    general per-group executor.
    """
    b, n, three, h, d = _check_qkv_shape(qkv)
    if spec.pattern not in ("s2", "short", "full"):
        raise ConfigurationError(
            f"s2_attention only executes grouped patterns, got {spec.pattern!r}")
    spec.validate(n, h)
    if (spec.pattern == "s2" and spec.variant == "baseline"
            and spec.swap_mode == "across_heads"):
        g = spec.group_size
        folded = shift_halves(qkv, g)  # (B*N/G, G, 3, H, D)
        q = nc.reshape(nc.narrow(folded, 2, 0, 1), (b * n // g, g, h, d))
        k = nc.reshape(nc.narrow(folded, 2, 1, 1), (b * n // g, g, h, d))
        v = nc.reshape(nc.narrow(folded, 2, 2, 1), (b * n // g, g, h, d))
        qt = nc.transpose(q, (0, 2, 1, 3))
        kt = nc.transpose(k, (0, 2, 1, 3))
        vt = nc.transpose(v, (0, 2, 1, 3))
        og = _attend_block(qt, kt, vt, _causal_bias(g, q.dtype))
        out = nc.reshape(nc.transpose(og, (0, 2, 1, 3)), (b, n, h, d))
        return unshift_halves(out, g)
    q = nc.reshape(nc.narrow(qkv, 2, 0, 1), (b, n, h, d))
    k = nc.reshape(nc.narrow(qkv, 2, 1, 1), (b, n, h, d))
    v = nc.reshape(nc.narrow(qkv, 2, 2, 1), (b, n, h, d))
    return run_attention(q, k, v, spec, layer_index)


# ---------------------------------------------------------------------------
# oracle: explicit masks


def _mask_from_layout(order, group_sizes, n: int) -> np.ndarray:
    mask = np.zeros((n, n), dtype=bool)
    pos = 0
    for gs in group_sizes:
        slot_tokens = order[pos:pos + gs]
        for a in range(gs):
            mask[slot_tokens[a], slot_tokens[:a + 1]] = True
        pos += gs
    return mask


def _dilated_mask(n: int, rate: int, reach: int) -> np.ndarray:
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    diff = i - j
    return (diff >= 0) & (diff % rate == 0) & (diff < reach)


def _block_sparse_mask(n: int, n_blocks: int) -> np.ndarray:
    # Causal block diagonal plus the sub-diagonal blocks that the acausal
    # super-diagonal blocks wrap down to.
    bs = n // n_blocks
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    bi, bj = i // bs, j // bs
    return ((bi == bj) & (j <= i)) | (bj == bi - 1)


def _stride_sparse_mask(n: int, local: int, stride: int) -> np.ndarray:
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    causal = j <= i
    return causal & ((i - j < local) | ((j + 1) % stride == 0))


def build_equivalent_mask(spec: AttentionSpec, n: int, h: int,
                          layer_index: int = 0) -> PatternMask:
    """Render ``spec`` as per-head allowed-pairs matrices over full attention."""
    spec.validate(n, h)
    if spec.pattern in ("full", "short", "s2"):
        allowed = np.zeros((h, n, n), dtype=bool)
        for start, count, order, sizes in _head_layouts(spec, n, h, layer_index):
            allowed[start:start + count] = _mask_from_layout(order, sizes, n)
        return PatternMask(allowed)
    if spec.pattern == "dilated":
        rates = spec.dilate_rates or _default_dilate_rates(h)
        g = spec.group_size
        masks = [
            _dilated_mask(n, r, g * r if g is not None else n) for r in rates
        ]
        return PatternMask(np.stack(masks))
    if spec.pattern == "block_sparse":
        return PatternMask(np.broadcast_to(
            _block_sparse_mask(n, spec.n_blocks), (h, n, n)).copy())
    if spec.pattern == "stride_sparse":
        local = spec.local_size if spec.local_size is not None else n // 4
        stride = spec.stride if spec.stride is not None else int(round(np.sqrt(n)))
        return PatternMask(np.broadcast_to(
            _stride_sparse_mask(n, local, stride), (h, n, n)).copy())
    raise ConfigurationError(f"unknown attention pattern {spec.pattern!r}")


def competitor_masks(kind: str, n: int, h: int, *, group_size: int | None = None,
                     dilate_rates: tuple[int, ...] | None = None,
                     n_blocks: int = 4, local_size: int | None = None,
                     stride: int | None = None) -> PatternMask:
    """Masks for the dilated / block-sparse / stride-sparse rivals."""
    if kind not in ("dilated", "block_sparse", "stride_sparse"):
        raise ConfigurationError(f"unknown competitor pattern {kind!r}")
    spec = AttentionSpec(pattern=kind, group_size=group_size,
                         dilate_rates=dilate_rates, n_blocks=n_blocks,
                         local_size=local_size, stride=stride)
    return build_equivalent_mask(spec, n, h)


def leakage_pairs(n: int, group_size: int) -> set[tuple[int, int]]:
    """(query, key) pairs where the shifted baseline sees ahead of the
    causal order: the front half-group attending the trailing half-group."""
    half = group_size // 2
    return {(i, j) for i in range(half) for j in range(n - half, n)}


def masked_full_attention(q: Tensor, k: Tensor, v: Tensor,
                          mask: PatternMask) -> Tensor:
    """Reference attention: full N x N scores, -inf where disallowed.

    q, k, v: (B, N, H, D); scores scaled by 1/sqrt(D).
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(
            f"q, k, v shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    b, n, h, d = q.shape
    if mask.n_tokens != n or mask.n_heads != h:
        raise DimensionError(
            f"mask {mask.allowed.shape} does not match q {q.shape}")
    if not mask.allowed.any(axis=-1).all():
        raise ContractError("mask has a row with no allowed keys")
    bias = np.where(mask.allowed, 0.0, _NEG_INF).astype(q.dtype)
    qt = nc.transpose(q, (0, 2, 1, 3))
    kt = nc.transpose(k, (0, 2, 1, 3))
    vt = nc.transpose(v, (0, 2, 1, 3))
    out = _attend_block(qt, kt, vt, bias)
    return nc.transpose(out, (0, 2, 1, 3))


# ---------------------------------------------------------------------------
# mask dumping


def mask_to_csv(mask_2d: np.ndarray, path) -> None:
    np.savetxt(path, mask_2d.astype(np.uint8), fmt="%d", delimiter=",")


def mask_to_pgm(mask_2d: np.ndarray, path) -> None:
    """Binary PGM (P5, maxval 255): 0 = blocked, 255 = allowed."""
    n_rows, n_cols = mask_2d.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{n_cols} {n_rows}\n255\n".encode("ascii"))
        f.write((mask_2d.astype(np.uint8) * 255).tobytes())


def dump_mask(mask: PatternMask, out_dir, stem: str) -> list[str]:
    """Write one CSV and one PGM per head; returns the paths written."""
    import os

    os.makedirs(str(out_dir), exist_ok=True)
    paths = []
    for head in range(mask.n_heads):
        base = os.path.join(str(out_dir), f"{stem}_head{head}")
        mask_to_csv(mask.allowed[head], base + ".csv")
        mask_to_pgm(mask.allowed[head], base + ".pgm")
        paths.extend([base + ".csv", base + ".pgm"])
    return paths
