"""Transformer forward pass: rotary positions, causality, parameter
accounting, capacity limits, checkpoint round trips, and the end-to-end
gradient check against finite differences."""

import numpy as np
import pytest

from shiftattn import numcore as nc
from shiftattn.errors import CapacityError, ConfigurationError
from shiftattn.model import (LLAMA2_7B, ModelConfig, TransformerModel,
                             count_parameters, rope_apply)
from shiftattn.patterns import AttentionSpec

from conftest import fd_rel_err, perturbed_model


# ---------------------------------------------------------------------------
# rotary positions


def test_rope_position_zero_is_identity():
    rng = np.random.default_rng(0)
    x = nc.tensor(rng.standard_normal((1, 4)))
    y = rope_apply(x, np.array([0]), base=10000.0)
    np.testing.assert_allclose(y.data, x.data, atol=1e-15)


def test_rope_single_pair_by_hand():
    # D = 2: pair angle is just the position; (1, 0) at t = pi/2 -> (0, 1).
    x = nc.tensor(np.array([[1.0, 0.0]]))
    y = rope_apply(x, np.array([np.pi / 2]), base=10000.0)
    np.testing.assert_allclose(y.data, [[0.0, 1.0]], atol=1e-12)


def test_rope_preserves_norm():
    rng = np.random.default_rng(1)
    x = nc.tensor(rng.standard_normal((8, 6)))
    y = rope_apply(x, np.arange(8), base=10000.0)
    np.testing.assert_allclose((y.data ** 2).sum(axis=-1),
                               (x.data ** 2).sum(axis=-1), rtol=1e-12)


def test_rope_dot_products_depend_only_on_relative_position():
    # <R(t+k) q, R(s+k) v> == <R(t) q, R(s) v> for any common offset k.
    rng = np.random.default_rng(2)
    q = rng.standard_normal(8)
    v = rng.standard_normal(8)

    def rotated_dot(t, s):
        qr = rope_apply(nc.tensor(q[None, :]), np.array([t]), 10000.0)
        vr = rope_apply(nc.tensor(v[None, :]), np.array([s]), 10000.0)
        return float((qr.data * vr.data).sum())

    base = rotated_dot(3, 7)
    for k in (1, 10, 100):
        assert abs(rotated_dot(3 + k, 7 + k) - base) < 1e-10


def test_rope_interpolation_halves_effective_position():
    rng = np.random.default_rng(3)
    x = nc.tensor(rng.standard_normal((1, 8)))
    scaled = rope_apply(x, np.array([10]), 10000.0, pi_scale=2.0)
    plain = rope_apply(x, np.array([5]), 10000.0, pi_scale=1.0)
    np.testing.assert_allclose(scaled.data, plain.data, atol=1e-12)


# ---------------------------------------------------------------------------
# parameter accounting


def test_7b_parameter_fractions():
    report = count_parameters(LLAMA2_7B)
    assert report["counts"]["embedding"] == 32000 * 4096
    assert report["counts"]["norms"] == (2 * 32 + 1) * 4096
    assert report["fractions"]["embedding"] < 0.02
    assert report["fractions"]["norms"] <= 0.00004  # i.e. <= 0.004%
    # sanity: total in the right ballpark for the 7B geometry
    assert 6.5e9 < report["total"] < 7.0e9


def test_count_matches_instantiated_model(tiny_config):
    model = TransformerModel(tiny_config)
    want = count_parameters(tiny_config)["total"]
    got = sum(p.data.size for _, p in model.parameters())
    assert got == want


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(d_model=10, n_layers=1, n_heads=3, d_ff=16,
                    vocab_size=8, max_positions=8)
    with pytest.raises(ConfigurationError):
        ModelConfig(d_model=6, n_layers=1, n_heads=2, d_ff=16,
                    vocab_size=8, max_positions=8)  # odd head_dim
    with pytest.raises(ConfigurationError):
        ModelConfig(d_model=8, n_layers=1, n_heads=2, d_ff=16,
                    vocab_size=8, max_positions=8, pi_scale=0.5)


# ---------------------------------------------------------------------------
# forward-pass contracts


def test_forward_shape_and_determinism(tiny_config):
    model = TransformerModel(tiny_config, seed=3)
    tokens = np.random.default_rng(0).integers(0, 64, size=(2, 16))
    a = model.forward(tokens)
    b = model.forward(tokens)
    assert a.shape == (2, 16, 64)
    np.testing.assert_array_equal(a.data, b.data)


def test_causality_full_attention(tiny_config):
    # Changing token t must not change logits at positions < t.
    model = TransformerModel(tiny_config, seed=1)
    rng = np.random.default_rng(4)
    tokens = rng.integers(0, 64, size=(1, 12))
    base = model.forward(tokens).data.copy()
    for t in (4, 8, 11):
        mutated = tokens.copy()
        mutated[0, t] = (mutated[0, t] + 1) % 64
        out = model.forward(mutated).data
        np.testing.assert_array_equal(out[0, :t], base[0, :t])
        assert np.abs(out[0, t:] - base[0, t:]).max() > 0


def test_causality_grouped_attention(tiny_config):
    # Group-local attention without shifting is strictly causal too.
    model = TransformerModel(tiny_config, seed=1)
    spec = AttentionSpec(pattern="short", group_size=8)
    rng = np.random.default_rng(5)
    tokens = rng.integers(0, 64, size=(1, 16))
    base = model.forward(tokens, spec).data.copy()
    mutated = tokens.copy()
    mutated[0, 9] = (mutated[0, 9] + 1) % 64
    out = model.forward(mutated, spec).data
    np.testing.assert_array_equal(out[0, :9], base[0, :9])


def test_capacity_limit_and_pi_rescue(tiny_config):
    model = TransformerModel(tiny_config)
    tokens = np.zeros((1, 65), dtype=np.int64)
    with pytest.raises(CapacityError):
        model.forward(tokens)
    stretched = TransformerModel(tiny_config.with_pi_scale(2.0))
    out = stretched.forward(np.zeros((1, 128), dtype=np.int64))
    assert out.shape == (1, 128, 64)


# ---------------------------------------------------------------------------
# end-to-end gradients vs finite differences


@pytest.mark.parametrize("spec", [
    AttentionSpec(pattern="full"),
    AttentionSpec(pattern="short", group_size=8),
    AttentionSpec(pattern="s2", group_size=8),
    AttentionSpec(pattern="s2", group_size=8, variant="v2"),
    AttentionSpec(pattern="s2", group_size=8, variant="v3",
                  swap_mode="only_p2"),
], ids=["full", "short", "s2", "s2_v2", "s2_v3_p2"])
def test_model_gradients_match_fd(tiny_config, spec):
    model = perturbed_model(tiny_config, seed=2)
    rng = np.random.default_rng(7)
    batch = rng.integers(0, 64, size=(2, 17))
    inputs, targets = batch[:, :-1], batch[:, 1:]
    tensors = [p for _, p in model.parameters()]

    def f():
        return nc.cross_entropy(model.forward(inputs, spec), targets)

    assert fd_rel_err(f, tensors, seed=9) < 1e-4


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tiny_config, tmp_path):
    model = TransformerModel(tiny_config, seed=5)
    path = tmp_path / "model.ckpt"
    model.save(path)
    loaded = TransformerModel.load(path)
    assert loaded.cfg == tiny_config
    for (na, pa), (nb, pb) in zip(model.parameters(), loaded.parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)
    tokens = np.random.default_rng(1).integers(0, 64, size=(1, 8))
    np.testing.assert_array_equal(model.forward(tokens).data,
                                  loaded.forward(tokens).data)


def test_checkpoint_rejects_wrong_geometry(tiny_config, tmp_path):
    model = TransformerModel(tiny_config)
    path = tmp_path / "model.ckpt"
    model.save(path)
    from shiftattn import checkpoint as ckpt
    config, arrays = ckpt.load_checkpoint(path)
    config["d_model"] = "32"
    ckpt.save_checkpoint(path, config, list(arrays.items()))
    with pytest.raises(ConfigurationError):
        TransformerModel.load(path)
