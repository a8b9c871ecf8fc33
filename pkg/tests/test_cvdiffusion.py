import re

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from splatworld.cvdiffusion import (NULL_TOKEN, AxisBlock, BlockMask, ConditionBundle, DiffusionConfig, VideoDiT,
                                    autoregress, block_dropout, control_from_rasters, flow_loss, initial_noise,
                                    inverse_crossview, inverse_spatial, inverse_temporal, make_flow_sample,
                                    oracle_predictor, reshape_crossview, reshape_spatial, reshape_temporal, sample)

grid_dims = st.tuples(*[st.integers(1, 8)] * 4)


def tiny_model(**kw):
    cfg = dict(latent_channels=4, latent_hw=(4, 4), dim=32, units=2, heads=4, max_frames=8)
    cfg.update(kw)
    return VideoDiT(DiffusionConfig(**cfg))


def randomize(model, pattern=".*", std=0.05, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if re.search(pattern, name):
                p.copy_(torch.randn(p.shape, generator=g) * std)
    return model


def make_cond(B, T, V, h=4, w=4, seed=0, n_valid=None):
    g = torch.Generator().manual_seed(seed)
    vm = torch.ones(B, V, dtype=torch.bool)
    if n_valid is not None:
        vm[:, n_valid:] = False
    return ConditionBundle(torch.randint(3, 10, (B, 5), generator=g), torch.rand(B, T, V, 2, h, w, generator=g),
                           torch.zeros(B, T, dtype=torch.bool), vm)


# reshapes

def test_reshape_spatial_example():
    z = torch.randn(2, 3, 4, 2, 2)
    s = reshape_spatial(z)
    assert s.shape == (6, 4, 4)
    assert torch.equal(inverse_spatial(s, z.shape), z)
    assert reshape_spatial(torch.randn(1, 1, 4, 3, 5)).shape == (1, 15, 4)


def test_reshape_temporal_counts():
    assert reshape_temporal(torch.zeros(19, 6, 1, 16, 16)).shape == (1536, 19, 1)
    assert reshape_crossview(torch.zeros(3, 1, 2, 2, 2)).shape == (12, 1, 2)


@given(grid_dims, st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_reshape_index_formulas(dims, seed):
    T, V, h, w = dims
    C = 2
    z = torch.randn(T, V, C, h, w, generator=torch.Generator().manual_seed(seed))
    sp, tp, cv = reshape_spatial(z), reshape_temporal(z), reshape_crossview(z)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        t, v, c, y, x = (int(rng.integers(n)) for n in (T, V, C, h, w))
        val = z[t, v, c, y, x]
        assert sp[t * V + v, y * w + x, c] == val
        assert tp[v * h * w + y * w + x, t, c] == val
        assert cv[t * h * w + y * w + x, v, c] == val
    for fwd, inv in ((reshape_spatial, inverse_spatial), (reshape_temporal, inverse_temporal),
                     (reshape_crossview, inverse_crossview)):
        assert torch.equal(inv(fwd(z), z.shape), z)


def test_reshape_compositions_identity():
    z = torch.randn(3, 2, 4, 2, 3)
    pairs = [(reshape_spatial, inverse_spatial), (reshape_temporal, inverse_temporal),
             (reshape_crossview, inverse_crossview)]
    for order in ([0, 1, 2], [2, 0, 1], [1, 2, 0]):
        out = z
        for i in order:
            out = pairs[i][1](pairs[i][0](out), z.shape)
        assert torch.equal(out, z)


# blocks

@pytest.mark.parametrize("kind", ["spatial", "temporal", "crossview"])
def test_fresh_block_identity(kind):
    blk = AxisBlock(kind, 16, 4)
    x = torch.randn(2, 3, 4, 5, 16)
    assert torch.equal(blk(x, torch.randn(2, 16), torch.ones(2, 4, dtype=torch.bool)), x)


def test_crossview_single_valid_view_ignores_others():
    blk = randomize(AxisBlock("crossview", 16, 4))
    x = torch.randn(1, 2, 3, 4, 16)
    mask = torch.tensor([[True, False, False]])
    c = torch.randn(1, 16)
    y1 = blk(x, c, mask)
    x2 = x.clone()
    x2[:, :, 1:] = torch.randn_like(x2[:, :, 1:]) * 10
    y2 = blk(x2, c, mask)
    torch.testing.assert_close(y1[:, :, 0], y2[:, :, 0], atol=1e-6, rtol=0)


def test_crossview_block_view_permutation():
    blk = randomize(AxisBlock("crossview", 16, 4).double())
    x = torch.randn(2, 2, 4, 3, 16, dtype=torch.float64)
    c = torch.randn(2, 16, dtype=torch.float64)
    mask = torch.tensor([[True, True, False, True], [True, True, True, True]])
    perm = [2, 0, 3, 1]
    torch.testing.assert_close(blk(x[:, :, perm], c, mask[:, perm]), blk(x, c, mask)[:, :, perm],
                               atol=1e-10, rtol=0)


def test_temporal_block_length_limit():
    blk = AxisBlock("temporal", 16, 4, max_len=4)
    with pytest.raises(ValueError):
        blk(torch.randn(1, 5, 1, 2, 16), torch.randn(1, 16))


# model

@pytest.mark.parametrize("T,V,hw", [(1, 1, (4, 4)), (3, 2, (4, 4)), (5, 3, (8, 6))])
def test_forward_shape(T, V, hw):
    model = randomize(tiny_model())
    z = torch.randn(2, T, V, 4, *hw)
    assert model(z, torch.tensor([0.3, 0.7]), make_cond(2, T, V, *hw)).shape == z.shape


def test_forward_time_range():
    model = tiny_model()
    z = torch.randn(1, 2, 1, 4, 4, 4)
    for t in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            model(z, torch.tensor([t]), make_cond(1, 2, 1))


def test_forward_patch_divisibility():
    with pytest.raises(ValueError):
        tiny_model()(torch.randn(1, 1, 1, 4, 5, 4), torch.tensor([0.5]), make_cond(1, 1, 1, 5, 4))


def test_zero_init_appended_blocks_identity():
    """Untrained temporal/cross-view blocks contribute nothing, even after the spatial path is trained."""
    model = randomize(tiny_model(), r"units\.\d\.0\.|final|patch|pos_embed|time|text")
    z = torch.randn(2, 3, 2, 4, 4, 4)
    cond = make_cond(2, 3, 2)
    t = torch.tensor([0.2, 0.8])
    full = model(z, t, cond)
    spatial_only = model(z, t, cond, BlockMask(True, False, False))
    assert torch.equal(full, spatial_only)


def test_forward_deterministic():
    model = randomize(tiny_model())
    z = torch.randn(1, 3, 2, 4, 4, 4)
    cond = make_cond(1, 3, 2)
    assert torch.equal(model(z, torch.tensor([0.4]), cond), model(z, torch.tensor([0.4]), cond))


def test_model_view_permutation_equivariance():
    model = randomize(tiny_model()).double()
    z = torch.randn(1, 2, 3, 4, 4, 4, dtype=torch.float64)
    cond = make_cond(1, 2, 3)
    cond.control = cond.control.double()
    perm = [1, 2, 0]
    pc = ConditionBundle(cond.text_tokens, cond.control[:, :, perm], cond.ref_mask, cond.view_mask[:, perm])
    t = torch.tensor([0.5], dtype=torch.float64)
    torch.testing.assert_close(model(z[:, :, perm], t, pc), model(z, t, cond)[:, :, perm], atol=1e-9, rtol=0)


def test_single_view_skips_crossview():
    model = randomize(tiny_model())
    z = torch.randn(1, 2, 3, 4, 4, 4)
    cond = make_cond(1, 2, 3, n_valid=1)
    t = torch.tensor([0.5])
    assert torch.equal(model(z, t, cond), model(z, t, cond, BlockMask(True, True, False)))


def test_conditioning_changes_output():
    model = randomize(tiny_model())
    z = torch.randn(1, 2, 2, 4, 4, 4)
    cond = make_cond(1, 2, 2)
    t = torch.tensor([0.5])
    assert not torch.allclose(model(z, t, cond), model(z, t, cond.null()))
    assert int(cond.null().text_tokens[0, 0]) == NULL_TOKEN


def test_control_from_rasters():
    box = np.zeros((2, 3, 16, 16, 1), np.float32)
    box[..., :8, :, 0] = 1
    out = control_from_rasters(box, np.ones_like(box), (4, 4))
    assert out.shape == (2, 3, 2, 4, 4)
    assert torch.all(out[:, :, 0, :2] == 1) and torch.all(out[:, :, 0, 2:] == 0) and torch.all(out[:, :, 1] == 1)


# flow objective

def test_flow_sample_invariants():
    z0 = torch.randn(3, 2, 1, 4, 4, 4, dtype=torch.float64)
    s = make_flow_sample(z0, seed=1)
    tb = s.t.reshape(-1, 1, 1, 1, 1, 1)
    assert torch.equal(s.z_t, (1 - tb) * z0 + tb * s.eps)
    torch.testing.assert_close(s.target + s.eps, z0, atol=1e-15, rtol=0)
    assert torch.all((s.t > 0) & (s.t < 1))
    lo = make_flow_sample(z0, seed=1, t=1e-9)
    hi = make_flow_sample(z0, seed=1, t=1 - 1e-9)
    assert (lo.z_t - z0).abs().max() < 1e-7 and (hi.z_t - hi.eps).abs().max() < 1e-7


def test_flow_loss_examples():
    z0 = torch.randn(2, 3, 2, 4, 4, 4)
    s = make_flow_sample(z0, seed=0)
    assert float(flow_loss(s.target.clone(), s)) == 0.0
    assert float(flow_loss(s.target + 0.5, s)) == pytest.approx(0.25, rel=1e-5)
    assert float(flow_loss(s.target + 3.0, s, ref_mask=torch.ones(2, 3, dtype=torch.bool))) == 0.0
    with pytest.raises(ValueError):
        flow_loss(s.target[:, :2], s)


def test_flow_loss_gradient_ignores_reference_targets():
    model = randomize(tiny_model())
    z0 = torch.randn(2, 3, 2, 4, 4, 4)
    ref = torch.tensor([[True, False, False], [True, True, False]])
    cond = make_cond(2, 3, 2)
    cond.ref_mask = ref

    def grads(z):
        s = make_flow_sample(z, seed=3)
        model.zero_grad()
        flow_loss(model(s.z_t, s.t, cond), s, ref).backward()
        return [p.grad.clone() for p in model.parameters() if p.grad is not None]

    a = grads(z0)
    s = make_flow_sample(z0, seed=3)
    # change reference targets while keeping the model inputs fixed
    z_alt = z0.clone()
    z_alt[ref] = torch.randn_like(z_alt[ref]) * 100
    s_alt = make_flow_sample(z_alt, seed=3)
    model.zero_grad()
    flow_loss(model(s.z_t, s.t, cond), s_alt, ref).backward()
    b = [p.grad.clone() for p in model.parameters() if p.grad is not None]
    assert all(torch.equal(x, y) for x, y in zip(a, b))


def test_block_dropout_examples():
    assert all(block_dropout(0, 0, seed=s) == BlockMask() for s in range(50))
    assert all(not block_dropout(1, 0, seed=s).temporal for s in range(50))
    rng = np.random.default_rng(0)
    draws = [block_dropout(0.1, 0.1, generator=rng) for _ in range(10_000)]
    assert abs(np.mean([not d.temporal for d in draws]) - 0.1) <= 0.01
    assert abs(np.mean([not d.crossview for d in draws]) - 0.1) <= 0.01
    assert not any(not d.temporal and not d.crossview for d in draws)
    assert all(d.spatial for d in draws)


def test_block_dropout_errors():
    with pytest.raises(ValueError):
        block_dropout(-0.1, 0)
    with pytest.raises(ValueError):
        block_dropout(0.7, 0.7)
    assert block_dropout(0.7, 0.7, allow_both=True, seed=0) is not None


# sampling

@pytest.mark.parametrize("steps", [1, 2, 7, 50])
def test_oracle_sampling_exact(steps):
    shape = (1, 4, 2, 4, 4, 4)
    z0 = torch.randn(shape)
    eps = initial_noise(shape, seed=11)
    out = sample(oracle_predictor(z0, eps), make_cond(1, 4, 2), shape, steps=steps, seed=11)
    assert (out - z0).abs().max() < 1e-5


def test_reference_frames_conserved():
    model = randomize(tiny_model())
    shape = (1, 5, 2, 4, 4, 4)
    refs = torch.randn(1, 3, 2, 4, 4, 4)
    out = sample(model, make_cond(1, 5, 2), shape, ref_latents=refs, steps=4, seed=0)
    assert torch.equal(out[:, :3], refs)


def test_sample_steps_error():
    with pytest.raises(ValueError):
        sample(tiny_model(), make_cond(1, 2, 1), (1, 2, 1, 4, 4, 4), steps=0)


def test_autoregress_single_window_matches_sample():
    model = randomize(tiny_model())
    refs = torch.randn(1, 3, 2, 4, 4, 4)
    cond = make_cond(1, 6, 2)
    a = autoregress(model, cond, 3, refs, window=6, steps=3, seed=5)
    b = sample(model, cond, (1, 6, 2, 4, 4, 4), refs, steps=3, seed=5)
    assert torch.equal(a, b)


def test_autoregress_two_windows():
    model = randomize(tiny_model())
    refs = torch.randn(1, 3, 1, 4, 4, 4)
    cond = make_cond(1, 9, 1)
    out = autoregress(model, cond, 6, refs, window=6, steps=2, seed=0)
    assert out.shape[1] == 2 * (6 - 3) + 3
    assert torch.equal(out[:, :3], refs)
    # the second window was seeded with frames 3..5 exactly as they appear in the output
    second = sample(model, cond.frames(slice(3, 9)), (1, 6, 1, 4, 4, 4), out[:, 3:6], steps=2, seed=1)
    assert torch.equal(second, out[:, 3:9])


def test_autoregress_horizon_errors():
    refs = torch.randn(1, 3, 1, 4, 4, 4)
    with pytest.raises(ValueError):
        autoregress(tiny_model(), make_cond(1, 10, 1), 4, refs, window=6)
    with pytest.raises(ValueError):
        autoregress(tiny_model(), make_cond(1, 5, 1), 3, refs, window=6)
