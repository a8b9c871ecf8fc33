import dataclasses

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from splatworld.gsvae import (DualDecoderVAE, GaussianDecoder, ImageAutoencoder, PosteriorStats, VAEConfig,
                              clip_losses, gradient_perceptual, gs_decode, kl_divergence, loss_storm, loss_vae,
                              render_targets, reparameterize, select_context, total_loss)
from splatworld.splatcore import DecodeConfig, apply_exposure
from splatworld.synthworld import make_camera_rig


def small_vae(H=16, W=16, **kw):
    cfg = VAEConfig(image_size=(H, W), widths=(8, 16), gs_dim=32, gs_depth=2, gs_heads=2, **kw)
    return DualDecoderVAE(cfg)


# encoder / image decoder

def test_encode_shape_clip_layout():
    ae = ImageAutoencoder(8, 4, widths=(8, 16))
    stats = ae.encode(torch.rand(19, 6, 64, 64, 3))
    assert stats.mean.shape == (19, 6, 8, 16, 16) and stats.logvar.shape == (19, 6, 8, 16, 16)


def test_encode_per_frame_purity():
    ae = ImageAutoencoder(4, 4, widths=(8, 16))
    x = torch.rand(3, 2, 16, 16, 3)
    x[2] = x[0]
    s = ae.encode(x)
    assert torch.equal(s.mean[0], s.mean[2]) and torch.equal(s.logvar[0], s.logvar[2])


def test_encode_zero_image_finite():
    s = ImageAutoencoder(16, 8, widths=(8, 16)).encode(torch.zeros(1, 32, 32, 3))
    assert torch.isfinite(s.mean).all() and torch.isfinite(s.logvar).all()


@pytest.mark.parametrize("bad", [(2, 16, 16, 4), (2, 15, 16, 3)])
def test_encode_shape_errors(bad):
    with pytest.raises(ValueError):
        ImageAutoencoder(8, 4, widths=(8, 16)).encode(torch.rand(*bad))


def test_autoencoder_config_errors():
    with pytest.raises(ValueError):
        ImageAutoencoder(5, 4)
    with pytest.raises(ValueError):
        ImageAutoencoder(8, 2)


@pytest.mark.parametrize("f,hw", [(4, (16, 16)), (8, (32, 24)), (4, (48, 32))])
def test_decode_shape_and_range(f, hw):
    ae = ImageAutoencoder(8, f, widths=(8, 16))
    x = torch.rand(2, 3, *hw, 3)
    y = ae.decode(reparameterize(ae.encode(x), seed=0))
    assert y.shape == x.shape
    assert y.min() >= 0 and y.max() <= 1


def test_decode_channel_mismatch():
    with pytest.raises(ValueError):
        ImageAutoencoder(8, 4, widths=(8, 16)).decode(torch.zeros(1, 4, 4, 4))


def test_logvar_clamped():
    s = PosteriorStats(torch.zeros(3), torch.tensor([-100.0, 0.0, 100.0]))
    assert s.logvar.tolist() == [-30.0, 0.0, 20.0]


def test_reparameterize_small_variance():
    mean = torch.randn(4, 8, 4, 4)
    z = reparameterize(PosteriorStats(mean, torch.full_like(mean, -1e9)), seed=3)
    assert (z - mean).abs().max() < 1e-6


def test_reparameterize_seeded():
    s = PosteriorStats(torch.zeros(10), torch.zeros(10))
    assert torch.equal(reparameterize(s, seed=5), reparameterize(s, seed=5))
    assert not torch.equal(reparameterize(s, seed=5), reparameterize(s, seed=6))


def test_reparameterize_variance():
    s = PosteriorStats(torch.zeros(10_000, dtype=torch.float64), torch.zeros(10_000, dtype=torch.float64))
    z = reparameterize(s, seed=0)
    assert abs(float(z.var()) - 1.0) < 0.05


# context selection

def test_context_frames_default():
    ctx, tgt = select_context(19, 3, np.random.default_rng(0))
    assert ctx == [0, 6, 12, 18]
    assert len(tgt) == 3 and len(set(tgt)) == 3 and all(0 <= t < 19 for t in tgt)


def test_context_seeded():
    assert select_context(19, 3, np.random.default_rng(4)) == select_context(19, 3, np.random.default_rng(4))


def test_target_uniformity():
    rng = np.random.default_rng(0)
    counts = np.zeros(19)
    for _ in range(1000):
        counts[select_context(19, 3, rng)[1]] += 1
    freq = counts / 1000
    assert np.all(np.abs(freq - 3 / 19) <= 0.2 * 3 / 19)


def test_context_other_lengths():
    assert select_context(7, 3, np.random.default_rng(0))[0] == [0, 2, 4, 6]
    assert select_context(4, 3, np.random.default_rng(0))[0] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        select_context(3)


# Gaussian decoder

def test_gs_decode_token_count_and_grid_shapes():
    dec = GaussianDecoder(8, 4, 2, dim=32, depth=1, heads=2, max_views=6, latent_hw=(16, 16))
    seen = {}
    dec.blocks[0].register_forward_hook(lambda m, i, o: seen.update(n=i[0].shape[1]))
    rig = make_camera_rig(6, 60, 64, 64)
    out = gs_decode(dec, torch.randn(4, 6, 8, 16, 16), [rig] * 4, [0.0, 3.0, 6.0, 9.0])
    assert seen["n"] == 1536 + 1 + 6  # context tokens plus sky and per-view exposure tokens
    assert len(out.grids) == 4 and all(len(r) == 6 for r in out.grids)
    g = out.grids[0][0]
    assert g.raw.shape == (64, 64, 12) and g.velocity.shape == (64, 64, 3)
    assert out.sky_color.shape == (3,) and out.exposure.shape == (6, 2)


def test_gs_decode_masked_views_ignored():
    dec = GaussianDecoder(8, 4, 2, dim=32, depth=2, heads=2, max_views=3, latent_hw=(4, 4))
    rig = make_camera_rig(3, 90, 16, 16)
    z = torch.randn(2, 3, 8, 4, 4)
    mask = np.array([True, False, False])
    a = gs_decode(dec, z, [rig] * 2, [0.0, 1.0], mask)
    z2 = z.clone()
    z2[:, 1:] = torch.randn_like(z2[:, 1:]) * 1e3
    z2[0, 2, 0, 0, 0] = float("nan")
    b = gs_decode(dec, z2, [rig] * 2, [0.0, 1.0], mask)
    assert a.grids[0][1] is None
    for t in range(2):
        assert (a.grids[t][0].raw - b.grids[t][0].raw).abs().max() <= 1e-6
    assert (a.sky_color - b.sky_color).abs().max() <= 1e-6


def test_gs_decode_needs_a_valid_view():
    dec = GaussianDecoder(8, 4, 2, dim=32, depth=1, heads=2, max_views=2, latent_hw=(4, 4))
    rig = make_camera_rig(2, 90, 16, 16)
    with pytest.raises(ValueError):
        gs_decode(dec, torch.randn(1, 2, 8, 4, 4), [rig], [0.0], np.array([False, False]))


def test_gs_decoder_frame_permutation_equivariance():
    dec = GaussianDecoder(8, 4, 2, dim=32, depth=2, heads=2, max_views=2, latent_hw=(4, 4)).double()
    z = torch.randn(1, 3, 2, 8, 4, 4, dtype=torch.float64)
    times = torch.tensor([[0.0, 1.0, 2.5]], dtype=torch.float64)
    raw, sky, exp = dec(z, times)
    perm = [2, 0, 1]
    raw_p, sky_p, exp_p = dec(z[:, perm], times[:, perm])
    torch.testing.assert_close(raw_p, raw[:, perm], atol=1e-10, rtol=0)
    torch.testing.assert_close(sky_p, sky, atol=1e-10, rtol=0)


def _decoded(vae, n_ctx=2, views=2, H=16):
    rig = make_camera_rig(views, 90, H, H)
    z = torch.randn(n_ctx, views, vae.config.latent_channels, H // 4, H // 4)
    return vae.gs_decode(z, [rig] * n_ctx, [float(i) for i in range(n_ctx)]), rig


def test_render_zero_opacity_is_exposed_sky():
    vae = small_vae()
    out, rig = _decoded(vae)
    for row in out.grids:
        for g in row:
            g.raw = g.raw.detach().clone()
            g.raw[..., 8] = -1e4
    with torch.no_grad():
        rgb, outs = vae.render_targets(out, [rig], [0.5])
    for v in range(2):
        gain, bias = out.exposure[v]
        expect = apply_exposure(out.sky_color, gain, bias)
        torch.testing.assert_close(rgb[0, v], expect.expand_as(rgb[0, v]))


def test_render_static_time_invariance():
    vae = small_vae()
    out, rig = _decoded(vae)
    for row in out.grids:
        for g in row:
            g.velocity = torch.zeros_like(g.velocity)
    with torch.no_grad():
        rgb, _ = vae.render_targets(out, [rig, rig], [0.0, 7.0])
    assert torch.equal(rgb[0], rgb[1])


# losses

def test_loss_vae_zero():
    x = torch.rand(2, 8, 8, 3)
    z = torch.zeros(2, 4, 2, 2)
    assert float(loss_vae(x, x.clone(), PosteriorStats(z, z.clone()))) == 0.0


def test_kl_closed_form():
    s = PosteriorStats(torch.ones(5, 4), torch.zeros(5, 4))
    assert float(kl_divergence(s)) == pytest.approx(0.5)


def test_perceptual_self_zero():
    x = torch.rand(3, 16, 16, 3)
    assert float(gradient_perceptual(x, x)) == 0.0
    assert float(gradient_perceptual(x, torch.zeros_like(x))) > 0


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_kl_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    s = PosteriorStats(torch.randn(20, generator=g) * 5, torch.randn(20, generator=g) * 10)
    assert float(kl_divergence(s)) >= 0


def test_loss_storm_examples():
    img = torch.rand(2, 8, 8, 3)
    d = torch.rand(2, 8, 8) * 10 + 1
    d[0, 0, 0] = float("inf")
    assert float(loss_storm(img, img, d.clone(), d)) == 0.0
    biased = torch.where(torch.isfinite(d), d + 1, d)
    assert float(loss_storm(img, img, biased, d)) == pytest.approx(0.05)
    a = loss_storm(img, img, biased, d, w_d=0.05)
    b = loss_storm(img, img, biased, d, w_d=0.1)
    assert float(b) == pytest.approx(2 * float(a))


def test_total_loss_examples():
    assert float(total_loss(torch.tensor(1.0), torch.tensor(2.0), 0.5)) == 2.0
    assert float(total_loss(torch.tensor(3.0), torch.tensor(0.0), 0.5)) == 3.0
    assert float(total_loss(torch.tensor(0.0), torch.tensor(4.0), 0.5)) == 2.0


def test_total_loss_gradients_match_finite_differences():
    """Directional derivatives of the combined loss wrt input images and Gaussian-decoder weights."""
    torch.manual_seed(0)
    vae = small_vae(8, 8, render_alpha_eps=1e-15).double()
    rig = make_camera_rig(1, 90, 8, 8)
    imgs = torch.rand(2, 1, 8, 8, 3, dtype=torch.float64) * 0.8 + 0.1
    depth = torch.rand(2, 1, 8, 8, dtype=torch.float64) * 10 + 2

    def loss_fn(x):
        stats = vae.encode(x)
        recon = vae.decode_image(stats.mean)
        out = vae.gs_decode(stats.mean, [rig, rig], [0.0, 1.0])
        rgb, outs = vae.render_targets(out, [rig], [0.5], 1e-15)
        d = torch.stack([torch.stack([o.depth for o in row]) for row in outs])
        return total_loss(loss_vae(x, recon, stats), loss_storm(rgb, x[:1], d, depth[:1]), 0.5)

    x = imgs.clone().requires_grad_(True)
    loss = loss_fn(x)
    params = [p for p in vae.gs_decoder.parameters()]
    grads = torch.autograd.grad(loss, [x] + params)
    gen = torch.Generator().manual_seed(1)
    dirs = [torch.randn(t.shape, generator=gen, dtype=torch.float64) for t in [x] + params]
    # unit-norm directions keep the probe step well inside the smooth region between clamps
    dirs[0] /= dirs[0].norm()
    pnorm = torch.sqrt(sum((d * d).sum() for d in dirs[1:]))
    dirs[1:] = [d / pnorm for d in dirs[1:]]
    h = 1e-6
    # input direction
    analytic = float((grads[0] * dirs[0]).sum())
    with torch.no_grad():
        fd = (float(loss_fn(imgs + h * dirs[0])) - float(loss_fn(imgs - h * dirs[0]))) / (2 * h)
    assert abs(analytic - fd) <= 1e-2 * max(abs(fd), 1e-8)
    # decoder-parameter direction
    analytic = sum(float((g * d).sum()) for g, d in zip(grads[1:], dirs[1:]))
    with torch.no_grad():
        for p, d in zip(params, dirs[1:]):
            p.add_(h * d)
        up = float(loss_fn(imgs))
        for p, d in zip(params, dirs[1:]):
            p.sub_(2 * h * d)
        down = float(loss_fn(imgs))
        for p, d in zip(params, dirs[1:]):
            p.add_(h * d)
    fd = (up - down) / (2 * h)
    assert abs(analytic - fd) <= 1e-2 * max(abs(fd), 1e-8)


# training step

def test_clip_losses_single_view_skips_storm(tiny_clips):
    clip = dataclasses.replace(tiny_clips[0], view_mask=np.array([True, False, False]))
    vae = small_vae()
    loss, parts = clip_losses(vae, clip, np.random.default_rng(0))
    assert float(parts["storm"]) == 0.0 and "rgb" not in parts
    loss.backward()
    assert all(p.grad is None for p in vae.gs_decoder.parameters())


def test_clip_losses_lambda_zero(tiny_clips):
    vae = small_vae(lambda_storm=0.0)
    loss, parts = clip_losses(vae, tiny_clips[0], np.random.default_rng(0))
    assert "rgb" not in parts and torch.isfinite(loss)


def test_clip_losses_multiview(tiny_clips):
    vae = small_vae()
    loss, parts = clip_losses(vae, tiny_clips[0], np.random.default_rng(0))
    assert {"mse", "perceptual", "kl", "rgb", "depth_l1"} <= set(parts)
    loss.backward()
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in vae.gs_decoder.parameters())
