import math

import numpy as np
import pytest
import torch

from oracles import parameter_fd_errors
from pointuv.diffusion import loss_x0
from pointuv.errors import ConfigError, ContainerError, ContractError
from pointuv.io import read_puvd, write_puvd
from pointuv.nets import (CoarseDenoiser, CoarseNet, FineDenoiser, TrainState, UVDenoiser,
                          cyclic_cosine_lr, gaussian_oracle_denoiser, load_checkpoint,
                          optimizer_step, save_checkpoint)
from pointuv.schedule import build_cosine


def randomize(model, seed, scale=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model


def point_instance(seed=0, K=16, n_styles=3):
    torch.manual_seed(seed)
    model = randomize(CoarseNet(hidden=16, emb_dim=8, n_styles=n_styles, encoder_width=4).double(), seed)
    g = torch.Generator().manual_seed(seed + 1)
    x_shape = torch.randn(1, 7, 8, 8, generator=g, dtype=torch.float64)
    z_coord = torch.randn(1, 6, K, generator=g, dtype=torch.float64)
    z0 = torch.rand(1, 3, K, generator=g, dtype=torch.float64) * 2 - 1
    eps = torch.randn(1, 3, K, generator=g, dtype=torch.float64)
    return model, x_shape, z_coord, z0, eps


def uv_instance(seed=0, res=8, channels=(8, 8, 8)):
    torch.manual_seed(seed)
    model = randomize(UVDenoiser(channels, emb_dim=8).double(), seed, 0.2)
    g = torch.Generator().manual_seed(seed + 1)
    cond = {k: torch.randn(1, c, res, res, generator=g, dtype=torch.float64)
            for k, c in (("x_shape", 7), ("x_coarse", 3), ("x_smooth", 3))}
    x0 = torch.rand(1, 3, res, res, generator=g, dtype=torch.float64) * 2 - 1
    eps = torch.randn(1, 3, res, res, generator=g, dtype=torch.float64)
    return model, cond, x0, eps


# -- oracle denoiser ---------------------------------------------------------

def test_gaussian_oracle_limits():
    s = build_cosine(64)
    den = gaussian_oracle_denoiser(s)
    x = np.linspace(-2, 2, 5)
    assert np.array_equal(den(x, 0), x)
    assert np.abs(den(x, 64)).max() < 1e-3 * 2


def test_gaussian_oracle_regression_slope():
    s = build_cosine(64)
    den = gaussian_oracle_denoiser(s)
    rng = np.random.default_rng(0)
    n = 100_000
    for t in (5, 20, 40):
        x0 = rng.standard_normal(n)
        xt = math.sqrt(s.alpha_bar[t]) * x0 + math.sqrt(1 - s.alpha_bar[t]) * rng.standard_normal(n)
        slope = np.dot(xt, x0) / np.dot(xt, xt)        # least squares E[x0 | xt] = b xt
        resid = x0 - slope * xt
        se = math.sqrt(resid.var() / np.dot(xt, xt))
        expect = den(1.0, t)
        assert abs(slope - expect) < 3 * se


# -- architectures -----------------------------------------------------------

def test_zero_initialised_outputs():
    torch.manual_seed(0)
    net = CoarseNet(hidden=16, emb_dim=8, n_styles=2, encoder_width=4)
    out = net(torch.randn(2, 3, 10), torch.randn(2, 6, 10), torch.randn(2, 7, 8, 8), 5, torch.tensor([0, 1]))
    assert torch.count_nonzero(out) == 0
    uv = UVDenoiser((8, 16), 8)
    x = torch.randn(1, 3, 8, 8)
    out = uv(x, torch.randn(1, 7, 8, 8), torch.randn(1, 3, 8, 8), torch.randn(1, 3, 8, 8), 3)
    assert torch.count_nonzero(out) == 0


def test_point_permutation_equivariance():
    model, xs, zc, z0, eps = point_instance(1)
    perm = torch.randperm(16, generator=torch.Generator().manual_seed(3))
    with torch.no_grad():
        a = model(eps, zc, xs, 7, 1)
        b = model(eps[..., perm], zc[..., perm], xs, 7, 1)
    assert torch.equal(a[..., perm], b)


def test_style_contract():
    model, xs, zc, z0, eps = point_instance(2)
    with pytest.raises(ContractError):
        model(eps, zc, xs, 3, 3)
    plain = CoarseNet(hidden=8, emb_dim=8, n_styles=0, encoder_width=4).double()
    with pytest.raises(ContractError):
        plain(eps, zc, xs, 3, 0)
    # style changes the prediction
    with torch.no_grad():
        assert not torch.equal(model(eps, zc, xs, 3, 0), model(eps, zc, xs, 3, 2))


def test_uv_shift_equivariance_on_interior():
    # shifts that are multiples of the pooling factor commute with the network
    # away from the zero-padded border
    model, _, _, _ = uv_instance(3, channels=(6, 6))
    g = torch.Generator().manual_seed(4)
    res, shift, margin = 64, model.factor, 28
    inputs = [torch.randn(1, c, res, res, generator=g, dtype=torch.float64) for c in (3, 7, 3, 3)]
    rolled = [torch.roll(x, shifts=(shift, shift), dims=(2, 3)) for x in inputs]
    with torch.no_grad():
        a = model(*inputs, 9)
        b = model(*rolled, 9)
    a_shift = torch.roll(a, shifts=(shift, shift), dims=(2, 3))
    sl = slice(margin, res - margin)
    diff = (a_shift[..., sl, sl] - b[..., sl, sl]).abs().max().item()
    assert diff < 1e-12
    assert a.abs().max().item() > 1e-3


def test_uv_contracts():
    model = UVDenoiser((8, 8, 8), 8)
    with pytest.raises(ContractError):
        model(torch.zeros(1, 3, 6, 6), torch.zeros(1, 7, 6, 6), torch.zeros(1, 3, 6, 6),
              torch.zeros(1, 3, 6, 6), 1)
    with pytest.raises(ContractError):
        model(torch.zeros(1, 3, 8, 8), torch.zeros(1, 7, 8, 8), torch.zeros(1, 3, 4, 4),
              torch.zeros(1, 3, 8, 8), 1)


# -- gradients ---------------------------------------------------------------

def test_point_denoiser_gradients():
    s = build_cosine(64)
    model, xs, zc, z0, eps = point_instance(5)
    den = lambda zt, t, c: model(zt, zc, xs, t, 2)  # noqa: E731
    errs = parameter_fd_errors(model, lambda: loss_x0(s, den, z0, 17, eps))
    assert len(errs) == len(list(model.parameters()))
    assert max(errs.values()) < 1e-4, errs


def test_uv_denoiser_gradients():
    s = build_cosine(64)
    model, cond, x0, eps = uv_instance(6)
    mask = (torch.rand(1, 1, 8, 8, generator=torch.Generator().manual_seed(0)) > 0.3).double()
    den = lambda xt, t, c: model(xt, cond["x_shape"], cond["x_coarse"], cond["x_smooth"], t)  # noqa: E731
    errs = parameter_fd_errors(model, lambda: loss_x0(s, den, x0, 30, eps, mask=mask))
    assert max(errs.values()) < 1e-4, errs


# -- optimiser ---------------------------------------------------------------

def test_zero_grad_no_decay_is_identity():
    p = [torch.tensor([0.5, -1.0], dtype=torch.float64), torch.ones(2, 2, dtype=torch.float64)]
    st = TrainState(p)
    before = [x.clone() for x in p]
    assert optimizer_step(st, [torch.zeros_like(x) for x in p], 1e-2)
    assert all(torch.equal(a, b) for a, b in zip(p, before))
    assert all(torch.equal(a, b) for a, b in zip(st.ema, before))


def test_single_step_closed_form():
    x0, g, lr, wd = 1.3, 0.7, 0.05, 0.1
    p = torch.tensor([x0], dtype=torch.float64)
    st = TrainState([p], weight_decay=wd, lr_cycle=0, ema_warmup=False, ema_decay=0.9)
    optimizer_step(st, [torch.tensor([g], dtype=torch.float64)], lr)
    m_hat = (1 - 0.9) * g / (1 - 0.9)
    v_hat = (1 - 0.999) * g * g / (1 - 0.999)
    expect = x0 * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p.item() == pytest.approx(expect, rel=1e-14)
    assert st.ema[0].item() == pytest.approx(0.9 * x0 + 0.1 * expect, rel=1e-14)
    assert (st.beta1, st.beta2) == (0.9, 0.999)


def test_multi_step_matches_reference_adamw():
    # compare against torch's own AdamW for a few steps at constant lr
    g = torch.Generator().manual_seed(0)
    a = torch.randn(5, dtype=torch.float64, generator=g)
    b = a.clone().requires_grad_(True)
    st = TrainState([a], weight_decay=0.01, lr_cycle=0)
    ref = torch.optim.AdamW([b], lr=1e-2, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01)
    for k in range(5):
        grad = torch.randn(5, dtype=torch.float64, generator=g)
        optimizer_step(st, [grad], 1e-2)
        b.grad = grad.clone()
        ref.step()
    torch.testing.assert_close(a, b.detach(), rtol=1e-12, atol=1e-14)


def test_nonfinite_gradient_rejected(caplog):
    p = [torch.ones(3, dtype=torch.float64)]
    st = TrainState(p)
    ok = optimizer_step(st, [torch.tensor([1.0, math.nan, 0.0], dtype=torch.float64)], 1e-2)
    assert not ok and st.step == 0 and st.rejected == 1
    assert torch.equal(p[0], torch.ones(3, dtype=torch.float64))
    assert "non-finite" in caplog.text


def test_ema_converges_to_frozen_params():
    p = [torch.zeros(2, dtype=torch.float64)]
    st = TrainState(p, ema_decay=0.9, ema_warmup=True)
    st.ema = [torch.ones(2, dtype=torch.float64)]
    gap = 1.0
    for s in range(50):
        d = min(0.9, (2.0 + s) / (11.0 + s))     # decay uses the post-increment step
        optimizer_step(st, [torch.zeros(2, dtype=torch.float64)], 1e-3)
        gap *= d
        assert st.ema[0][0].item() == pytest.approx(gap, rel=1e-12)
    assert gap < 0.01


def test_cyclic_cosine_lr():
    assert cyclic_cosine_lr(0, 1.0, 100) == 1.0
    assert cyclic_cosine_lr(50, 1.0, 100) == pytest.approx(0.505)
    assert cyclic_cosine_lr(100, 1.0, 100) == 1.0          # restart
    assert cyclic_cosine_lr(99, 1.0, 100) > 0.01
    assert cyclic_cosine_lr(7, 0.3, 0) == 0.3
    assert min(cyclic_cosine_lr(s, 1.0, 100) for s in range(300)) >= 0.01


# -- wrappers and checkpoints ------------------------------------------------

def test_wrappers_shapes_and_mask():
    torch.manual_seed(0)
    coarse = randomize(CoarseNet(16, 8, 2, 4), 0)
    den = CoarseDenoiser(coarse, np.zeros((7, 8, 8)), np.zeros((6, 12)), style=1)
    assert den(np.zeros((3, 12)), 4).shape == (3, 12)
    assert den(np.zeros((2, 3, 12)), 4).shape == (2, 3, 12)
    fine = randomize(UVDenoiser((4, 4), 8), 1)
    xs = np.random.default_rng(0).normal(size=(7, 8, 8))
    xs[3] = 0
    xs[3, :4] = 1
    out = FineDenoiser(fine)(np.zeros((3, 8, 8)), 4, {"x_shape": xs, "x_coarse": np.zeros((3, 8, 8)),
                                                     "x_smooth": np.zeros((3, 8, 8))})
    assert out.dtype == np.float64
    assert np.all(out[:, 4:] == 0) and np.any(out[:, :4] != 0)


@pytest.mark.parametrize("kind", ["coarse", "fine"])
def test_checkpoint_round_trip(tmp_path, kind):
    torch.manual_seed(0)
    model = CoarseNet(8, 8, 2, 4) if kind == "coarse" else UVDenoiser((4, 8), 8)
    randomize(model, 2)
    st = TrainState(list(model.parameters()))
    with torch.no_grad():
        for e in st.ema:
            e.mul_(0.5)
    st.step = 12
    save_checkpoint(tmp_path / "c.puvd", model, st, kind, {"resolution": 8})
    live, meta = load_checkpoint(tmp_path / "c.puvd", use_ema=False)
    ema, _ = load_checkpoint(tmp_path / "c.puvd")
    assert meta["step"] == 12 and meta["kind"] == kind and meta["resolution"] == 8
    for (n, p), q, e in zip(model.named_parameters(), live.parameters(), ema.parameters()):
        assert torch.equal(p.detach().float(), q.detach())
        assert torch.allclose(0.5 * p.detach(), e.detach())


def test_checkpoint_errors(tmp_path):
    write_puvd(tmp_path / "x.puvd", {"a": np.zeros(2)}, {"kind": "style"})
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "x.puvd")
    model = UVDenoiser((4, 8), 8)
    save_checkpoint(tmp_path / "f.puvd", model, None, "fine")
    planes, meta, _ = read_puvd(tmp_path / "f.puvd")
    planes.pop(next(iter(planes)))
    write_puvd(tmp_path / "g.puvd", planes, meta)
    with pytest.raises(ContainerError):
        load_checkpoint(tmp_path / "g.puvd")
