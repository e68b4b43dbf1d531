import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cdsr import objectives as obj
from cdsr.model import CrossDomainRecommender, make_batch

N_X, N_Y = 3, 4
PAD = N_X + N_Y


def test_target_masks_example():
    # x1 y1 x2 y2 on the merged timeline
    merged = torch.tensor([[0, 3, 1, 4]])
    t = obj.target_masks(merged, torch.tensor([4]), N_X)
    assert t["mask_x"].tolist() == [[False, True, False, False]]
    assert t["mask_y"].tolist() == [[True, False, True, False]]
    assert t["next_x"][0, 1] == 1
    assert t["next_y"][0, 0] == 0 and t["next_y"][0, 2] == 1


def test_target_masks_respect_length():
    merged = torch.tensor([[0, 3, PAD, PAD]])
    t = obj.target_masks(merged, torch.tensor([2]), N_X)
    assert t["mask_x"].sum() == 0 and t["mask_y"].tolist() == [[True, False, False, False]]


@given(st.lists(st.integers(0, PAD - 1), min_size=1, max_size=10))
@settings(max_examples=100, deadline=None)
def test_target_masks_brute_force(items):
    merged = torch.tensor([items])
    t = obj.target_masks(merged, torch.tensor([len(items)]), N_X)
    for k in range(len(items)):
        nxt = items[k + 1] if k + 1 < len(items) else None
        assert bool(t["mask_x"][0, k]) == (nxt is not None and nxt < N_X)
        assert bool(t["mask_y"][0, k]) == (nxt is not None and nxt >= N_X)
    # every target belongs to exactly one domain
    assert int(t["mask_x"].sum() + t["mask_y"].sum()) == len(items) - 1


def test_clamped_log_bounds():
    lp = torch.tensor([-1e9, 0.0, math.log(0.5)])
    out = obj.clamped_log(lp)
    assert out[0] == pytest.approx(math.log(1e-7))
    assert out[1] == pytest.approx(math.log(1 - 1e-7))
    assert out[2] == pytest.approx(math.log(0.5))


def test_single_probs_sum_to_one_and_nan_guard():
    h = torch.randn(5, 4)
    p = obj.single_prediction_probs(h, torch.randn(5, 4), torch.randn(4, 6))
    torch.testing.assert_close(p.sum(-1), torch.ones(5))
    assert (p >= 0).all()
    bad = h.clone()
    bad[0, 0] = float("nan")
    with pytest.raises(obj.NonFiniteError):
        obj.single_prediction_probs(bad, h, torch.randn(4, 6))


def _ref_single(hv, hm, w, items, n_x, domain):
    total = 0.0
    for k in range(len(items) - 1):
        nxt = items[k + 1]
        if (nxt < n_x) != (domain == "X"):
            continue
        logits = (hv[k] + hm[k]) @ w
        p = np.exp(logits - logits.max())
        p /= p.sum()
        local = nxt if domain == "X" else nxt - n_x
        total -= math.log(min(max(p[local], 1e-7), 1 - 1e-7))
    return total


def _ref_cross(hm, wx, wy, items, n_x):
    total = 0.0
    for k in range(len(items) - 1):
        nxt = items[k + 1]
        w, local = (wx, nxt) if nxt < n_x else (wy, nxt - n_x)
        logits = hm[k] @ w
        p = np.exp(logits - logits.max())
        p /= p.sum()
        total -= math.log(min(max(p[local], 1e-7), 1 - 1e-7))
    return total


@given(st.lists(st.integers(0, PAD - 1), min_size=2, max_size=8), st.integers(0, 1000))
@settings(max_examples=60, deadline=None)
def test_losses_match_loop_reference(items, seed):
    g = torch.Generator().manual_seed(seed)
    T, d = len(items), 3
    hv = torch.randn(1, T, d, generator=g, dtype=torch.float64)
    hm = torch.randn(1, T, d, generator=g, dtype=torch.float64)
    wx = torch.randn(d, N_X, generator=g, dtype=torch.float64)
    wy = torch.randn(d, N_Y, generator=g, dtype=torch.float64)
    t = obj.target_masks(torch.tensor([items]), torch.tensor([T]), N_X)
    lx = obj.single_domain_loss(hv, hm, wx, t["next_x"], t["mask_x"])
    ly = obj.single_domain_loss(hv, hm, wy, t["next_y"], t["mask_y"])
    lc = obj.cross_domain_loss(hm, wx, wy, t)
    a, b = hv[0].numpy(), hm[0].numpy()
    assert float(lx) == pytest.approx(_ref_single(a, b, wx.numpy(), items, N_X, "X"), rel=1e-10, abs=1e-12)
    assert float(ly) == pytest.approx(_ref_single(a, b, wy.numpy(), items, N_X, "Y"), rel=1e-10, abs=1e-12)
    assert float(lc) == pytest.approx(_ref_cross(b, wx.numpy(), wy.numpy(), items, N_X), rel=1e-10)


def test_no_targets_gives_zero_loss():
    h = torch.randn(1, 3, 2)
    t = obj.target_masks(torch.tensor([[0, 1, 2]]), torch.tensor([3]), N_X)
    assert float(obj.single_domain_loss(h, h, torch.randn(2, N_Y), t["next_y"], t["mask_y"])) == 0.0


def test_prototypes():
    h = torch.arange(12, dtype=torch.float64).reshape(1, 4, 3)
    # length 3 excludes the right pad
    torch.testing.assert_close(obj.single_prototype(h, torch.tensor([3])), h[0, :3].mean(0, keepdim=True))
    mask = torch.tensor([[True, False, True, False]])
    torch.testing.assert_close(obj.cross_prototype(h, mask), h[0, [0, 2]].mean(0, keepdim=True))
    with pytest.raises(ValueError):
        obj.cross_prototype(h, torch.zeros(1, 4, dtype=torch.bool))


def test_corrupt_preserves_kept_domain():
    merged = torch.tensor([[0, 3, 1, 4, 5, PAD]])
    g = torch.Generator().manual_seed(0)
    cx = obj.corrupt(merged, "X", N_X, N_Y, g)
    assert cx[0, 0] == 0 and cx[0, 2] == 1 and cx[0, 5] == PAD
    assert all(N_X <= int(v) < PAD for v in cx[0, [1, 3, 4]])
    cy = obj.corrupt(merged, "Y", N_X, N_Y, g)
    assert cy[0, 1] == 3 and cy[0, 3] == 4 and cy[0, 4] == 5
    assert all(0 <= int(v) < N_X for v in cy[0, [0, 2]])
    with pytest.raises(ValueError):
        obj.corrupt(merged, "Z", N_X, N_Y)


def test_corrupt_is_uniform():
    merged = torch.full((1, 20000), N_X)  # all Y
    out = obj.corrupt(merged, "Y", N_X, N_Y)
    assert torch.equal(out, merged)
    merged = torch.zeros(1, 30000, dtype=torch.long)
    out = obj.corrupt(merged, "Y", N_X, N_Y, torch.Generator().manual_seed(1))
    freq = np.bincount(out.numpy().ravel(), minlength=N_X) / out.numel()
    np.testing.assert_allclose(freq, 1 / N_X, atol=0.02)


def test_discriminator_bilinear():
    s, c, w = torch.randn(2, 3), torch.randn(2, 3), torch.randn(3, 3)
    ref = torch.stack([torch.sigmoid(s[i] @ w @ c[i]) for i in range(2)])
    torch.testing.assert_close(obj.discriminate(s, c, w), ref)


def test_infomax_loss_reference():
    s, p, n = (torch.randn(2, 3, dtype=torch.float64) for _ in range(3))
    w = torch.randn(3, 3, dtype=torch.float64)
    ref = 0.0
    for i in range(2):
        dp = 1 / (1 + math.exp(-float(s[i] @ w @ p[i])))
        dn = 1 / (1 + math.exp(-float(s[i] @ w @ n[i])))
        ref -= math.log(min(max(dp, 1e-7), 1 - 1e-7)) + math.log(min(max(1 - dn, 1e-7), 1 - 1e-7))
    assert float(obj.infomax_loss(s, p, n, w)) == pytest.approx(ref, rel=1e-10)


def test_total_loss_combination():
    parts = [torch.tensor(float(v)) for v in (1, 2, 3, 4, 5)]
    assert float(obj.total_loss(0.7, *parts)) == pytest.approx(0.7 * 6 + 0.3 * 9)
    assert float(obj.total_loss(1.0, *parts)) == pytest.approx(6)
    with pytest.raises(ValueError):
        obj.total_loss(1.5, *parts)


def _tiny_model(n_layers=1, **kw):
    torch.manual_seed(0)
    return CrossDomainRecommender(N_X, N_Y, max_len=6, dim=4, n_layers=n_layers, dropout=0.0, **kw).double()


def test_model_losses_all_finite_and_positive():
    m = _tiny_model()
    batch = make_batch([[0, 3, 1, 4], [5, 2, 6]], PAD)
    out = m.losses(batch, torch.Generator().manual_seed(0))
    assert set(out) == {"cross", "single_x", "single_y", "disc_x", "disc_y"}
    for k, v in out.items():
        assert torch.isfinite(v) and v > 0, k
    off = m.losses(batch, single=False, infomax=False)
    assert off["single_x"].item() == 0 and off["disc_y"].item() == 0


def test_infomax_negative_pairing():
    """disc_x scores (X single prototype) against the Y cross prototype; its
    negative comes from the sequence that keeps Y and corrupts X."""
    m = _tiny_model()
    m.eval()
    batch = make_batch([[0, 3, 1, 4, 2]], PAD)
    g1 = torch.Generator().manual_seed(5)
    out = m.losses(batch, g1)
    g2 = torch.Generator().manual_seed(5)
    cx = obj.corrupt(batch.merged, "X", N_X, N_Y, g2)
    cy = obj.corrupt(batch.merged, "Y", N_X, N_Y, g2)
    gx, gy, g = m.item_tables()
    xv, yv = m.views(batch.merged)
    H = m.encode("merged", batch.merged, g)
    Hx = m.encode("X", xv, gx)
    Hcy = m.encode("merged", cy, g)
    is_y = (batch.merged >= N_X) & (batch.merged < PAD)
    o_s = obj.single_prototype(Hx, batch.lengths)
    ref = obj.infomax_loss(o_s, obj.cross_prototype(H, is_y), obj.cross_prototype(Hcy, is_y), m.disc_x)
    torch.testing.assert_close(out["disc_x"], ref)


def test_pad_row_is_zero_after_smoothing():
    m = _tiny_model(n_layers=2, graph=None)
    for t in m.item_tables():
        assert torch.count_nonzero(t[-1]) == 0


@pytest.mark.parametrize("mode", ["both", "single", "cross"])
def test_last_logits_shapes(mode):
    m = _tiny_model().eval()
    batch = make_batch([[0, 3, 1], [5, 2, 6, 4]], PAD)
    assert m.last_logits(batch, "X", mode).shape == (2, N_X)
    assert m.last_logits(batch, "Y", mode).shape == (2, N_Y)


def test_last_logits_ignore_right_padding():
    m = _tiny_model().eval()
    alone = m.last_logits(make_batch([[0, 3, 1]], PAD), "Y")
    padded = m.last_logits(make_batch([[0, 3, 1], [5, 2, 6, 4, 0]], PAD), "Y")[:1]
    torch.testing.assert_close(alone, padded)
