import numpy as np
import pytest
import torch

import oracles
from fd import relative_error
from mvdepth.camera import CameraRig, rig_poses
from mvdepth.depth import (
    DepthBackend,
    DepthContext,
    DepthEstimatorConfig,
    align_affine,
    depth_loss,
    estimate_depth,
    load_estimator,
    make_depth_net,
    train_estimator,
)
from mvdepth.errors import DegenerateFit, EmptyDataset, OracleContextMissing
from mvdepth.renderer import DepthMap, render_view
from mvdepth.scene import generate_paired_scene

ORACLE = DepthEstimatorConfig(DepthBackend.ORACLE)


def rendered(seed=0, cls="U", view=4, res=32):
    _, detailed = generate_paired_scene(seed, cls)
    pose = rig_poses(CameraRig(), detailed.bounding_sphere())[view]
    rgb, depth = render_view(detailed, pose, (res, res))
    return detailed, pose, rgb, depth


# -- estimators -----------------------------------------------------------------


def test_oracle_is_bit_exact():
    detailed, pose, rgb, depth = rendered()
    out = estimate_depth(rgb, ORACLE, DepthContext(detailed, pose))
    assert np.array_equal(out.data, depth.data) and np.array_equal(out.mask, depth.mask)


def test_oracle_needs_context():
    _, _, rgb, _ = rendered()
    with pytest.raises(OracleContextMissing):
        estimate_depth(rgb, ORACLE)


def test_untrained_learned_is_finite_relative():
    _, _, rgb, depth = rendered()
    out = estimate_depth(rgb, DepthEstimatorConfig())
    assert out.data.shape == depth.data.shape and np.isfinite(out.data).all()
    assert out.relative
    assert np.array_equal(out.mask, depth.mask)


def test_learned_net_size_and_levels():
    net = make_depth_net(DepthEstimatorConfig())
    n = sum(p.numel() for p in net.parameters())
    assert 50_000 <= n <= 200_000, n
    feats = net.features(torch.rand(1, 3, 32, 32))
    assert [f.shape[-1] for f in feats] == [32, 16, 8]


# -- alignment ------------------------------------------------------------------


def test_align_identity_and_affine_inverse():
    gt = np.random.default_rng(0).random((8, 8)) + 1
    assert align_affine(gt, gt) == pytest.approx((1.0, 0.0), abs=1e-12)
    s, t = align_affine(2 * gt + 3, gt)
    assert s == pytest.approx(0.5, abs=1e-12) and t == pytest.approx(-1.5, abs=1e-12)


def test_align_matches_lstsq_oracle():
    rng = np.random.default_rng(1)
    pred, gt = rng.random((16, 16)), rng.random((16, 16))
    mask = rng.random((16, 16)) > 0.3
    s, t = align_affine(pred, gt, mask)
    ref = oracles.lstsq_affine(pred[mask], gt[mask])
    np.testing.assert_allclose([s, t], ref, rtol=1e-10)


def test_align_is_idempotent():
    rng = np.random.default_rng(2)
    pred, gt = rng.random((10, 10)), rng.random((10, 10))
    s, t = align_affine(pred, gt)
    s2, t2 = align_affine(s * pred + t, gt)
    assert abs(s2 - 1) <= 1e-10 and abs(t2) <= 1e-10


def test_align_uses_depthmap_masks():
    data = np.arange(16.0).reshape(4, 4)
    mask = np.zeros((4, 4), bool)
    mask[0, :2] = True
    bad = data.copy()
    bad[~mask] = 1e6
    assert align_affine(DepthMap(bad, mask), DepthMap(data, mask)) == pytest.approx((1.0, 0.0))


def test_degenerate_fits():
    gt = np.ones((4, 4))
    with pytest.raises(DegenerateFit):
        align_affine(np.full((4, 4), 2.0), gt)
    one = np.zeros((4, 4), bool)
    one[0, 0] = True
    with pytest.raises(DegenerateFit):
        align_affine(np.random.rand(4, 4), gt, one)
    with pytest.raises(DegenerateFit):
        depth_loss(torch.rand(4, 4), torch.ones(4, 4), torch.from_numpy(one))


# -- loss -----------------------------------------------------------------------


def test_loss_zero_for_affine_pred():
    gt = torch.rand(2, 8, 8, dtype=torch.float64)
    assert float(depth_loss(3.0 * gt - 2.0, gt).abs().max()) <= 1e-24


def test_loss_affine_invariance():
    gen = torch.Generator().manual_seed(0)
    pred = torch.rand(8, 8, generator=gen, dtype=torch.float64)
    gt = torch.rand(8, 8, generator=gen, dtype=torch.float64)
    base = float(depth_loss(pred, gt))
    for a, b in [(2.0, 0.0), (0.1, 5.0), (17.0, -3.0)]:
        assert abs(float(depth_loss(a * pred + b, gt)) - base) <= 1e-8


def test_loss_monte_carlo_noise_variance():
    # ground truth spans a wide range so alignment barely shrinks the noise
    rng = np.random.default_rng(0)
    gt = torch.from_numpy(rng.normal(20.0, 10.0, size=(64, 64)))
    pred = gt + torch.from_numpy(rng.standard_normal((64, 64)))
    assert float(depth_loss(pred, gt)) == pytest.approx(1.0, rel=0.1)


def test_loss_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(3)
    pred = torch.rand(8, 8, generator=gen, dtype=torch.float64)
    gt = torch.rand(8, 8, generator=gen, dtype=torch.float64)
    mask = torch.rand(8, 8, generator=gen) > 0.2
    assert relative_error(lambda p: depth_loss(p, gt, mask), pred) <= 1e-4


def test_loss_matches_numpy_alignment():
    rng = np.random.default_rng(4)
    pred, gt = rng.random((12, 12)), rng.random((12, 12))
    s, t = oracles.lstsq_affine(pred, gt)
    expect = np.mean((s * pred + t - gt) ** 2)
    assert float(depth_loss(torch.from_numpy(pred), torch.from_numpy(gt))) == pytest.approx(expect, rel=1e-10)


# -- training -------------------------------------------------------------------


def test_train_estimator_deterministic_and_empty(tmp_path):
    from mvdepth.pipeline.dataset import build_dataset, load_manifest

    manifest = build_dataset(tmp_path / "ds", 2, CameraRig(n_views=4, azimuth_step=90), 16, 0.5, 0)
    records = load_manifest(manifest)
    cfg = DepthEstimatorConfig(base_channels=4, seed=0)
    a = train_estimator(records, 2, 0, cfg, batch_size=4, log_path=tmp_path / "log.jsonl")
    b = train_estimator(records, 2, 0, cfg, batch_size=4)
    assert a["history"] == b["history"] and len(a["history"]) == 2
    assert all(torch.equal(a["model"][k], b["model"][k]) for k in a["model"])
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 2
    net = load_estimator(a)
    assert net.cfg == cfg
    with pytest.raises(EmptyDataset):
        train_estimator([], 1, 0)
