import json

import numpy as np
import pytest
import torch

import oracles
from fd import relative_error
from mvdepth.errors import ResolutionMismatch, ViewCountMismatch
from mvdepth.features import FeatureExtractorConfig, extract, extractor_weights
from mvdepth.losses import (
    LossReport,
    LossWeights,
    angle_alignment_loss,
    content_consistency_loss,
    image_space_loss,
    perceptual_loss,
    style_loss,
    total_loss,
)

TINY = FeatureExtractorConfig()
IDENTITY = FeatureExtractorConfig("IDENTITY")


def bundle(seed, n=4, c=3, h=8, w=8, batch=()):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(*batch, n, c, h, w, generator=gen, dtype=torch.float64)


def px(*values):
    """N single-pixel, single-channel views."""
    return torch.tensor(values, dtype=torch.float64).reshape(len(values), 1, 1, 1)


# -- hand examples ------------------------------------------------------------


def test_style_example_nine():
    r = px(1.0)
    assert float(style_loss(2 * r, r, IDENTITY)) == 9.0


def test_perceptual_example_five():
    assert float(perceptual_loss(px(0.0, 0.0), px(1.0, 2.0), IDENTITY)) == 5.0


@pytest.mark.parametrize("a", [0.0, 0.3, 1.0, -2.5])
def test_content_example_sixteen(a):
    assert float(content_consistency_loss(px(a, a), px(0.0, 2.0), IDENTITY)) == 16.0


@pytest.mark.parametrize("c", [0.0, 0.7, 5.0])
def test_angle_example_sixteen(c):
    assert float(angle_alignment_loss(px(c, c), px(0.0, 2.0))) == 16.0


def test_single_view_consistency_is_zero():
    g, r = bundle(0, n=1), bundle(1, n=1)
    assert float(content_consistency_loss(g, r, TINY)) == 0.0
    assert float(angle_alignment_loss(g, r)) == 0.0


def test_identical_bundles_give_zero():
    g = bundle(2)
    rep = total_loss(g, g.clone(), TINY)
    assert rep == LossReport(0.0, 0.0, 0.0, 0.0, 0.0)


def test_zero_weights_give_zero_total():
    rep = total_loss(bundle(3), bundle(4), TINY, LossWeights(0, 0, 0, 0))
    assert rep.total == 0.0 and rep.percep > 0


# -- oracle fixture -----------------------------------------------------------


def test_terms_match_numpy_oracle_and_default_weights():
    g, r = bundle(10), bundle(11)
    weights = [(w["weight"], w["bias"]) for w in extractor_weights(TINY)]
    fg = [oracles.conv_stack_np(v, weights) for v in g.numpy()]
    fr = [oracles.conv_stack_np(v, weights) for v in r.numpy()]
    # regroup per layer: (N, C, H, W)
    fg = [np.stack([f[layer] for f in fg]) for layer in range(3)]
    fr = [np.stack([f[layer] for f in fr]) for layer in range(3)]
    s = oracles.style_np(fg, fr)
    p = oracles.percep_np(fg, fr)
    c = oracles.content_np(fg, fr)
    a = oracles.angle_np(g.numpy(), r.numpy())
    rep = total_loss(g, r, TINY)
    np.testing.assert_allclose([rep.style, rep.percep, rep.content_cos, rep.angle_cos], [s, p, c, a], rtol=1e-9)
    assert rep.total == pytest.approx(1e9 * s + 100 * p + 1 * c + 10 * a, rel=1e-9)
    assert LossWeights() == LossWeights(1e9, 100.0, 1.0, 10.0)


# -- invariants ---------------------------------------------------------------


def test_nonnegative_on_random_fixtures():
    gen = torch.Generator().manual_seed(0)
    g = torch.rand(1000, 3, 3, 8, 8, generator=gen, dtype=torch.float64)
    r = torch.rand(1000, 3, 3, 8, 8, generator=gen, dtype=torch.float64)
    _, terms = image_space_loss(g, r, TINY)
    for name, t in terms.items():
        assert t.shape == (1000,)
        assert (t >= 0).all(), name


def test_style_and_percep_positive_when_views_differ_identity():
    g = bundle(5)
    r = g.clone()
    r[2, 1, 3, 3] += 0.25
    assert float(perceptual_loss(g, r, IDENTITY)) > 0
    assert float(style_loss(g, r, IDENTITY)) > 0


def test_reversal_invariance_exact():
    g, r = bundle(6, n=5), bundle(7, n=5)
    rev = torch.arange(4, -1, -1)
    assert torch.equal(angle_alignment_loss(g, r), angle_alignment_loss(g[rev], r[rev]))
    assert content_consistency_loss(g, r, TINY) == pytest.approx(
        float(content_consistency_loss(g[rev], r[rev], TINY)), rel=1e-14
    )


def test_weight_linearity():
    g, r = bundle(8), bundle(9)
    w1, w2 = LossWeights(1e9, 100, 1, 10), LossWeights(3.0, 0.5, 7.0, 0.0)
    t1 = total_loss(g, r, TINY, w1).total
    t2 = total_loss(g, r, TINY, w2).total
    assert total_loss(g, r, TINY, w1 + w2).total == pytest.approx(t1 + t2, rel=1e-9)


def test_content_under_identity_equals_angle():
    g, r = bundle(12, n=4), bundle(13, n=4)
    assert torch.equal(content_consistency_loss(g, r, IDENTITY), angle_alignment_loss(g, r))


def test_report_total_relation_exact():
    rep = total_loss(bundle(14), bundle(15), TINY)
    w = LossWeights()
    expect = w.alpha * rep.style + w.beta * rep.percep + w.gamma * rep.content_cos + w.delta * rep.angle_cos
    assert rep.total == pytest.approx(expect, rel=1e-9)
    doc = json.loads(rep.to_json(3))
    assert set(doc) == {"step", "style", "percep", "content_cos", "angle_cos", "total"}


def test_wrap_pair_adds_closing_term():
    g, r = bundle(16, n=4), bundle(17, n=4)
    closing = angle_alignment_loss(g[[3, 0]], r[[3, 0]])
    assert float(angle_alignment_loss(g, r, wrap=True)) == pytest.approx(
        float(angle_alignment_loss(g, r) + closing), rel=1e-12
    )


def test_batched_matches_per_scene():
    g, r = bundle(18, batch=(3,)), bundle(19, batch=(3,))
    batched = style_loss(g, r, TINY)
    for b in range(3):
        assert float(batched[b]) == pytest.approx(float(style_loss(g[b], r[b], TINY)), rel=1e-12)


def test_shape_errors():
    with pytest.raises(ViewCountMismatch):
        perceptual_loss(bundle(0, n=3), bundle(1, n=4), TINY)
    with pytest.raises(ResolutionMismatch):
        perceptual_loss(bundle(0, h=8), bundle(1, h=16), TINY)


# -- gradients ----------------------------------------------------------------

LOSSES = {
    "style": lambda g, r: style_loss(g, r, TINY),
    "percep": lambda g, r: perceptual_loss(g, r, TINY),
    "content": lambda g, r: content_consistency_loss(g, r, TINY),
    "angle": lambda g, r: angle_alignment_loss(g, r),
}


# N=1 consistency terms are an empty sum, so only N >= 2 is informative for them
GRAD_CASES = [(name, n) for name in LOSSES for n in (1, 2, 4) if n > 1 or name in ("style", "percep")]


@pytest.mark.parametrize("name,n", GRAD_CASES)
def test_gradients_match_finite_differences(name, n):
    g, r = bundle(20 + n, n=n), bundle(30 + n, n=n)
    fn = LOSSES[name]
    assert relative_error(lambda v: fn(v, r), g) <= 1e-4


def test_features_are_differentiable_through_loss():
    g = bundle(40).requires_grad_(True)
    total_loss_tensor, _ = image_space_loss(g, bundle(41), TINY)
    total_loss_tensor.backward()
    assert g.grad is not None and g.grad.abs().sum() > 0
    assert len(extract(g.detach(), TINY)) == 3
