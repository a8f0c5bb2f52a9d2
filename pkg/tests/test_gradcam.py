import numpy as np
import pytest
import torch

from microid import gradcam, model, packfile

from conftest import tiny_model_config

TINY_SHAPE = (8, 16, 16, 1)


def _net(num_classes=3, seed=0):
    return model.SlowFastNet(tiny_model_config(num_classes, TINY_SHAPE, seed=seed))


def _clip(seed=0):
    return np.random.default_rng(seed).random(TINY_SHAPE, dtype=np.float32)


def _flat_map(upsampled, raw_shape=(2, 2, 2)):
    return gradcam.SaliencyMap(
        raw=np.zeros(raw_shape, dtype=np.float32),
        upsampled=np.asarray(upsampled, dtype=np.float32),
        channel_weights=np.zeros(4),
        target_class=0,
        pathway="fast",
    )


# ------------------------------------------------------------- maps

def test_map_shapes_per_pathway():
    net = _net()
    clip = _clip()
    fast = gradcam.compute_gradcam(net, clip, 0, pathway="fast")
    slow = gradcam.compute_gradcam(net, clip, 0, pathway="slow")
    # stem + second stage halve space to /8; slow keeps T/alpha frames
    assert fast.raw.shape == (8, 2, 2)
    assert slow.raw.shape == (2, 2, 2)
    assert fast.upsampled.shape == TINY_SHAPE[:3]
    assert slow.upsampled.shape == TINY_SHAPE[:3]
    assert fast.channel_weights.shape == (4,)   # beta * 16 = 4 channels
    assert slow.channel_weights.shape == (16,)
    assert fast.pathway == "fast" and slow.pathway == "slow"
    assert fast.target_class == 0


def test_map_nonnegative_and_normalized():
    smap = gradcam.compute_gradcam(_net(), _clip(), 1)
    assert smap.raw.min() >= 0
    assert smap.upsampled.min() >= 0
    if smap.raw.max() > 0:
        assert smap.upsampled.max() == pytest.approx(1.0, abs=1e-6)


def test_zero_head_row_gives_zero_map():
    net = _net()
    with torch.no_grad():
        net.head.weight[2].zero_()
    smap = gradcam.compute_gradcam(net, _clip(), 2)
    assert np.all(smap.raw == 0)
    assert np.all(smap.upsampled == 0)
    assert np.all(smap.channel_weights == 0)


def test_raw_map_scales_with_head_row():
    net_a, net_b = _net(seed=4), _net(seed=4)
    with torch.no_grad():
        net_b.head.weight[1].mul_(3.0)
        net_b.head.bias[1].add_(0.7)  # bias must not affect the map
    a = gradcam.compute_gradcam(net_a, _clip(), 1)
    b = gradcam.compute_gradcam(net_b, _clip(), 1)
    np.testing.assert_allclose(b.raw, 3.0 * a.raw, rtol=1e-4, atol=1e-6)
    np.testing.assert_allclose(b.upsampled, a.upsampled, rtol=1e-4, atol=1e-6)


def test_target_class_changes_map():
    net = _net(seed=2)
    clip = _clip(3)
    a = gradcam.compute_gradcam(net, clip, 0)
    b = gradcam.compute_gradcam(net, clip, 1)
    assert not np.allclose(a.raw, b.raw)


def test_channel_weights_match_finite_differences():
    """Pooled gradients, checked against a central difference on the score."""
    net = _net(seed=6)
    clip = _clip(6)
    target = 1
    smap = gradcam.compute_gradcam(net, clip, target, pathway="fast")
    _, acts = gradcam.pathway_activations(net, clip, pathway="fast")
    volume = acts.shape[2] * acts.shape[3] * acts.shape[4]
    eps = 1e-2
    for c in range(acts.shape[1]):
        bump = torch.zeros_like(acts)
        bump[:, c] = eps
        plus, _ = gradcam.pathway_activations(net, clip, pathway="fast", perturb=bump)
        minus, _ = gradcam.pathway_activations(net, clip, pathway="fast", perturb=-bump)
        fd = float((plus[0, target] - minus[0, target]).detach()) / (2 * eps)
        expected = volume * smap.channel_weights[c]
        assert fd == pytest.approx(expected, rel=2e-2, abs=1e-4)


def test_invalid_inputs_rejected():
    net = _net()
    with pytest.raises(ValueError, match="target_class"):
        gradcam.compute_gradcam(net, _clip(), 7)
    with pytest.raises(ValueError, match="pathway"):
        gradcam.final_stage(net, "mid")
    with pytest.raises(ValueError, match="nonnegative"):
        gradcam.SaliencyMap(raw=np.full((1, 1, 1), -1.0),
                            upsampled=np.zeros((2, 2, 2)),
                            channel_weights=np.zeros(1),
                            target_class=0, pathway="fast")


# ------------------------------------------------------------- overlays

def test_overlays_zero_map_reproduces_frames(tmp_path):
    clip = _clip(1)
    smap = _flat_map(np.zeros(TINY_SHAPE[:3]))
    paths = gradcam.render_overlays(smap, clip, tmp_path)
    assert len(paths) == TINY_SHAPE[0]
    import cv2
    frame0 = cv2.imread(str(paths[0]))
    expected = np.repeat(np.round(clip[0] * 255).astype(np.uint8), 3, axis=2)
    np.testing.assert_array_equal(frame0, expected)


def test_overlays_full_map_is_green(tmp_path):
    clip = _clip(2)
    smap = _flat_map(np.ones(TINY_SHAPE[:3]))
    paths = gradcam.render_overlays(smap, clip, tmp_path, max_alpha=1.0)
    import cv2
    frame = cv2.imread(str(paths[3]))
    assert np.all(frame == np.array([0, 255, 0], dtype=np.uint8))


def test_overlays_validate_inputs(tmp_path):
    clip = _clip()
    smap = _flat_map(np.zeros(TINY_SHAPE[:3]))
    with pytest.raises(ValueError, match="max_alpha"):
        gradcam.render_overlays(smap, clip, tmp_path, max_alpha=0.0)
    with pytest.raises(ValueError, match="does not match"):
        gradcam.render_overlays(_flat_map(np.zeros((4, 16, 16))), clip, tmp_path)


# ------------------------------------------------------------- tube mass

def test_tube_mass_fractions():
    vol = np.zeros((3, 10, 10))
    vol[1, 5, 5] = 2.0
    vol[2, 0, 0] = 1.0
    smap = _flat_map(vol)
    on_target = np.array([[5, 5], [5, 5], [0, 0]], dtype=float)
    assert gradcam.saliency_mass_in_tube(smap, on_target, radius=1.0) == 1.0
    off_target = np.full((3, 2), 9.0)
    assert gradcam.saliency_mass_in_tube(smap, off_target, radius=1.0) == 0.0
    partial = np.array([[5, 5], [5, 5], [5, 5]], dtype=float)
    assert gradcam.saliency_mass_in_tube(smap, partial, radius=1.0) == pytest.approx(2 / 3)


def test_tube_mass_zero_map_and_validation():
    zero = _flat_map(np.zeros((3, 10, 10)))
    centers = np.zeros((3, 2))
    assert gradcam.saliency_mass_in_tube(zero, centers, radius=5.0) == 0.0
    with pytest.raises(ValueError, match="centers"):
        gradcam.saliency_mass_in_tube(zero, np.zeros((2, 2)), radius=5.0)
    with pytest.raises(ValueError, match="radius"):
        gradcam.saliency_mass_in_tube(zero, centers, radius=0.0)


def test_dump_raw_roundtrip(tmp_path):
    smap = gradcam.compute_gradcam(_net(), _clip(), 0)
    path = tmp_path / "map.bin"
    gradcam.dump_raw_map(smap, path)
    back = packfile.read_packed(path)
    assert back.shape == smap.raw.shape + (1,)
    np.testing.assert_array_equal(back[..., 0], smap.raw)
