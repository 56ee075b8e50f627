import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semcomm.autodiff import Adam, Tensor, check_gradients, no_grad, softmax_channel
from semcomm.autodiff.nn import cast_module, set_all_parameters
from semcomm.errors import ConfigError, ContractError, GeometryError, ShapeError
from semcomm.labelmap import LabelMap
from semcomm.segmentation.losses import (
    ce_loss,
    dice_loss,
    focal_loss,
    focal_loss_from_probs,
    one_hot,
    seg_total_loss,
)
from semcomm.segmentation.net import (
    Backbone,
    Bottleneck,
    ChannelAttention,
    PyramidBranch,
    PyramidPooling,
    SegHead,
    SegNet,
    SegNetConfig,
    SpatialAttention,
    argmax_labels,
    residual_block_forward,
    segment,
    shape_chain,
)
from semcomm.segmentation.train import SegTrainConfig, moving_average, train_seg_step, train_segmentation
from semcomm.synthetic import make_segmentation_dataset, to_unit_range

GRAD_CONFIG = dict(num_classes=3, base_channels=4, height=32, width=32, ppm_bins=(1, 2, 3, 4))


def small_net(seed=0, **kw):
    cfg = dict(num_classes=3, base_channels=4, height=64, width=64, seed=seed)
    cfg.update(kw)
    return SegNet(SegNetConfig(**cfg))


class TestConfig:
    def test_full_scale_chain(self):
        chain = dict(shape_chain(SegNetConfig.full_scale(), 512, 512))
        assert chain["input"] == (3, 512, 512)
        assert chain["conv2_x"] == (256, 128, 128)
        assert chain["conv5_x"] == (2048, 64, 64)
        assert chain["pyramid"] == (4096, 64, 64)
        assert chain["head"] == (21, 512, 512)

    @pytest.mark.parametrize("h,w", [(48, 48), (64, 96), (256, 512)])
    def test_full_scale_symbolic_ratios(self, h, w):
        chain = dict(shape_chain(SegNetConfig.full_scale(height=h, width=w), h, w))
        assert chain["conv5_x"] == (2048, h // 8, w // 8)
        assert chain["pyramid"] == (2 * 2048, h // 8, w // 8)

    def test_toy_chain_matches_forward(self):
        cfg = SegNetConfig(num_classes=3, base_channels=16, height=64, width=64)
        chain = dict(shape_chain(cfg, 64, 64))
        assert chain["conv5_x"] == (512, 8, 8)
        net = SegNet(cfg).eval()
        x = Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32))
        with no_grad():
            feats = net.backbone(x)
            pyr = net.pyramid(feats)
            out = net(x)
        assert feats.shape[1:] == chain["conv5_x"]
        assert pyr.shape[1:] == chain["pyramid"]
        assert out.shape[1:] == chain["head"]

    def test_invariants(self):
        with pytest.raises(ConfigError):
            SegNetConfig(num_classes=1)
        with pytest.raises(ConfigError):
            SegNetConfig(ppm_bins=(2, 1))
        with pytest.raises(ConfigError):
            SegNetConfig(ppm_bins=())
        with pytest.raises(GeometryError):
            SegNetConfig(height=60)
        # largest bin must fit the 4x4 feature map of a 32x32 input
        with pytest.raises(GeometryError):
            SegNetConfig(height=32, width=32)
        SegNetConfig(**GRAD_CONFIG)

    def test_forward_rejects_bad_extent(self):
        net = small_net()
        with pytest.raises(GeometryError):
            net(Tensor(np.zeros((1, 3, 60, 64), dtype=np.float32)))


class TestResidualBlock:
    def test_zero_weights_pass_skip(self, rng):
        block = Bottleneck(rng, 8, 2, 8)
        set_all_parameters(block, 0.0)
        x = rng.standard_normal((2, 8, 5, 5)).astype(np.float32)
        y = residual_block_forward(Tensor(x), block)
        np.testing.assert_array_equal(y.data, np.maximum(x, 0))

    def test_conv_kind_stride_two_halves(self, rng):
        block = Bottleneck(rng, 8, 4, 16, stride=2, kind="conv")
        y = block(Tensor(rng.standard_normal((1, 8, 8, 6)).astype(np.float32)))
        assert y.shape == (1, 16, 4, 3)

    def test_identity_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            Bottleneck(rng, 8, 2, 16)

    def test_block_gradient(self):
        for seed in range(3):
            r = np.random.default_rng(seed)
            block = cast_module(Bottleneck(r, 4, 2, 8, stride=2, kind="conv"), np.float64)
            x = Tensor(r.standard_normal((2, 4, 6, 6)), requires_grad=True)
            probe = r.standard_normal((2, 8, 3, 3))
            err = check_gradients(lambda: (block(x) * Tensor(probe)).sum(), [x, *block.parameters()], h=1e-6)
            assert err < 1e-3


class TestBackbone:
    def test_toy_output(self):
        bb = Backbone(np.random.default_rng(0), 16, (1, 1, 1, 1)).eval()
        with no_grad():
            y = bb(Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
        assert y.shape == (1, 512, 8, 8)

    def test_zero_weights_finite(self):
        bb = Backbone(np.random.default_rng(0), 4, (1, 1, 1, 1))
        set_all_parameters(bb, 0.0)
        y = bb(Tensor(np.ones((2, 3, 32, 32), dtype=np.float32)))
        assert np.all(np.isfinite(y.data))


class TestPyramid:
    def test_doubles_channels(self, rng):
        pp = PyramidPooling(rng, 64, (1, 2, 3, 6))
        y = pp(Tensor(rng.standard_normal((1, 64, 8, 8)).astype(np.float32)))
        assert y.shape == (1, 128, 8, 8)

    def test_original_features_kept(self, rng):
        x = rng.standard_normal((1, 16, 6, 6)).astype(np.float32)
        y = PyramidPooling(rng, 16)(Tensor(x))
        np.testing.assert_array_equal(y.data[:, :16], x)

    def test_constant_input_constant_branches(self, rng):
        pp = PyramidPooling(rng, 16)
        for branch in pp.branches:
            branch.spatial_att.conv.weight.data[:] = 0.0
        y = pp(Tensor(np.full((1, 16, 6, 6), 0.7, dtype=np.float32))).data[0, 16:]
        spread = y.max(axis=(1, 2)) - y.min(axis=(1, 2))
        assert np.all(spread < 1e-6)

    def test_bin_exceeding_extent(self, rng):
        branch = PyramidBranch(rng, 8, 6, 4, 7)
        with pytest.raises(GeometryError):
            branch(Tensor(np.zeros((1, 8, 5, 5), dtype=np.float32)))


class TestAttention:
    def test_channel_squeeze_is_mean(self, rng):
        ca = ChannelAttention(rng, 1, 1)
        ca.fc1.weight.data[:] = 1.0
        ca.fc1.bias.data[:] = 0.0
        ca.fc2.weight.data[:] = 1.0
        ca.fc2.bias.data[:] = 0.0
        u = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32))
        # with unit weights the gate is sigmoid(relu(Z)), so Z = 2.5 is recoverable
        gate = float(ca.weights(u).data.reshape(-1)[0])
        assert math.log(gate / (1 - gate)) == pytest.approx(2.5, abs=1e-5)

    def test_channel_zero_weights_halve(self, rng):
        ca = ChannelAttention(rng, 8)
        set_all_parameters(ca, 0.0)
        u = rng.standard_normal((2, 8, 3, 3)).astype(np.float32)
        np.testing.assert_allclose(ca(Tensor(u)).data, u / 2, rtol=1e-6)

    def test_spatial_zero_weights_halve(self, rng):
        sa = SpatialAttention(rng)
        set_all_parameters(sa, 0.0)
        u = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
        np.testing.assert_allclose(sa(Tensor(u)).data, u / 2, rtol=1e-6)

    def test_spatial_constant_input_stats(self, rng):
        from semcomm.autodiff.ops import channel_max, channel_mean

        u = Tensor(np.full((1, 5, 4, 4), 1.5, dtype=np.float32))
        np.testing.assert_array_equal(channel_max(u).data, 1.5)
        np.testing.assert_allclose(channel_mean(u).data, 1.5, rtol=1e-7)

    def test_gates_open_interval(self):
        ca = ChannelAttention(np.random.default_rng(1), 6, 2)
        sa = SpatialAttention(np.random.default_rng(2))
        for seed in range(100):
            r = np.random.default_rng(seed)
            u = Tensor(r.standard_normal((1, 6, 5, 5)))
            for gate in (ca.weights(u).data, sa.weights(u).data):
                assert np.all(gate > 0) and np.all(gate < 1)

    def test_attention_gradients(self):
        for seed in range(3):
            r = np.random.default_rng(seed)
            ca = cast_module(ChannelAttention(r, 4, 2), np.float64)
            sa = cast_module(SpatialAttention(r, 3), np.float64)
            x = Tensor(r.standard_normal((1, 4, 5, 5)), requires_grad=True)
            probe = Tensor(r.standard_normal((1, 4, 5, 5)))
            err = check_gradients(lambda: (sa(ca(x)) * probe).sum(), [x, *ca.parameters(), *sa.parameters()],
                                  h=1e-6)
            assert err < 1e-3


class TestHead:
    def test_output_extent(self, rng):
        head = SegHead(rng, 16, 5)
        y = head(Tensor(rng.standard_normal((1, 16, 4, 6)).astype(np.float32)), 32, 48)
        assert y.shape == (1, 5, 32, 48)

    def test_forced_class_zero(self, rng):
        head = SegHead(rng, 16, 2)
        head.classify.conv.weight.data[:] = 0.0
        head.classify.conv.bias.data[:] = [10.0, -10.0]
        y = head(Tensor(rng.standard_normal((1, 16, 4, 4)).astype(np.float32)), 32, 32)
        assert not argmax_labels(y.data).any()

    def test_head_gradient(self):
        r = np.random.default_rng(0)
        head = cast_module(SegHead(r, 16, 3), np.float64)
        x = Tensor(r.standard_normal((2, 16, 3, 3)), requires_grad=True)
        probe = Tensor(r.standard_normal((2, 3, 24, 24)))
        assert check_gradients(lambda: (head(x, 24, 24) * probe).sum(), [x, *head.parameters()], h=1e-6) < 1e-3


def test_full_network_gradients():
    """Whole network plus composite loss, float64, 20 seeds at 3x32x32."""
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        net = cast_module(SegNet(SegNetConfig(seed=seed, **GRAD_CONFIG)), np.float64)
        x = Tensor(r.standard_normal((1, 3, 32, 32)), requires_grad=True)
        y = r.integers(0, 3, (1, 32, 32))
        params = net.parameters()
        # the kinks of relu/max-pool under batch norm call for a small step
        worst = max(worst, check_gradients(lambda: seg_total_loss(net(x), y), [x, params[0], params[len(params) // 2],
                                                                              params[-1]],
                                           h=1e-6, max_entries=10, rng=r))
    assert worst < 1e-3


class TestSegment:
    def test_dims_and_oracle(self, rng):
        net = small_net()
        image = rng.uniform(0, 255, (3, 64, 64)).astype(np.float32)
        lm = segment(image, net)
        assert isinstance(lm, LabelMap)
        assert (lm.height, lm.width) == (64, 64)
        net.eval()
        with no_grad():
            logits = net(Tensor(image / np.float32(127.5) - np.float32(1.0))).data
        for i in range(64):
            for j in range(64):
                col = list(logits[:, i, j])
                assert lm.labels[i, j] == col.index(max(col))

    def test_ties_go_low(self):
        logits = np.zeros((3, 2, 2))
        logits[1, 0, 0] = logits[2, 0, 0] = 1.0
        labels = argmax_labels(logits)
        assert labels[0, 0] == 1 and labels[1, 1] == 0

    @given(seed=st.integers(0, 2**16), shift=st.floats(-50, 50), scale=st.floats(0.01, 100))
    def test_monotone_invariance(self, seed, shift, scale):
        logits = np.random.default_rng(seed).standard_normal((4, 5, 5))
        base = argmax_labels(logits)
        np.testing.assert_array_equal(argmax_labels(logits * scale + shift), base)
        np.testing.assert_array_equal(argmax_labels(np.exp(logits)), base)
        np.testing.assert_array_equal(argmax_labels(np.tanh(logits / 3)), base)


def _ce_oracle(logits, target):
    m, h, w = logits.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            z = logits[:, i, j]
            total -= z[target[i, j]] - math.log(sum(math.exp(v) for v in z))
    return total / (h * w)


class TestLosses:
    def test_ce_perfect(self):
        target = np.array([[0, 1], [2, 3]])
        logits = one_hot(target, 4, np.float64) * 200.0
        assert float(ce_loss(Tensor(logits), target).data) == pytest.approx(0.0, abs=1e-12)

    def test_ce_uniform(self):
        val = float(ce_loss(Tensor(np.zeros((4, 3, 3))), np.zeros((3, 3), dtype=int)).data)
        assert val == pytest.approx(math.log(4), abs=1e-5)

    def test_ce_oracle(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            logits = r.standard_normal((5, 4, 4)) * 3
            target = r.integers(0, 5, (4, 4))
            assert float(ce_loss(Tensor(logits), target).data) == pytest.approx(_ce_oracle(logits, target), abs=1e-5)

    def test_ce_label_range(self):
        with pytest.raises(ContractError):
            ce_loss(Tensor(np.zeros((3, 2, 2))), np.full((2, 2), 3))

    def test_dice_examples(self):
        y = np.array([[[1.0, 1.0]], [[0.0, 0.0]]])
        assert float(dice_loss(Tensor(y), y).data) == pytest.approx(0.0, abs=1e-6)
        assert float(dice_loss(Tensor(1 - y), y).data) == pytest.approx(1.0, abs=1e-6)
        x = np.array([1.0, 0.0]).reshape(2, 1, 1)
        half = np.array([0.5, 0.5]).reshape(2, 1, 1)
        assert float(dice_loss(Tensor(half), x).data) == pytest.approx(0.5, abs=1e-6)

    @given(seed=st.integers(0, 2**16))
    def test_dice_range(self, seed):
        r = np.random.default_rng(seed)
        probs = softmax_channel(Tensor(r.standard_normal((3, 4, 4)))).data
        val = float(dice_loss(Tensor(probs), one_hot(r.integers(0, 3, (4, 4)), 3, np.float64)).data)
        assert 0.0 <= val <= 1.0

    def test_focal_single_pixel(self):
        probs = np.array([0.5, 0.5]).reshape(2, 1, 1)
        assert focal_loss_from_probs(probs, np.zeros((1, 1), int), 0.25, 2.0) == pytest.approx(
            0.25 * 0.25 * math.log(2), abs=1e-9)
        assert 0.25 * 0.25 * math.log(2) == pytest.approx(0.043322, abs=1e-6)
        logits = Tensor(np.zeros((2, 1, 1)))
        assert float(focal_loss(logits, np.zeros((1, 1), int), 0.25, 2.0).data) == pytest.approx(0.043322, abs=1e-6)

    def test_focal_perfect(self):
        target = np.array([[0, 1], [1, 0]])
        assert focal_loss_from_probs(one_hot(target, 2, np.float64), target) == pytest.approx(0.0, abs=1e-12)

    @given(seed=st.integers(0, 2**16))
    def test_focal_reduces_to_ce(self, seed):
        r = np.random.default_rng(seed)
        logits = Tensor(r.standard_normal((4, 5, 5)) * 2)
        target = r.integers(0, 4, (5, 5))
        assert float(focal_loss(logits, target, alpha=1.0, gamma=0.0).data) == pytest.approx(
            float(ce_loss(logits, target).data), abs=1e-6)

    def test_focal_bad_parameters(self):
        logits = Tensor(np.zeros((2, 1, 1)))
        with pytest.raises(ContractError):
            focal_loss(logits, np.zeros((1, 1), int), gamma=-1.0)
        with pytest.raises(ContractError):
            focal_loss(logits, np.zeros((1, 1), int), alpha=0.0)

    def test_total_components(self, rng):
        logits = Tensor(rng.standard_normal((3, 6, 6)))
        target = rng.integers(0, 3, (6, 6))
        ce = float(ce_loss(logits, target).data)
        dice = float(dice_loss(softmax_channel(logits), one_hot(target, 3, np.float64)).data)
        focal = float(focal_loss(logits, target).data)
        assert float(seg_total_loss(logits, target, 1, 0, 0).data) == pytest.approx(ce, abs=1e-12)
        assert float(seg_total_loss(logits, target).data) == pytest.approx(ce + dice + focal, abs=1e-6)
        assert float(seg_total_loss(logits, target, 0.5, 2.0, 3.0).data) == pytest.approx(
            0.5 * ce + 2 * dice + 3 * focal, abs=1e-6)

    def test_total_perfect(self):
        target = np.array([[0, 1, 2], [2, 1, 0]])
        logits = Tensor(one_hot(target, 3, np.float64) * 200.0)
        for weights in [(1, 1, 1), (2, 0.5, 3), (0, 1, 0)]:
            assert float(seg_total_loss(logits, target, *weights).data) == pytest.approx(0.0, abs=1e-6)

    def test_total_negative_weight(self):
        with pytest.raises(ContractError):
            seg_total_loss(Tensor(np.zeros((2, 1, 1))), np.zeros((1, 1), int), -1.0)

    def test_loss_gradients(self):
        for seed in range(5):
            r = np.random.default_rng(seed)
            logits = Tensor(r.standard_normal((2, 4, 3, 3)), requires_grad=True)
            target = r.integers(0, 4, (2, 3, 3))
            for fn in (lambda: ce_loss(logits, target),
                       lambda: dice_loss(softmax_channel(logits), one_hot(target, 4, np.float64)),
                       lambda: focal_loss(logits, target),
                       lambda: seg_total_loss(logits, target)):
                assert check_gradients(fn, [logits], h=1e-6) < 1e-3


class TestTraining:
    def _data(self, n=4):
        images, labels = make_segmentation_dataset(n, 48, seed=3)
        return to_unit_range(images), labels.astype(np.int64)

    def test_zero_lr_is_noop(self):
        images, labels = self._data()
        net = small_net(height=48, width=48)
        before = [p.data.copy() for p in net.parameters()]
        opt = Adam(net.parameters(), 0.0)
        l1 = train_seg_step(net, opt, images, labels)
        l2 = train_seg_step(net, opt, images, labels)
        assert l1 == l2
        for b, p in zip(before, net.parameters()):
            np.testing.assert_array_equal(b, p.data)

    def test_returns_pre_update_loss(self):
        images, labels = self._data()
        net = small_net(height=48, width=48)
        with no_grad():
            expected = float(seg_total_loss(net(Tensor(images)), labels).data)
        loss = train_seg_step(net, Adam(net.parameters(), 1e-2), images, labels)
        assert loss == pytest.approx(expected, rel=1e-6)

    def test_batch_mismatch(self):
        images, labels = self._data()
        net = small_net(height=48, width=48)
        with pytest.raises(ValueError):
            train_seg_step(net, Adam(net.parameters(), 1e-3), images, labels[:2])

    def test_deterministic_traces(self):
        images, labels = self._data(6)
        cfg = SegTrainConfig(steps=6, batch_size=2, lr=1e-3, seed=5)
        traces = [train_segmentation(small_net(height=48, width=48), images, labels, cfg) for _ in range(2)]
        assert traces[0] == traces[1]
        assert len(traces[0]) == 6

    def test_moving_average(self):
        np.testing.assert_allclose(moving_average([1, 2, 3, 4, 5], 2), [1.5, 2.5, 3.5, 4.5])
        assert moving_average([1, 2], 3).size == 0
