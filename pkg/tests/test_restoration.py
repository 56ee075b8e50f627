import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semcomm.autodiff import Tensor, check_gradients
from semcomm.autodiff.nn import cast_module, set_all_parameters
from semcomm.errors import ConfigError, ContractError, GeometryError, ShapeError
from semcomm.labelmap import LabelMap
from semcomm.restoration.gan import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    discriminator_forward,
    generator_forward,
    receptive_field,
    restore,
)
from semcomm.restoration.losses import D_EPS, cycle_loss, gan_loss, identity_loss, total_gan_loss
from semcomm.restoration.train import CycleState, cycle_train_step, train_cycle
from semcomm.synthetic import make_domain_pair, to_unit_range


def tiny_gen(seed=0, **kw):
    return Generator(GeneratorConfig(base_filters=kw.pop("base_filters", 4), seed=seed, **kw))


class TestGenerator:
    def test_preserves_extent(self, rng):
        g = tiny_gen()
        y = generator_forward(Tensor(rng.uniform(-1, 1, (1, 3, 64, 64)).astype(np.float32)), g)
        assert y.shape == (1, 3, 64, 64)

    def test_unbatched(self, rng):
        y = tiny_gen()(Tensor(rng.uniform(-1, 1, (3, 32, 48)).astype(np.float32)))
        assert y.shape == (3, 32, 48)

    @given(seed=st.integers(0, 1000), scale=st.floats(0.1, 100.0))
    def test_output_range(self, seed, scale):
        r = np.random.default_rng(seed)
        g = tiny_gen(seed % 7)
        for p in g.parameters():
            p.data = (p.data * scale).astype(np.float32)
        y = g(Tensor((r.standard_normal((1, 3, 16, 16)) * scale).astype(np.float32))).data
        assert np.all(y >= -1) and np.all(y <= 1)

    def test_indivisible_extent(self):
        with pytest.raises(GeometryError):
            tiny_gen()(Tensor(np.zeros((1, 3, 24, 16), dtype=np.float32)))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(levels=0)

    def test_gradients(self):
        for seed in range(3):
            r = np.random.default_rng(seed)
            g = cast_module(tiny_gen(seed), np.float64)
            x = Tensor(r.uniform(-1, 1, (1, 3, 16, 16)), requires_grad=True)
            probe = Tensor(r.standard_normal((1, 3, 16, 16)))
            params = g.parameters()
            err = check_gradients(lambda: (g(x) * probe).sum(), [x, params[0], params[len(params) // 2], params[-1]],
                                  h=1e-6, max_entries=12, rng=r)
            assert err < 1e-3


class TestDiscriminator:
    def test_patch_grid(self, rng):
        d = Discriminator(DiscriminatorConfig())
        y = discriminator_forward(Tensor(rng.uniform(-1, 1, (2, 3, 64, 64)).astype(np.float32)), d)
        assert y.shape == (2, 1, 2, 2)

    def test_zero_weights_half(self, rng):
        d = Discriminator(DiscriminatorConfig())
        set_all_parameters(d, 0.0)
        y = d(Tensor(rng.uniform(-1, 1, (1, 3, 64, 64)).astype(np.float32)))
        np.testing.assert_array_equal(y.data, 0.5)

    @given(seed=st.integers(0, 1000))
    def test_open_interval(self, seed):
        r = np.random.default_rng(seed)
        d = Discriminator(DiscriminatorConfig(seed=seed))
        y = d(Tensor(r.standard_normal((1, 3, 32, 32)).astype(np.float32))).data
        assert np.all(y > 0) and np.all(y < 1)

    @pytest.mark.parametrize("h,w", [(16, 32), (48, 64), (32, 40)])
    def test_geometry(self, h, w):
        d = Discriminator(DiscriminatorConfig())
        with pytest.raises(GeometryError):
            d(Tensor(np.zeros((1, 3, h, w), dtype=np.float32)))

    def test_receptive_field(self):
        assert receptive_field(1, 1) == 3
        assert receptive_field(2, 1) == 7
        for layers in range(1, 6):
            assert receptive_field(layers, 2) > receptive_field(layers, 1)
        # dilation-2 recurrence: r <- 2(r - 1) + 5
        assert receptive_field(5, 2) == 125

    def test_gradients(self):
        r = np.random.default_rng(0)
        d = cast_module(Discriminator(DiscriminatorConfig(layers=3, filters=4)), np.float64)
        x = Tensor(r.uniform(-1, 1, (1, 3, 16, 16)), requires_grad=True)
        probe = Tensor(r.standard_normal((1, 1, 2, 2)))
        assert check_gradients(lambda: (d(x) * probe).sum(), [x, *d.parameters()], h=1e-6,
                               max_entries=12, rng=r) < 1e-3


class TestLosses:
    def test_discriminator_at_half(self):
        half = Tensor(np.full((1, 1, 2, 2), 0.5))
        assert float(gan_loss(half, half, "discriminator").data) == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_generator_limit(self):
        assert float(gan_loss(None, Tensor(np.ones(4)), "generator").data) == pytest.approx(0.0, abs=1e-6)

    def test_oracle(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            real, fake = r.uniform(0.01, 0.99, (2, 1, 3, 3)), r.uniform(0.01, 0.99, (2, 1, 3, 3))
            d_expect = -np.mean(np.log(real)) - np.mean(np.log(1 - fake))
            g_expect = -np.mean(np.log(fake))
            assert float(gan_loss(Tensor(real), Tensor(fake), "discriminator").data) == pytest.approx(d_expect,
                                                                                                      abs=1e-6)
            assert float(gan_loss(None, Tensor(fake), "generator").data) == pytest.approx(g_expect, abs=1e-6)

    def test_clamped(self):
        val = float(gan_loss(Tensor(np.zeros(3)), Tensor(np.ones(3)), "discriminator").data)
        assert val == pytest.approx(-2 * math.log(D_EPS), rel=1e-3)

    def test_generator_monotone(self):
        means = np.linspace(0.05, 0.95, 19)
        vals = [float(gan_loss(None, Tensor(np.full(4, m)), "generator").data) for m in means]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_bad_role(self):
        with pytest.raises(ContractError):
            gan_loss(None, Tensor(np.ones(2) / 2), "critic")
        with pytest.raises(ContractError):
            gan_loss(None, Tensor(np.ones(2) / 2), "discriminator")

    def test_cycle_examples(self, rng):
        x, y = rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 4, 4))
        assert float(cycle_loss(Tensor(x), Tensor(x), Tensor(y), Tensor(y)).data) == 0.0
        assert float(cycle_loss(Tensor(x), Tensor(x + 0.5), Tensor(y), Tensor(y)).data) == pytest.approx(0.5)
        a = cycle_loss(Tensor(x), Tensor(x + 0.2), Tensor(y), Tensor(y - 0.3))
        b = cycle_loss(Tensor(y), Tensor(y - 0.3), Tensor(x), Tensor(x + 0.2))
        assert float(a.data) == pytest.approx(float(b.data))

    def test_identity_examples(self, rng):
        x, y = rng.standard_normal((3, 4, 4)), rng.standard_normal((3, 4, 4))
        assert float(identity_loss(Tensor(y), Tensor(y), Tensor(x), Tensor(x)).data) == 0.0
        assert float(identity_loss(Tensor(y + 0.1), Tensor(y), Tensor(x), Tensor(x)).data) == pytest.approx(0.1)

    @given(seed=st.integers(0, 2**16))
    def test_non_negative(self, seed):
        r = np.random.default_rng(seed)
        a, b, c, d = (Tensor(r.standard_normal((3, 2, 2))) for _ in range(4))
        assert float(cycle_loss(a, b, c, d).data) >= 0
        assert float(identity_loss(a, b, c, d).data) >= 0

    def test_shape_mismatch(self):
        a, b = Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((3, 2, 3)))
        with pytest.raises(ShapeError):
            cycle_loss(a, b, a, a)
        with pytest.raises(ShapeError):
            identity_loss(a, a, a, b)

    def test_total(self, rng):
        with pytest.raises(ContractError):
            total_gan_loss(1.0, 1.0, 1.0, lam=0.0)
        assert total_gan_loss(0.0, 0.0, 0.0) == 0.0
        for _ in range(20):
            g, c, i, lam = rng.uniform(0, 3, 4) + 0.1
            assert total_gan_loss(g, c, i, lam) == pytest.approx(g + lam * c + 0.5 * lam * i, abs=1e-6)
            assert total_gan_loss(g, c, i, lam, 2.0) == pytest.approx(g + lam * c + 2.0 * i, abs=1e-6)


def _toy_state(lr=1e-3):
    return CycleState.create(GeneratorConfig(base_filters=4), DiscriminatorConfig(layers=4, filters=8), lr=lr)


class TestTraining:
    def test_zero_lr_bit_exact(self):
        xs, ys = make_domain_pair(4, 16, seed=1)
        state = _toy_state(lr=0.0)
        nets = (state.g, state.f, state.dx, state.dy)
        before = [[p.data.copy() for p in n.parameters()] for n in nets]
        rec = cycle_train_step(to_unit_range(xs), to_unit_range(ys), state)
        assert set(rec) == {"total", "adversarial", "cycle", "identity", "discriminator"}
        for snapshot, net in zip(before, nets):
            for b, p in zip(snapshot, net.parameters()):
                np.testing.assert_array_equal(b, p.data)

    def test_deterministic(self):
        xs, ys = make_domain_pair(6, 16, seed=2)
        runs = [train_cycle(_toy_state(), to_unit_range(xs), to_unit_range(ys), 3, 2, seed=4) for _ in range(2)]
        assert runs[0] == runs[1]

    def test_early_discriminator_envelope(self):
        xs, ys = make_domain_pair(8, 16, seed=3)
        trace = train_cycle(_toy_state(), to_unit_range(xs), to_unit_range(ys), 5, 4)
        # the record sums both discriminators, each bounded by 4 ln 2 early on
        for rec in trace:
            assert 0 < rec["discriminator"] < 2 * (4 * math.log(2) + 0.5)


class TestRestore:
    def test_zero_weights_mid_gray(self):
        g = tiny_gen()
        set_all_parameters(g, 0.0)
        lm = LabelMap(np.random.default_rng(0).integers(0, 3, (32, 32)), 3)
        out = restore(lm, g)
        assert out.shape == (3, 32, 32)
        np.testing.assert_array_equal(out, 127.5)

    def test_rgb_input_dims(self, rng):
        out = restore(rng.uniform(0, 255, (3, 16, 32)), tiny_gen())
        assert out.shape == (3, 16, 32)
        assert out.min() >= 0 and out.max() <= 255

    def test_geometry_propagates(self):
        with pytest.raises(GeometryError):
            restore(LabelMap(np.zeros((20, 32), dtype=np.uint8), 2), tiny_gen())
