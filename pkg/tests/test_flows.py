"""Radial layers and stacks: forward, log-det, inverse, densities, sampling."""

import numpy as np
import pytest

from flowrefine.flows import (
    RadialFlowStack,
    RadialLayer,
    RefinedPosterior,
    flow_forward,
    flow_inverse,
    init_near_identity,
    inv_softplus,
    radial_forward,
    radial_inverse,
    refined_log_density,
    sample_refined,
    softplus,
)
from flowrefine.laplace import GaussianPosterior
from flowrefine.metrics import mmd
from flowrefine.rng import RngStream


def random_layer(rng, d):
    return RadialLayer(
        z0=rng.standard_normal(d),
        raw_alpha=float(rng.normal()),
        raw_beta=float(rng.normal()),
    )


def random_stack(rng, d, n_layers):
    return RadialFlowStack([random_layer(rng, d) for _ in range(n_layers)])


def fd_log_det(layer, z, eps=1e-6):
    d = z.size
    jac = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = eps
        jac[:, i] = (radial_forward(layer, z + e)[0] - radial_forward(layer, z - e)[0]) / (2 * eps)
    sign, logdet = np.linalg.slogdet(jac)
    assert sign > 0
    return logdet


class TestParameterization:
    def test_invertibility_by_construction(self, rng):
        # beta > -alpha for any raw values, including extreme ones
        for raw_a, raw_b in [(-20, -20), (-20, 20), (20, -20), (5, 5), (0, 0)]:
            layer = RadialLayer(np.zeros(2), raw_a, raw_b)
            assert layer.alpha > 0
            assert layer.beta > -layer.alpha

    def test_softplus_roundtrip(self):
        for y in [1e-6, 0.5, 1.0, 30.0]:
            assert softplus(inv_softplus(y)) == pytest.approx(y, rel=1e-12)


class TestRadialForward:
    def test_identity_layer(self, rng):
        layer = RadialLayer.identity_like(rng.standard_normal(3), alpha=1.0, beta=0.0)
        z = rng.standard_normal(3)
        y, ld = radial_forward(layer, z)
        assert np.array_equal(y, z)
        assert ld == 0.0

    def test_hand_evaluated_1d(self):
        # d=1, alpha=1, beta=1, z0=0, z=1: r=1, h=1/2 -> y=1.5, ld=log(1.25)
        layer = RadialLayer.identity_like(np.zeros(1), alpha=1.0, beta=1.0)
        y, ld = radial_forward(layer, np.array([1.0]))
        assert y[0] == pytest.approx(1.5)
        assert ld == pytest.approx(np.log(1.25))

    def test_log_det_matches_fd_jacobian(self, rng):
        for _ in range(30):
            d = int(rng.integers(1, 6))
            layer = random_layer(rng, d)
            z = 2.0 * rng.standard_normal(d)
            _, ld = radial_forward(layer, z)
            fd = fd_log_det(layer, z)
            assert abs(ld - fd) < 1e-5 * max(abs(fd), 1e-3)

    def test_r_zero_continuity(self):
        layer = RadialLayer(np.zeros(3), raw_alpha=0.3, raw_beta=1.2)
        limit = 3 * np.log(1.0 + layer.beta / layer.alpha)
        direction = np.array([1.0, 0.0, 0.0])
        previous_gap = np.inf
        for eps in [1e-3, 1e-6, 1e-9]:
            _, ld = radial_forward(layer, eps * direction)
            gap = abs(ld - limit)
            assert gap < previous_gap
            previous_gap = gap
        _, ld_at_center = radial_forward(layer, np.zeros(3))
        assert ld_at_center == pytest.approx(limit, rel=1e-12)


class TestRadialInverse:
    def test_roundtrip(self, rng):
        for _ in range(30):
            d = int(rng.integers(1, 6))
            layer = random_layer(rng, d)
            z = 3.0 * rng.standard_normal(d)
            y, _ = radial_forward(layer, z)
            back = radial_inverse(layer, y)
            assert np.max(np.abs(back - z)) < 1e-9

    def test_identity_layer(self, rng):
        layer = RadialLayer.identity_like(np.ones(2), alpha=2.0, beta=0.0)
        y = rng.standard_normal(2)
        assert np.max(np.abs(radial_inverse(layer, y) - y)) < 1e-12

    def test_center_fixed_point(self, rng):
        layer = random_layer(rng, 4)
        back = radial_inverse(layer, layer.z0.copy())
        assert np.array_equal(back, layer.z0)


class TestFlowForward:
    def test_empty_stack(self, rng):
        z = rng.standard_normal(3)
        y, ld = flow_forward(RadialFlowStack([]), z)
        assert np.array_equal(y, z)
        assert ld == 0.0

    def test_two_identity_layers(self, rng):
        stack = RadialFlowStack(
            [RadialLayer.identity_like(rng.standard_normal(2), beta=0.0) for _ in range(2)]
        )
        z = rng.standard_normal(2)
        y, ld = flow_forward(stack, z)
        assert np.array_equal(y, z)
        assert ld == 0.0

    def test_composition_log_det_is_per_layer_sum(self, rng):
        stack = random_stack(rng, 3, 3)
        z = rng.standard_normal(3)
        _, total = flow_forward(stack, z)
        acc = 0.0
        point = z
        for layer in stack.layers:
            point, ld = radial_forward(layer, point)
            acc += ld
        assert total == pytest.approx(acc, rel=1e-12)

    def test_stack_roundtrip(self, rng):
        stack = random_stack(rng, 4, 3)
        z = rng.standard_normal((10, 4))
        y, ld_fwd = flow_forward(stack, z)
        back, ld_inv = flow_inverse(stack, y)
        assert np.max(np.abs(back - z)) < 1e-9
        assert np.max(np.abs(ld_inv - ld_fwd)) < 1e-9

    def test_dimension_mismatch(self, rng):
        stack = random_stack(rng, 3, 1)
        with pytest.raises(ValueError):
            flow_forward(stack, rng.standard_normal(4))


def _base(rng, d=2):
    a = 0.4 * rng.standard_normal((d, d))
    return GaussianPosterior(mean=rng.standard_normal(d), cov=a @ a.T + np.eye(d))


class TestInitNearIdentity:
    def test_density_matches_base_at_mean(self, rng):
        base = _base(rng)
        stack = init_near_identity(2, 4, base, RngStream(2))
        rp = RefinedPosterior(base, stack)
        lref = refined_log_density(rp, base.mean)
        lbase = base.log_density(base.mean)
        assert abs(np.exp(lref - lbase) - 1.0) < 1e-2

    def test_small_displacement(self, rng):
        base = _base(rng)
        stack = init_near_identity(2, 3, base, RngStream(3))
        z = base.sample(200, RngStream(4))
        y, _ = flow_forward(stack, z)
        ratio = np.linalg.norm(y - z, axis=1) / np.maximum(
            np.linalg.norm(z - base.mean, axis=1), 1e-12
        )
        assert ratio.max() < 0.01

    def test_deterministic(self, rng):
        base = _base(rng)
        s1 = init_near_identity(2, 3, base, RngStream(5))
        s2 = init_near_identity(2, 3, base, RngStream(5))
        for a, b in zip(s1.layers, s2.layers):
            assert np.array_equal(a.z0, b.z0)
            assert a.raw_alpha == b.raw_alpha and a.raw_beta == b.raw_beta


class TestRefinedDensity:
    def test_empty_stack_is_base(self, rng):
        base = _base(rng)
        rp = RefinedPosterior(base, RadialFlowStack([]))
        pts = rng.standard_normal((7, 2))
        assert np.max(np.abs(refined_log_density(rp, pts) - base.log_density(pts))) < 1e-12

    def test_change_of_variables_identity(self, rng):
        base = _base(rng)
        stack = random_stack(rng, 2, 3)
        rp = RefinedPosterior(base, stack)
        z = base.sample(50, RngStream(6))
        y, ld = flow_forward(stack, z)
        lhs = refined_log_density(rp, y)
        rhs = base.log_density(z) - ld
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_quadrature_normalization(self, rng):
        # refined density must integrate to 1; 2D grid over a 6-sigma box
        base = GaussianPosterior(mean=np.array([0.2, -0.1]),
                                 cov=np.array([[0.5, 0.1], [0.1, 0.4]]))
        stack = RadialFlowStack(
            [
                RadialLayer(np.array([0.5, 0.0]), raw_alpha=0.5, raw_beta=1.5),
                RadialLayer(np.array([-0.3, 0.4]), raw_alpha=0.0, raw_beta=0.5),
            ]
        )
        rp = RefinedPosterior(base, stack)
        sd = np.sqrt(np.diag(base.cov))
        span = 6.0 * sd.max() + 2.0
        n = 220
        g1 = np.linspace(base.mean[0] - span, base.mean[0] + span, n)
        g2 = np.linspace(base.mean[1] - span, base.mean[1] + span, n)
        mesh = np.stack(np.meshgrid(g1, g2, indexing="ij")).reshape(2, -1).T
        dens = np.exp(refined_log_density(rp, mesh)).reshape(n, n)
        mass = np.trapezoid(np.trapezoid(dens, g2, axis=1), g1)
        assert abs(mass - 1.0) < 1e-2


class TestSampleRefined:
    def test_identity_flow_matches_base_distribution(self, rng):
        base = _base(rng)
        stack = RadialFlowStack(
            [RadialLayer.identity_like(base.mean, beta=0.0) for _ in range(2)]
        )
        rp = RefinedPosterior(base, stack)
        s_ref, _ = sample_refined(rp, 2000, RngStream(7))
        s_base = base.sample(2000, RngStream(8))
        # same distribution: the unbiased MMD stays within its null scale
        assert mmd(s_ref, s_base, clamp=False) < 4.0 / 2000

    def test_empty(self, rng):
        rp = RefinedPosterior(_base(rng), RadialFlowStack([]))
        s, ld = sample_refined(rp, 0, RngStream(1))
        assert s.shape == (0, 2) and ld.shape == (0,)

    def test_reproducible(self, rng):
        base = _base(rng)
        rp = RefinedPosterior(base, random_stack(rng, 2, 2))
        s1, l1 = sample_refined(rp, 20, RngStream(9))
        s2, l2 = sample_refined(rp, 20, RngStream(9))
        assert np.array_equal(s1, s2) and np.array_equal(l1, l2)

    def test_log_density_matches_inversion_route(self, rng):
        base = _base(rng)
        rp = RefinedPosterior(base, random_stack(rng, 2, 3))
        s, ld_direct = sample_refined(rp, 30, RngStream(10))
        ld_invert = refined_log_density(rp, s)
        assert np.max(np.abs(ld_direct - ld_invert)) < 1e-9


class TestIdentityStackNoOp:
    def test_downstream_quantities_unchanged(self, rng):
        base = _base(rng, d=3)
        stack = init_near_identity(3, 5, base, RngStream(11))
        rp = RefinedPosterior(base, stack)
        s_ref, ld_ref = sample_refined(rp, 100, RngStream(12))
        s_base = base.sample(100, RngStream(12))
        assert np.max(np.abs(s_ref - s_base)) < 1e-9
        assert np.max(np.abs(ld_ref - base.log_density(s_base))) < 1e-9


class TestPersistenceHooks:
    def test_raw_parameter_roundtrip(self, rng):
        stack = random_stack(rng, 3, 4)
        raw = stack.raw_parameters()
        back = RadialFlowStack.from_raw_parameters(raw, 3, 4)
        assert np.array_equal(back.raw_parameters(), raw)

    def test_dim_mismatch_rejected(self, rng):
        base = _base(rng, d=2)
        with pytest.raises(ValueError):
            RefinedPosterior(base, random_stack(rng, 3, 1))
