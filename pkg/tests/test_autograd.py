"""Backpropagated gradients against central finite differences."""

import time

import numpy as np
import pytest

from borntomo.autograd import fidelity_and_gradient, fidelity_and_gradient_multi, fidelity_only
from borntomo.errors import DimensionError
from borntomo.forward import MeasurementSet, recursive_born
from borntomo.greenops import (
    apply_domain_green,
    apply_sensor_green,
    apply_sensor_green_adjoint,
    build_operators,
)

from test_greenops import make_scene


def finite_difference_gradient(G, H, f, u_in, y, K):
    """Central differences of the fidelity, all coordinates in one batched pass.

    Perturbed potentials are stacked along a leading axis; the layer recursion
    broadcasts the incident field across the stack.
    """
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    h = 1e-6 * (1.0 + np.abs(f))
    f_stack = np.repeat(f[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    f_stack[idx, idx] += h
    f_stack[n + idx, idx] -= h

    fs = f_stack if u_in.ndim == 1 else f_stack[:, None, :]
    u = np.broadcast_to(u_in, (2 * n,) + u_in.shape).copy()
    for _ in range(K - 1):
        u = u_in + apply_domain_green(G, u * fs)
    z = apply_sensor_green(H, u * fs)
    fid = 0.5 * np.sum(np.abs(z - y) ** 2, axis=-1)
    if u_in.ndim > 1:  # multiple transmissions: sum the fidelity over them
        fid = fid.reshape(2 * n, -1).sum(axis=1)
    return (fid[:n] - fid[n:]) / (2.0 * h)


def max_relative_error(got, expected):
    """Worst per-coordinate relative error against the FD oracle.

    Central differences at step ~1e-6 carry an absolute noise floor of about
    eps * fidelity / (2h) ~ 1e-9; coordinates smaller than 1e-4 of the
    gradient peak sit at that floor, so they are scored against
    1e-4 * max|fd| (i.e. certified to ~1e-9 * peak in absolute terms).
    """
    scale = np.maximum(np.abs(expected), 1e-4 * np.abs(expected).max())
    return float(np.max(np.abs(got - expected) / scale))


@pytest.fixture(scope="module")
def setup():
    scene = make_scene(nx=8, ny=8, n_sources=4, n_sensors=6)
    return scene, build_operators(scene)


class TestSingleTransmission:
    def test_zero_potential_closed_form(self, setup):
        scene, ops = setup
        rng = np.random.default_rng(20)
        y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        res = fidelity_and_gradient(ops.domain_green, ops.sensor_green,
                                    np.zeros(64), ops.incident[0], y, K=3)
        expected = (apply_sensor_green_adjoint(ops.sensor_green, -y) * np.conj(ops.incident[0])).real
        np.testing.assert_allclose(res.grad, expected, rtol=1e-13)
        assert res.fidelity == pytest.approx(0.5 * np.sum(np.abs(y) ** 2))

    def test_perfect_fit_gives_zero(self, setup):
        scene, ops = setup
        rng = np.random.default_rng(21)
        f = 0.002 * rng.random(64)
        z = recursive_born(ops.domain_green, ops.sensor_green, f, ops.incident[0], K=4).prediction
        res = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], z, K=4)
        assert res.fidelity == 0.0
        np.testing.assert_array_equal(res.grad, np.zeros(64))

    @pytest.mark.parametrize("K", [1, 2, 3, 5])
    def test_matches_finite_differences(self, setup, K):
        scene, ops = setup
        rng = np.random.default_rng(22 + K)
        f = 0.003 * rng.random(64)
        y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        res = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=K)
        fd = finite_difference_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K)
        assert max_relative_error(res.grad, fd) < 1e-5

    def test_k1_equals_first_born_adjoint(self, setup):
        scene, ops = setup
        rng = np.random.default_rng(30)
        f = 0.01 * rng.random(64)
        y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        res = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=1)
        z = apply_sensor_green(ops.sensor_green, ops.incident[0] * f)
        expected = (np.conj(ops.incident[0]) * apply_sensor_green_adjoint(ops.sensor_green, z - y)).real
        np.testing.assert_allclose(res.grad, expected, rtol=1e-12, atol=1e-15)


class TestMultiTransmission:
    def test_single_column_matches_single_call(self, setup):
        scene, ops = setup
        rng = np.random.default_rng(31)
        f = 0.003 * rng.random(64)
        y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        single = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=3)
        one_source = build_operators(
            type(scene)(scene.grid, scene.medium,
                        type(scene.sources)(scene.sources.positions[:1],
                                            amplitude=scene.sources.amplitude,
                                            radius=scene.sources.radius),
                        scene.sensors))
        multi = fidelity_and_gradient_multi(one_source, f, MeasurementSet(y[:, None]), K=3)
        np.testing.assert_allclose(multi.grad, single.grad, rtol=1e-12, atol=1e-16)
        assert multi.fidelity == pytest.approx(single.fidelity, rel=1e-13)

    def test_duplicated_transmission_doubles_gradient(self, setup):
        scene, ops = setup
        rng = np.random.default_rng(32)
        f = 0.003 * rng.random(64)
        y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        u2 = np.stack([ops.incident[0], ops.incident[0]])
        res2 = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, u2, np.stack([y, y]), K=3)
        res1 = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=3)
        np.testing.assert_allclose(res2.grad, 2.0 * res1.grad, rtol=1e-12)
        assert res2.fidelity == pytest.approx(2.0 * res1.fidelity, rel=1e-13)

    def test_four_transmissions_match_finite_differences(self, setup):
        scene, ops = setup
        rng = np.random.default_rng(33)
        f = 0.003 * rng.random(64)
        y = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
        res = fidelity_and_gradient_multi(ops, f, MeasurementSet(y.T), K=2)
        fd = finite_difference_gradient(ops.domain_green, ops.sensor_green, f, ops.incident, y, K=2)
        assert max_relative_error(res.grad, fd) < 1e-5

    def test_dimension_mismatch(self, setup):
        scene, ops = setup
        with pytest.raises(DimensionError):
            fidelity_and_gradient_multi(ops, np.zeros(64), MeasurementSet(np.zeros((6, 3))), K=2)


class TestSweepOfRandomInstances:
    def test_fifty_instances_under_tolerance(self):
        """Randomized grids <= 12x12, K in {1,2,5}, L in {1,4}."""
        rng = np.random.default_rng(40)
        worst = 0.0
        cases = 0
        for trial in range(50):
            nx = int(rng.integers(4, 13))
            scene = make_scene(nx=nx, ny=nx, n_sources=4, n_sensors=5)
            ops = build_operators(scene)
            K = int(rng.choice([1, 2, 5]))
            L = int(rng.choice([1, 4]))
            n = scene.grid.n_cells
            f = 0.003 * rng.random(n)
            u_in = ops.incident[:L] if L > 1 else ops.incident[0]
            y_shape = (L, 5) if L > 1 else (5,)
            y = rng.standard_normal(y_shape) + 1j * rng.standard_normal(y_shape)
            res = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, u_in, y, K=K)
            fd = finite_difference_gradient(ops.domain_green, ops.sensor_green, f, u_in, y, K)
            worst = max(worst, max_relative_error(res.grad, fd))
            cases += 1
        assert cases == 50
        assert worst < 1e-5


class TestCost:
    def test_backward_scales_linearly_in_depth(self):
        scene = make_scene(nx=32, ny=32, n_sources=1, n_sensors=16)
        ops = build_operators(scene)
        rng = np.random.default_rng(41)
        f = 1e-4 * rng.random(scene.grid.n_cells)
        y = rng.standard_normal(16) + 1j * rng.standard_normal(16)

        def timed(K):
            fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=K)
            best = float("inf")
            for _ in range(3):
                t0 = time.perf_counter()
                fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=K)
                best = min(best, time.perf_counter() - t0)
            return best

        assert timed(32) / timed(4) < 12.0

    def test_fidelity_only_matches_full(self):
        scene = make_scene(nx=8, ny=8, n_sources=1, n_sensors=6)
        ops = build_operators(scene)
        rng = np.random.default_rng(42)
        f = 0.003 * rng.random(64)
        y = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        fid, z = fidelity_only(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=3)
        full = fidelity_and_gradient(ops.domain_green, ops.sensor_green, f, ops.incident[0], y, K=3)
        assert fid == full.fidelity
        np.testing.assert_array_equal(z, full.prediction)
