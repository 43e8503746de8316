#
# This file is part of the Robotic Observatory Control Kit (rockit)
#
# rockit is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# rockit is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with rockit.  If not, see <http://www.gnu.org/licenses/>.

"""Tests for the noise operators, Wiener sampling and the stochastic convolution"""

import math
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from rockit.convexint.calculus import differential
from rockit.convexint.fields import FourierGrid, PeriodicField, SpaceTimeField, lebesgue_norm
from rockit.convexint.noise import NoiseModel, WienerPath, apply_G, calibrate_lipschitz, check_growth, \
    hs_norm, increment_gaussianity, integrate_z, lipschitz_in_drift, moment_estimate, nemytskii_basis, \
    deterministic_tail, noise_increment, run_ensemble, strong_order, tail_field, tail_regularity
from conftest import shear

GRID = FourierGrid(8)
MODELS = (
    NoiseModel('linear_scalar', amplitude=0.5),
    NoiseModel('linear_matrix', amplitude=0.3),
    NoiseModel('nemytskii', amplitude=0.5, nonlinearity='tanh', modes=8)
)


def still(grid, dt, count, t0=0.0, field=None):
    field = field if field is not None else PeriodicField.zeros(grid, 1)
    return SpaceTimeField.constant(field, t0, dt, count)


class TestNoiseModel:
    def test_dimensions(self):
        assert [m.dimension for m in MODELS] == [1, 9, 8]

    def test_validation(self):
        with pytest.raises(ValueError, match='unknown noise variant'):
            NoiseModel('additive')
        with pytest.raises(ValueError, match=r'not in \[1, 2\)'):
            NoiseModel(p0=2.0)
        with pytest.raises(ValueError, match=r'not in \[0, 1/2\)'):
            NoiseModel(delta0=0.5)
        with pytest.raises(ValueError, match='Lipschitz constant positive'):
            NoiseModel(lipschitz=0)
        with pytest.raises(ValueError, match='must exceed 3/4'):
            NoiseModel('nemytskii', decay=0.5)
        with pytest.raises(ValueError, match='unknown Nemytskii nonlinearity'):
            NoiseModel('nemytskii', nonlinearity='cube')

    def test_as_dict(self):
        assert MODELS[2].as_dict()['nonlinearity'] == 'tanh'
        assert NoiseModel(**MODELS[1].as_dict()) == MODELS[1]

    def test_nemytskii_basis(self):
        basis = nemytskii_basis(GRID, 7)
        assert basis.kinds[0] == 'cos'
        assert tuple(basis.wavevectors[0]) == (0, 0, 0)
        assert np.all(np.diff(basis.k2) >= 0)
        assert basis.k2[1] == 1
        with pytest.raises(ValueError, match='only supports'):
            nemytskii_basis(GRID, 10 ** 4)

    def test_coefficient_tail(self):
        model = NoiseModel('nemytskii', modes=8)
        assert 0 < model.coefficient_tail(GRID)
        assert model.coefficient_tail(GRID) > NoiseModel('nemytskii', modes=64).coefficient_tail(GRID)


class TestNoiseOperators:
    def test_linear_scalar(self):
        u = shear(GRID)
        assert np.allclose(apply_G(MODELS[0], u, 0).values, 0.5 * u.values)
        assert hs_norm(MODELS[0], u) == pytest.approx(0.5 * lebesgue_norm(u, 2))

    def test_linear_matrix_moves_components(self):
        u = shear(GRID)
        moved = apply_G(MODELS[1], u, 1)
        assert np.allclose(moved.values[1], 0.3 * u.values[0])
        assert np.allclose(moved.values[[0, 2]], 0)

    def test_direction_range(self):
        with pytest.raises(ValueError, match='outside the 1 retained directions'):
            apply_G(MODELS[0], shear(GRID), 1)
        with pytest.raises(ValueError, match='vector fields'):
            apply_G(MODELS[0], PeriodicField.zeros(GRID, 0), 0)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), variant=st.integers(0, 2))
    def test_increment_is_sum_over_directions(self, seed, variant):
        model = MODELS[variant]
        rng = np.random.default_rng(seed)
        u = PeriodicField.random(GRID, 1, rng, 2)
        dW = rng.standard_normal(model.dimension)
        expected = PeriodicField.zeros(GRID, 1)
        for direction, w in enumerate(dW):
            expected = expected + apply_G(model, u, direction) * float(w)
        assert np.allclose(noise_increment(model, u, dW).values, expected.values, atol=1e-12)


class TestWienerPath:
    def test_reproducible(self):
        a = WienerPath(3, 0.01, 50, 2)
        b = WienerPath(3, 0.01, 50, 2)
        assert np.array_equal(a.increments, b.increments)
        assert a.horizon == pytest.approx(0.5)

    def test_spawned_paths_differ(self):
        paths = WienerPath.spawn(0, 3, 0.01, 20, 1)
        assert len(paths) == 3
        assert not np.array_equal(paths[0].increments, paths[1].increments)
        again = WienerPath.spawn(0, 3, 0.01, 20, 1)
        assert np.array_equal(paths[2].increments, again[2].increments)

    def test_brownian_and_coarsening(self):
        path = WienerPath(1, 0.01, 8, 1)
        brownian = path.brownian()
        assert brownian.shape == (9, 1)
        assert brownian[0, 0] == 0
        coarse = path.coarsen(4)
        assert coarse.dt == pytest.approx(0.04)
        assert coarse.n_steps == 2
        assert np.allclose(coarse.brownian()[:, 0], brownian[::4, 0])
        with pytest.raises(ValueError, match='cannot coarsen'):
            path.coarsen(3)

    def test_invalid_paths(self):
        with pytest.raises(ValueError, match='invalid Wiener path'):
            WienerPath(0, 0.01, 0, 1)

    def test_increment_gaussianity(self):
        assert increment_gaussianity(WienerPath(5, 0.01, 4000, 2)).passed

        signs = np.where(np.random.default_rng(2).uniform(size=(4000, 1)) < 0.5, -0.1, 0.1)
        result = increment_gaussianity(WienerPath.from_increments(signs, 0.01))
        assert not result.passed
        assert result.pvalues[0] < 1e-6


class TestIntegrator:
    def test_noise_free_single_mode(self):
        """Without noise the integrator is the exact semigroup e^{-(1 + c) t} on sin x_2"""
        dt, steps, c = 0.05, 20, 1.0
        model = NoiseModel('linear_scalar', amplitude=0.0)
        path = WienerPath(0, dt, steps, 1)
        state = integrate_z(model, still(GRID, dt, steps + 1), c, path, z0=shear(GRID))
        assert len(state.z) == steps + 1
        expected = math.exp(-(1 + c) * steps * dt) * shear(GRID).values
        assert np.allclose(state.z[-1].values, expected)

    def test_history_frames_are_zero(self):
        dt = 0.05
        v = still(GRID, dt, 10, t0=-0.1, field=shear(GRID))
        state = integrate_z(MODELS[0], v, 1.0, WienerPath(0, dt, 7, 1))
        assert state.z.t0 == pytest.approx(-0.1)
        assert all(lebesgue_norm(f, 2) == 0 for f in state.z.frames[:3])
        assert lebesgue_norm(state.z[-1], 2) > 0

    @pytest.mark.parametrize('model', MODELS, ids=lambda m: m.variant)
    def test_solution_stays_solenoidal(self, model, rng):
        dt = 0.02
        v = still(GRID, dt, 11, field=PeriodicField.random(GRID, 1, rng, 2))
        state = integrate_z(model, v, 1.0, WienerPath(1, dt, 10, model.dimension))
        for frame in state.z:
            assert lebesgue_norm(differential(frame, 'div'), 2) < 1e-10
            assert np.allclose(frame.mean(), 0)

    def test_tail_is_added_to_the_drift(self):
        """With v = 0 and z0 = 0 only the tail drives the noise"""
        dt = 0.05
        tail = tail_field(shear(GRID), 1.0, 0.0, dt, 6)
        path = WienerPath(0, dt, 5, 1)
        quiet = integrate_z(MODELS[0], still(GRID, dt, 6), 1.0, path)
        driven = integrate_z(MODELS[0], still(GRID, dt, 6), 1.0, path, tail=tail)
        assert lebesgue_norm(quiet.z[-1], 2) == 0
        assert lebesgue_norm(driven.z[-1], 2) > 0

    def test_input_validation(self):
        dt = 0.05
        v = still(GRID, dt, 5)
        path = WienerPath(0, dt, 4, 1)
        with pytest.raises(ValueError, match='unknown integration scheme'):
            integrate_z(MODELS[0], v, 1.0, path, scheme='heun')
        with pytest.raises(ValueError, match='only implemented for linear_scalar'):
            integrate_z(MODELS[1], v, 1.0, WienerPath(0, dt, 4, 9), scheme='milstein')
        with pytest.raises(ValueError, match='must be positive'):
            integrate_z(MODELS[0], v, 0.0, path)
        with pytest.raises(ValueError, match='does not match field step'):
            integrate_z(MODELS[0], v, 1.0, WienerPath(0, 0.1, 4, 1))
        with pytest.raises(ValueError, match='dimension'):
            integrate_z(MODELS[0], v, 1.0, WienerPath(0, dt, 4, 3))
        with pytest.raises(ValueError, match='after the initial time'):
            integrate_z(MODELS[0], still(GRID, dt, 5, t0=0.1), 1.0, path)
        with pytest.raises(ValueError, match='required'):
            integrate_z(MODELS[0], still(GRID, dt, 9), 1.0, path)


class TestTail:
    def test_tail_field(self):
        u0 = shear(GRID)
        tail = tail_field(u0, 1.0, -0.1, 0.05, 5)
        assert np.allclose(tail[0].values, u0.values)
        assert np.allclose(tail[2].values, u0.values)
        assert np.allclose(tail[4].values, math.exp(-2 * 0.1) * u0.values)

    def test_deterministic_tail(self):
        u0 = shear(GRID)
        assert deterministic_tail(u0, 0.5, -1.0) is u0
        decayed = deterministic_tail(u0, 0.5, 0.4)
        assert np.allclose(decayed.values, math.exp(-1.5 * 0.4) * u0.values)

    def test_rejects_compressible_data(self):
        values = np.zeros((3,) + GRID.shape)
        values[0] = np.sin(GRID.x[0])
        with pytest.raises(ValueError, match='not divergence-free'):
            tail_field(PeriodicField.from_values(GRID, values), 1.0, 0.0, 0.1, 2)

    def test_smooth_data_is_regular_at_zero(self):
        result = tail_regularity(shear(GRID), 1.0, 0.25)
        assert result.passed
        assert result.bound == pytest.approx(-0.6)
        assert len(result.table) == 6
        with pytest.raises(ValueError, match=r'not in \(0, 1/2\)'):
            tail_regularity(shear(GRID), 1.0, 0.5)


class TestMoments:
    def test_parameter_validation(self):
        with pytest.raises(ValueError, match='at least 64 paths'):
            moment_estimate([None] * 10, 8, 0.05, 0.05)
        with pytest.raises(ValueError, match='even integer'):
            moment_estimate([None] * 64, 7, 0.05, 0.05)
        with pytest.raises(ValueError, match='is not below'):
            moment_estimate([None] * 64, 4, 0.1, 0.1)

    def test_windows_and_sweep(self, rng):
        dt = 0.05
        model = NoiseModel('linear_scalar', amplitude=0.5)
        v = still(GRID, dt, 41, field=PeriodicField.random(GRID, 1, rng, 2))
        paths = WienerPath.spawn(7, 64, dt, 40, 1)
        states = run_ensemble(lambda p: integrate_z(model, v, 1.0, p), paths)
        sweep = {c: run_ensemble(lambda p, c=c: integrate_z(model, v, c, p), paths) for c in (1.0, 4.0)}

        result = moment_estimate(states, 8, 0.05, 0.05, window=0.5, burn_in=1.0, sweep=sweep)
        assert result.window_starts[0] == 0
        assert all(e > 0 for e in result.estimates)
        assert len(result.stderr) == len(result.estimates)
        assert result.sweep_c == [1.0, 4.0]
        assert result.sweep_slope is not None and result.sweep_slope < 0
        assert result.sweep_bound == pytest.approx(8 * (0.05 - 0.5) + 0.2)
        assert result.as_dict()['sweep'][0]['c'] == 1.0

    def test_run_ensemble_keeps_order(self):
        assert run_ensemble(lambda x: x * x, range(10), workers=4) == [x * x for x in range(10)]


class TestStrongOrder:
    def test_exponential_euler_has_order_one_half(self):
        result = strong_order('euler', paths=256, seed=1)
        assert result.predicted == 0.5
        assert result.order == pytest.approx(0.5, abs=0.15)
        assert np.all(np.diff(result.errors) < 0)

    def test_milstein_has_order_one(self):
        euler = strong_order('euler', paths=256, seed=1)
        milstein = strong_order('milstein', paths=256, seed=1)
        assert milstein.predicted == 1.0
        assert milstein.order == pytest.approx(1.0, abs=0.2)
        assert milstein.errors[-1] < euler.errors[-1]

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match='unknown integration scheme'):
            strong_order('rk4')


class TestLipschitz:
    def test_lipschitz_in_drift(self, rng):
        dt = 0.05
        model = NoiseModel('linear_scalar', amplitude=0.5)
        v1 = still(GRID, dt, 11, field=PeriodicField.random(GRID, 1, rng, 2))
        v2 = v1 * 1.5
        paths = WienerPath.spawn(3, 8, dt, 10, 1)
        estimate = lipschitz_in_drift(model, v1, v2, 1.0, paths)
        assert estimate.ratio > 0
        assert estimate.difference_moment > 0
        with pytest.raises(ValueError, match='coincide'):
            lipschitz_in_drift(model, v1, v1, 1.0, paths)

    def test_growth_condition_and_calibration(self, rng):
        model = NoiseModel('linear_scalar', amplitude=0.5, lipschitz=1.0)
        ok, value = check_growth(model, GRID, rng, samples=20)
        assert ok and 0 < value <= 1.0

        tight = NoiseModel('linear_scalar', amplitude=0.5, lipschitz=1e-3)
        assert not check_growth(tight, GRID, rng, samples=5)[0]
        calibrated = calibrate_lipschitz(tight, GRID, rng, samples=20)
        assert calibrated.lipschitz > tight.lipschitz
        assert calibrated.variant == tight.variant
