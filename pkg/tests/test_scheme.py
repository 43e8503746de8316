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


"""Tests for the convex integration iteration"""

import math
import numpy as np
import pytest
from rockit.convexint.calculus import differential, inverse_divergence
from rockit.convexint.constants import IterationMode
from rockit.convexint.fields import VOLUME, FourierGrid, PeriodicField, SpaceTimeField, lebesgue_norm, \
    symmetry_defect, traceless_sym_product
from rockit.convexint.jets import JetParameters, build_direction_set, build_profiles, synthesize_jet
from rockit.convexint.schedule import EnergyProfile, ScheduleConfig, ToyRow
from rockit.convexint.scheme import STRESS_TERMS, IterationSettings, amplitudes, assemble_stress, \
    build_perturbation, energy_gap, initial_state, iterate, moment_norm, nonuniqueness_experiment, \
    oscillation_ratios, oscillation_stress, pde_residual, residual_convergence, run
from conftest import shear

GRID = FourierGrid(8)

# lambda = 2 jets need N >= 3 n_* lambda = 30, below the resolution rule of 8 n_* lambda
SMALL = FourierGrid(32)
FACTOR = 3

ROWS = (
    {'epsilon': 0.0625, 'ell': 0.25, 'lambda': 2, 'zeta': 2, 'r_perp': 0.5, 'r_par': 0.75, 'mu': 1, 'theta': 0.01},
    {'epsilon': 0.03125, 'ell': 0.2, 'lambda': 2, 'zeta': 4, 'r_perp': 0.5, 'r_par': 0.75, 'mu': 1,
     'kappa': 0.1, 'theta': 0.0025}
)


def toy(rows=ROWS, cauchy=False):
    return ScheduleConfig('toy', [ToyRow.from_json(r) for r in rows], energy=EnergyProfile(1.0), cauchy=cauchy)


def settings(mode, **args):
    return IterationSettings(mode, SMALL, 0.05, horizon=0.25, resolution_factor=FACTOR, under_resolved=True,
                             aliasing_guard=None, **args)


class TestSettings:
    def test_validation(self):
        with pytest.raises(ValueError, match='unknown iteration mode'):
            IterationSettings(7, GRID, 0.1)
        with pytest.raises(ValueError, match='must be positive'):
            IterationSettings(IterationMode.Deterministic, GRID, 0)
        with pytest.raises(ValueError, match='not a multiple'):
            IterationSettings(IterationMode.Deterministic, GRID, 0.3, horizon=1.0)
        with pytest.raises(ValueError, match='require a noise model'):
            IterationSettings(IterationMode.Stochastic, GRID, 0.1)
        with pytest.raises(ValueError, match='at least one path'):
            IterationSettings(IterationMode.Cauchy, GRID, 0.1, paths=0)

    def test_resolution_rule(self):
        with pytest.raises(ValueError, match='below the resolution rule'):
            IterationSettings(IterationMode.Deterministic, SMALL, 0.05, horizon=0.25, resolution_factor=FACTOR)
        s = IterationSettings(IterationMode.Deterministic, SMALL, 0.05, horizon=0.25, resolution_factor=FACTOR,
                              under_resolved=True)
        assert s.resolution_factor == FACTOR
        assert IterationSettings(IterationMode.Deterministic, SMALL, 0.05, horizon=0.25).resolution_factor == 8

    def test_deterministic_drops_noise(self):
        s = IterationSettings(IterationMode.Deterministic, GRID, 0.1, paths=4, noise=object())
        assert s.noise is None
        assert s.paths == 1
        assert s.steps_to_horizon == 10


class TestResidual:
    def test_manufactured_solution(self):
        """v = sin t (sin x_2, 0, 0) solves the equation with div R = (cos t + sin t)(sin x_2, 0, 0)"""
        dt = 0.01
        u = shear(GRID)
        base = inverse_divergence(u)
        times = dt * np.arange(11)
        v = SpaceTimeField([u * math.sin(t) for t in times], 0.0, dt)
        R = SpaceTimeField([base * (math.cos(t) + math.sin(t)) for t in times], 0.0, dt)
        zbar = SpaceTimeField.constant(PeriodicField.zeros(GRID, 1), 0.0, dt, len(times))

        report = pde_residual(v, R, zbar, 1.0, skip=2)
        assert len(report.norms) == 7
        assert report.sup < 1e-7
        assert report.relative < 1e-8

    def test_wrong_stress(self):
        dt = 0.01
        u = shear(GRID)
        v = SpaceTimeField([u * math.sin(t) for t in dt * np.arange(6)], 0.0, dt)
        R = SpaceTimeField.constant(PeriodicField.zeros(GRID, 2), 0.0, dt, 6)
        zbar = SpaceTimeField.constant(PeriodicField.zeros(GRID, 1), 0.0, dt, 6)
        assert pde_residual(v, R, zbar, 1.0).relative == pytest.approx(1.0)

    def test_too_short(self):
        zero = SpaceTimeField.constant(PeriodicField.zeros(GRID, 1), 0.0, 0.1, 4)
        with pytest.raises(ValueError, match='at least 5 frames'):
            pde_residual(zero, zero, zero, 1.0)


class TestEnergyGap:
    def test_constant(self):
        zero = SpaceTimeField.constant(PeriodicField.zeros(GRID, 1), -0.2, 0.1, 5)
        gap = energy_gap(EnergyProfile(1.0), zero, zero, 0.5, 0.25)
        assert np.allclose(gap.theta, 0.5 / (3 * VOLUME))
        assert np.allclose(gap.delta, 0.75)
        assert np.allclose(gap.kinetic, 0)

    def test_kinetic_energy(self):
        v = SpaceTimeField.constant(shear(GRID, 0.1), 0.0, 0.1, 3)
        zero = SpaceTimeField.constant(PeriodicField.zeros(GRID, 1), 0.0, 0.1, 3)
        gap = energy_gap(EnergyProfile(2.0), [v, v], [zero, zero], 0.0)
        kinetic = 0.01 * VOLUME / 2
        assert 1 < kinetic < 2
        assert np.allclose(gap.kinetic, kinetic)
        assert np.allclose(gap.theta, (2 - kinetic) / (3 * VOLUME))
        with pytest.raises(ValueError, match='energy gap theta'):
            energy_gap(EnergyProfile(1.0), [v, v], [zero, zero], 0.0)

    def test_energy_too_small(self):
        v = SpaceTimeField.constant(shear(GRID, 2.0), 0.0, 0.1, 3)
        zero = SpaceTimeField.constant(PeriodicField.zeros(GRID, 1), 0.0, 0.1, 3)
        with pytest.raises(ValueError, match='energy profile is too small'):
            energy_gap(EnergyProfile(1.0), v, zero, 0.0)
        with pytest.raises(ValueError, match='equal size'):
            energy_gap(EnergyProfile(1.0), [v], [], 0.0)


class TestAmplitudes:
    def test_decomposition(self, rng):
        directions = build_direction_set()
        R = inverse_divergence(PeriodicField.random(GRID, 1, rng, 2)) * 0.1
        moments = np.linspace(0.5, 1.5, len(directions))
        amp = amplitudes(R, 0.05, 0.01, directions, moments)

        total = np.zeros((3, 3) + GRID.shape)
        for i in range(len(directions)):
            xi = np.asarray(directions.vector(i), dtype=float)
            total += moments[i] * amp.a[i] ** 2 * np.einsum('i,j->ij', xi, xi).reshape(3, 3, 1, 1, 1)
        expected = amp.rho * np.eye(3).reshape(3, 3, 1, 1, 1) - R.values
        assert np.max(np.abs(total - expected)) < 1e-10 * np.max(amp.rho)
        assert np.all(amp.rho >= amp.rho_formula)

    def test_zero_stress(self):
        directions = build_direction_set()
        amp = amplitudes(PeriodicField.zeros(GRID, 2), 0.1, 0.01, directions)
        assert np.allclose(amp.rho, 0.12)
        assert amp.clamped == 0

    def test_invalid_moments(self):
        directions = build_direction_set()
        with pytest.raises(ValueError, match='must be positive'):
            amplitudes(PeriodicField.zeros(GRID, 2), 0.1, 0.01, directions, np.zeros(len(directions)))


@pytest.fixture(scope='module')
def frame():
    """Jets and amplitudes of one frame at lambda = 2 on the 32 grid"""
    params = JetParameters(0.5, 0.75, 2, 1, SMALL, t=0.1)
    directions = build_direction_set(params, require_disjoint=False)
    profiles = build_profiles()
    jets = [synthesize_jet(i, params, profiles, directions, resolution_factor=FACTOR, aliasing_guard=None)
            for i in range(len(directions))]
    a = amplitudes(PeriodicField.zeros(SMALL, 2), 0.1, 0.01, directions).a
    return jets, a


class TestPerturbation:
    def test_parts(self, frame):
        jets, a = frame
        p = build_perturbation(a, jets, 1.0)
        W_p = sum(a[i] * jet.W.values for i, jet in enumerate(jets))
        assert np.allclose(p.principal.values, W_p)
        assert np.allclose((p.principal + p.corrector).values, p.W_pc.values)

        scale = lebesgue_norm(p.w, 2)
        assert lebesgue_norm(differential(p.w, 'div'), 2) < 1e-10 * scale
        assert np.allclose(p.w.values, (p.principal + p.corrector + p.temporal).values)

    def test_cutoff_scaling(self, frame):
        jets, a = frame
        full = build_perturbation(a, jets, 1.0)
        half = build_perturbation(a, jets, 1.0, chi=0.5)
        assert np.allclose(half.principal.values, 0.5 * full.principal.values)
        assert np.allclose(half.corrector.values, 0.5 * full.corrector.values)
        assert np.allclose(half.temporal.values, 0.25 * full.temporal.values)

    def test_stress_terms(self, frame):
        jets, a = frame
        da = np.zeros_like(a)
        p = build_perturbation(a, jets, 1.0, da=da)
        Y = shear(SMALL, 0.1)
        d = PeriodicField.zeros(SMALL, 1)
        terms = assemble_stress(p, oscillation_stress(a, da, jets, 1.0, p), Y, d, PeriodicField.zeros(SMALL, 2),
                                traceless_sym_product(Y, Y, dealias=False), 1.0)

        assert set(terms) == set(STRESS_TERMS)
        for name in ('osc_t', 'lin_z', 'noise', 'mol', 'cut'):
            assert lebesgue_norm(terms[name], math.inf) < 1e-12, name
        for name, term in terms.items():
            scale = max(1.0, lebesgue_norm(term, math.inf))
            assert max(symmetry_defect(term)) < 1e-10 * scale, name

    def test_oscillation_ratios(self, frame):
        jets, a = frame
        da = np.zeros_like(a)
        p = build_perturbation(a, jets, 1.0, da=da)
        terms = oscillation_stress(a, da, jets, 1.0, p)
        ratios = oscillation_ratios(terms)
        assert set(ratios) == {'disc', 'osc_int'}
        scale = lebesgue_norm(terms['osc_x'], 2) + lebesgue_norm(terms['osc_t'], 2)
        assert ratios['disc'] == pytest.approx(lebesgue_norm(terms['disc'], 2) / scale)
        assert ratios['osc_int'] == pytest.approx(lebesgue_norm(terms['osc_int'], 2) / scale)

        # Thick tubes on this grid meet, so the interaction term is present
        assert ratios['osc_int'] > 0

        zero = PeriodicField.zeros(SMALL, 2)
        assert oscillation_ratios({name: zero for name in terms}) == {'disc': 0.0, 'osc_int': 0.0}


def test_moment_norm():
    norms = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert moment_norm(norms, 1, 1) == pytest.approx(3.0)
    assert moment_norm(norms, 2, 2) == pytest.approx(math.sqrt(10))
    assert moment_norm(norms, 2, 100) == pytest.approx(math.sqrt(10))


class TestIteration:
    def test_initial_level(self):
        s = settings(IterationMode.Deterministic)
        state = initial_state(toy(), s, steps=1)
        assert state.q == 1
        assert state.wiener is None
        assert state.t0 < 0
        assert state.times[-1] == pytest.approx(0.25)
        assert max(lebesgue_norm(f, 2) for f in state.paths[0].R) == 0

    def test_deterministic_step(self):
        s = settings(IterationMode.Deterministic)
        state, report = iterate(initial_state(toy(), s, steps=1), toy(), s)
        assert state.q == 2
        assert state.ledger == [report]
        assert report.mode == 'deterministic'
        assert report.checks['cancellation'] < 1e-10
        assert report.checks['symmetry'] < 1e-8
        assert report.checks['clamped_points'] == 0
        assert report.checks['overlap'] > 0
        assert report.checks['disc_ratio'] >= 0
        assert report.checks['osc_int_ratio'] > 0
        assert 0 < report.checks['aliasing'] < 1
        assert report.checks['residual_without_disc'] >= 0
        assert min(report.theta) > 0
        assert report.Lambda == pytest.approx(1.0)

        # The perturbation is the whole velocity of the first level
        assert max(lebesgue_norm(f, 2) for f in state.paths[0].v) > 0
        assert report.as_dict()['q'] == 2

    def test_cutoff_keeps_initial_velocity(self):
        s = settings(IterationMode.Cauchy)
        config = toy(cauchy=True)
        state = run(config, s, 1)
        report = state.ledger[-1]
        assert report.checks['initial_velocity'] == 0
        assert report.checks['cutoff_preserved'] == 0
        assert lebesgue_norm(state.paths[0].v[state.paths[0].v.index_of(0.25)], 2) > 0

    def test_run_needs_rows(self):
        with pytest.raises(ValueError, match='need 2 schedule rows'):
            run(toy(ROWS[:1]), settings(IterationMode.Deterministic), 1)

    def test_preconditions(self):
        with pytest.raises(ValueError, match='cut-off'):
            nonuniqueness_experiment(toy(), settings(IterationMode.Deterministic), 0.05, 0.1)
        with pytest.raises(ValueError, match='at least two time steps'):
            residual_convergence(toy(), settings(IterationMode.Deterministic), [0.05])
