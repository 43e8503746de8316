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

"""Tests for the periodic field representation, norms and projections"""

import math
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from rockit.convexint.fields import VOLUME, FourierGrid, PeriodicField, SpaceTimeField, heat_semigroup, \
    holder_time_norm, lebesgue_norm, leray_project, load_snapshot, norms_table, parse_norm, product, \
    save_snapshot, sobolev_norm, spatial_norm, spectral_projector, symmetry_defect, traceless_part, \
    traceless_sym_product, truncate
from conftest import shear

GRID = FourierGrid(16)


class TestFourierGrid:
    def test_rejects_odd_and_small_resolutions(self):
        for resolution in (7, 15, 6, 4.0):
            with pytest.raises(ValueError, match='even integer'):
                FourierGrid(resolution)

    def test_nyquist_zeroed_in_derivative_wavevectors(self):
        n = GRID.resolution
        assert GRID.k[0, n // 2, 0, 0] == -n // 2
        assert GRID.kd[0, n // 2, 0, 0] == 0
        assert GRID.k2[n // 2, 0, 0] == (n // 2) ** 2

    def test_self_conjugate_modes(self):
        """DC and Nyquist combinations give 2^3 self-conjugate wavevectors"""
        assert np.count_nonzero(GRID.self_conjugate()) == 8

    def test_equality_by_resolution(self):
        assert FourierGrid(16) == GRID
        assert FourierGrid(16, workers=2) == GRID
        assert FourierGrid(32) != GRID
        assert len({FourierGrid(16), GRID}) == 1

    def test_forward_normalisation(self):
        """f(x) = sum_k c_k exp(ik.x): a constant field has c_0 equal to its value"""
        c = GRID.forward(np.full(GRID.shape, 2.5))
        assert c[0, 0, 0] == pytest.approx(2.5)
        assert np.allclose(np.delete(c.ravel(), 0), 0)


class TestPeriodicField:
    def test_values_round_trip_through_coefficients(self):
        f = shear(GRID)
        g = PeriodicField(GRID, f.coefficients)
        assert np.allclose(g.values, f.values)
        assert g.rank == 1
        assert g.components == (3,)

    def test_real_fields_are_hermitian(self, rng):
        """Constructing a real field discards the anti-Hermitian part of the coefficients"""
        coefficients = rng.standard_normal(GRID.shape) + 1j * rng.standard_normal(GRID.shape)
        f = PeriodicField(GRID, coefficients)
        assert np.max(np.abs(np.imag(GRID.inverse(f.coefficients, real=False)))) < 1e-12

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ValueError, match='does not match'):
            PeriodicField(GRID, np.zeros((8, 8, 8)))
        with pytest.raises(ValueError, match='unsupported component shape'):
            PeriodicField(GRID, np.zeros((2,) + GRID.shape))

    def test_coefficients_are_read_only(self):
        f = shear(GRID)
        with pytest.raises(ValueError):
            f.coefficients[0, 0, 0, 0] = 1

    def test_field_times_field_is_a_type_error(self):
        f = shear(GRID)
        with pytest.raises(TypeError, match='product'):
            f * f

    def test_complex_scaling_of_real_field(self):
        with pytest.raises(TypeError, match='complex scaling'):
            shear(GRID) * 1j

    def test_arithmetic_checks_rank_and_grid(self):
        f = shear(GRID)
        with pytest.raises(ValueError, match='rank mismatch'):
            f + PeriodicField.zeros(GRID, 0)
        with pytest.raises(ValueError, match='grid mismatch'):
            f + PeriodicField.zeros(FourierGrid(8), 1)
        with pytest.raises(TypeError):
            f + 1.0

    def test_tags_survive_only_when_shared(self):
        a = PeriodicField.zeros(GRID, 2).with_tags('symmetric', 'trace-free')
        b = PeriodicField.zeros(GRID, 2).with_tags('symmetric')
        assert (a + b).tags == {'symmetric'}
        assert (2 * a).tags == a.tags

    def test_random_field_is_band_limited_and_mean_zero(self, rng):
        f = PeriodicField.random(GRID, 1, rng, bandwidth=3)
        assert np.allclose(f.mean(), 0)
        assert np.all(f.coefficients[:, GRID.kmax > 3] == 0)
        assert 0.05 < lebesgue_norm(f, math.inf) < 50

    def test_transpose_and_trace(self, rng):
        S = PeriodicField.random(GRID, 2, rng, bandwidth=2)
        assert np.allclose(S.transpose().values, np.swapaxes(S.values, 0, 1))
        assert np.allclose(S.trace().values, S.values[0, 0] + S.values[1, 1] + S.values[2, 2])
        with pytest.raises(ValueError, match='rank 2'):
            shear(GRID).trace()


class TestSpaceTimeField:
    def test_frame_times_and_lookup(self):
        F = SpaceTimeField.constant(shear(GRID), 0.5, 0.1, 5)
        assert np.allclose(F.times, [0.5, 0.6, 0.7, 0.8, 0.9])
        assert F.index_of(0.7) == 2
        with pytest.raises(ValueError, match='not a frame time'):
            F.index_of(0.75)
        with pytest.raises(ValueError, match='not a frame time'):
            F.index_of(1.0)

    def test_window_and_alignment(self):
        F = SpaceTimeField.constant(shear(GRID), 0.0, 0.1, 10)
        G = F.window(3, 6)
        assert len(G) == 3
        assert G.t0 == pytest.approx(0.3)
        assert len(F.aligned_to(G)) == 3
        with pytest.raises(ValueError, match='does not cover'):
            G.aligned_to(F.window(4))

    def test_rejects_mixed_frames(self):
        with pytest.raises(ValueError, match='one grid and rank'):
            SpaceTimeField([shear(GRID), PeriodicField.zeros(GRID, 0)], 0, 0.1)
        with pytest.raises(ValueError, match='at least one frame'):
            SpaceTimeField([], 0, 0.1)

    def test_arithmetic_requires_matching_frames(self):
        F = SpaceTimeField.constant(shear(GRID), 0.0, 0.1, 4)
        assert np.allclose((F + F)[2].values, 2 * shear(GRID).values)
        with pytest.raises(ValueError, match='same frames'):
            F + F.window(1)


class TestNorms:
    def test_single_mode_norms(self):
        """|sin x_2|_2^2 = (2pi)^3 / 2 and the maximum is 1"""
        f = shear(GRID)
        assert lebesgue_norm(f, 2) == pytest.approx(math.sqrt(VOLUME / 2))
        assert lebesgue_norm(f, math.inf) == pytest.approx(1.0)
        assert lebesgue_norm(f, 1) == pytest.approx(4 * (2 * math.pi) ** 2, rel=0.02)
        assert sobolev_norm(f, 1) == pytest.approx(math.sqrt(2 * VOLUME / 2))
        assert sobolev_norm(f, 0) == pytest.approx(lebesgue_norm(f, 2))

    def test_parse_norm(self):
        assert parse_norm('L2') == ('L', 2.0)
        assert parse_norm('Linf') == ('L', math.inf)
        assert parse_norm('H-1') == ('H', -1.0)
        assert parse_norm('H0.5') == ('H', 0.5)
        for descriptor in ('Hinf', 'W2', 'L'):
            with pytest.raises(ValueError, match='unknown spatial norm'):
                parse_norm(descriptor)

    def test_lebesgue_rejects_small_exponents(self):
        with pytest.raises(ValueError, match='p >= 1'):
            lebesgue_norm(shear(GRID), 0.5)

    def test_holder_norm_of_constant_path_is_its_sup(self):
        f = shear(GRID)
        F = SpaceTimeField.constant(f, 0, 0.1, 4)
        assert holder_time_norm(F, 0.5) == pytest.approx(lebesgue_norm(f, 2))
        assert holder_time_norm(F, 0.5, 'Linf') == pytest.approx(1.0)

    def test_holder_norm_of_linear_path(self):
        """F(t) = t f has increments |f| |t - s| so the longest lag dominates for alpha < 1"""
        f = shear(GRID)
        dt = 0.1
        F = SpaceTimeField([f * (n * dt) for n in range(3)], 0, dt)
        norm = lebesgue_norm(f, 2)
        expected = norm * (2 * dt) ** 0.5 + 2 * dt * norm
        assert holder_time_norm(F, 0.5) == pytest.approx(expected)

    def test_spatial_norm_dispatches(self):
        f = shear(GRID)
        assert spatial_norm(f, 'H1') == sobolev_norm(f, 1)
        assert spatial_norm(f, 'L2') == lebesgue_norm(f, 2)

    def test_norms_table(self):
        table = norms_table({'v': shear(GRID)}, descriptors=('L2', 'Linf'))
        assert list(table.colnames) == ['field', 'L2', 'Linf']
        assert table['Linf'][0] == pytest.approx(1.0)


class TestProjections:
    def test_leray_removes_gradients(self):
        values = np.zeros((3,) + GRID.shape)
        values[0] = -np.sin(GRID.x[0])
        gradient = PeriodicField.from_values(GRID, values)
        assert lebesgue_norm(leray_project(gradient), 2) < 1e-12

    def test_leray_keeps_solenoidal_fields(self):
        f = shear(GRID)
        assert lebesgue_norm(leray_project(f) - f, 2) < 1e-12

    def test_leray_drops_mean(self):
        values = np.ones((3,) + GRID.shape)
        assert lebesgue_norm(leray_project(PeriodicField.from_values(GRID, values)), 2) < 1e-12

    def test_leray_requires_vector(self):
        with pytest.raises(ValueError, match='vector field'):
            leray_project(PeriodicField.zeros(GRID, 0))

    def test_spectral_projectors(self):
        values = np.cos(GRID.x[0]) + np.cos(3 * GRID.x[1]) + 2.0
        f = PeriodicField.from_values(GRID, values)
        assert np.allclose(spectral_projector(f, 'nonzero_mean').values, values - 2.0)
        assert np.allclose(spectral_projector(f, 'low_pass', 1).values, np.cos(GRID.x[0]) + 2.0)
        assert np.allclose(spectral_projector(f, 'high_pass', 2).values, np.cos(3 * GRID.x[1]))
        assert np.allclose(spectral_projector(f, 'high_pass').values, values)
        with pytest.raises(ValueError, match='unknown projector'):
            spectral_projector(f, 'band_pass')

    def test_heat_semigroup_single_mode(self):
        f = shear(GRID)
        assert np.allclose(heat_semigroup(f, 0.3, c=2.0).values, math.exp(-3 * 0.3) * f.values)
        assert heat_semigroup(f, 0) is f
        with pytest.raises(ValueError, match='non-negative'):
            heat_semigroup(f, -1)

    def test_heat_semigroup_property(self, rng):
        f = PeriodicField.random(GRID, 2, rng, bandwidth=6)
        combined = heat_semigroup(f, 0.05, c=1.0)
        composed = heat_semigroup(heat_semigroup(f, 0.02, c=1.0), 0.03, c=1.0)
        assert lebesgue_norm(composed - combined, 2) < 1e-12 * lebesgue_norm(combined, 2)

    def test_parseval_matches_point_quadrature(self, rng):
        f = PeriodicField.random(GRID, 1, rng, bandwidth=6)
        quadrature = math.sqrt(VOLUME * np.mean(np.sum(f.values ** 2, axis=0)))
        assert lebesgue_norm(f, 2) == pytest.approx(quadrature, rel=1e-10)

    def test_truncation_clamps_coefficients(self):
        f = shear(GRID, amplitude=10)
        assert np.allclose(truncate(f, 5).values, 5 * shear(GRID).values)
        assert np.allclose(truncate(f, 16).values, f.values)

    def test_truncation_drops_high_modes(self):
        values = np.cos(GRID.x[0]) + np.cos(3 * GRID.x[0])
        f = PeriodicField.from_values(GRID, values)
        assert np.allclose(truncate(f, 4).values, np.cos(GRID.x[0]))
        with pytest.raises(ValueError, match='at least 1'):
            truncate(f, 0.5)

    @pytest.mark.parametrize('zeta', [1, 2, 5, 16, 64])
    def test_truncation_growth(self, rng, zeta):
        """Retained coefficients are clamped to zeta, so the sup is at most zeta times the retained mode count"""
        f = PeriodicField.random(GRID, 0, rng, bandwidth=8) * 1000
        retained = np.count_nonzero(GRID.k2 <= zeta)
        assert lebesgue_norm(truncate(f, zeta), math.inf) <= zeta * retained
        assert lebesgue_norm(truncate(f, zeta), math.inf) <= 27 * zeta ** 4

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), zeta=st.floats(1, 300), gamma=st.floats(0, 0.99),
           scale=st.floats(0.01, 1000))
    def test_truncation_is_nonexpansive(self, seed, zeta, gamma, scale):
        f = PeriodicField.random(GRID, 1, np.random.default_rng(seed), bandwidth=4) * scale
        assert sobolev_norm(truncate(f, zeta), gamma) <= sobolev_norm(f, gamma) * (1 + 1e-12)


class TestProducts:
    def test_dealiased_product_matches_exact_product(self):
        a = PeriodicField.from_values(GRID, np.sin(GRID.x[0]))
        b = PeriodicField.from_values(GRID, np.cos(GRID.x[0]))
        expected = np.sin(2 * GRID.x[0]) / 2
        assert np.allclose(product(a, b).values, expected)
        assert np.allclose(product(a, b, dealias=False).values, expected)

    def test_dealiasing_removes_aliased_modes(self):
        """cos(6x)^2 on N = 16 aliases 12 onto -4 under collocation"""
        a = PeriodicField.from_values(GRID, np.cos(6 * GRID.x[0]))
        dealiased = product(a, a)
        collocated = product(a, a, dealias=False)
        assert np.allclose(dealiased.values, 0.5)
        assert not np.allclose(collocated.values, 0.5)

    def test_product_kinds(self):
        u = shear(GRID)
        outer = product(u, u, 'outer')
        assert outer.rank == 2
        assert np.allclose(outer.values[0, 0], np.sin(GRID.x[1]) ** 2)
        assert np.allclose(product(u, u, 'dot').values, np.sin(GRID.x[1]) ** 2)
        assert np.allclose(product(outer, u, 'matvec').values[0], np.sin(GRID.x[1]) ** 3)
        assert np.allclose(product(outer, outer, 'contract').values, np.sin(GRID.x[1]) ** 4)
        assert lebesgue_norm(product(u, u, 'cross'), 2) < 1e-12

    def test_product_rank_errors(self):
        u = shear(GRID)
        with pytest.raises(ValueError, match='scalar first argument'):
            product(u, u, 'scale')
        with pytest.raises(ValueError, match='requires ranks'):
            product(u, u, 'matvec')
        with pytest.raises(ValueError, match='unknown product kind'):
            product(u, u, 'wedge')

    def test_traceless_products(self, rng):
        a = PeriodicField.random(GRID, 1, rng, bandwidth=2)
        b = PeriodicField.random(GRID, 1, rng, bandwidth=2)
        S = traceless_sym_product(a, b, symmetric=True)
        asym, trace = symmetry_defect(S)
        assert asym < 1e-12 and trace < 1e-12
        assert S.tags == {'trace-free', 'symmetric'}
        assert 'symmetric' in traceless_sym_product(a, a).tags
        assert 'symmetric' not in traceless_sym_product(a, b).tags

    def test_traceless_part(self, rng):
        S = PeriodicField.random(GRID, 2, rng, bandwidth=2)
        assert symmetry_defect(traceless_part(S))[1] < 1e-12


class TestSnapshots:
    def test_snapshot_preserves_coefficients(self, tmp_path, rng):
        f = PeriodicField.random(GRID, 2, rng, bandwidth=3)
        path = tmp_path / 'f.jfld'
        save_snapshot(path, f)
        g = load_snapshot(path)
        assert g.grid == GRID and g.rank == 2 and g.real
        assert np.array_equal(g.coefficients, f.coefficients)

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / 'junk.jfld'
        path.write_bytes(b'NOPE' + bytes(64))
        with pytest.raises(ValueError, match='not a field snapshot'):
            load_snapshot(path)
        path.write_bytes(b'JF')
        with pytest.raises(ValueError, match='too short'):
            load_snapshot(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / 'f.jfld'
        save_snapshot(path, shear(GRID))
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ValueError, match='payload does not match'):
            load_snapshot(path)
