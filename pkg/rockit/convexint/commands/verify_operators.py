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

"""Verification suite for the field and calculus operators"""

import math
import numpy as np
from astropy.table import Table
from rockit.convexint import validation
from rockit.convexint.calculus import MollifierSpec, bilinear_antidivergence, differential, inverse_divergence, \
    mollify_space
from rockit.convexint.command import Command
from rockit.convexint.fields import VOLUME, FourierGrid, PeriodicField, heat_semigroup, lebesgue_norm, \
    leray_project, product, sobolev_norm, spectral_projector, symmetry_defect, truncate
from .schema_helpers import grid_schema, resolution_sweep_schema

# Distance of the analytic test fields from their complex singularity
REFINEMENT_SHIFT = 1.1

# Semigroup times s, t checked against s + t
HEAT_TIMES = (0.01, 0.02)


def _relative(difference, reference):
    scale = lebesgue_norm(reference, 2)
    return lebesgue_norm(difference, 2) / scale if scale > 0 else lebesgue_norm(difference, 2)


def _quadrature_l2(f):
    """L2 norm from grid point values, without Parseval"""
    values = f.values.reshape((-1,) + f.grid.shape)
    return float(np.sqrt(VOLUME * np.mean(np.sum(values ** 2, axis=0))))


def bilinear_refinement_errors(resolutions, workers=1):
    """
    Relative L2 error of div B(v, S) against S v - mean(S v) for analytic, non band-limited v and S

    Point values of the product are exact, so the error is set by how well
    each grid resolves the inputs and falls geometrically with resolution.
    """
    errors = []
    for resolution in resolutions:
        grid = FourierGrid(resolution, workers=workers)
        x1, x2, x3 = grid.x
        v = PeriodicField.from_values(grid, np.array([
            1 / (REFINEMENT_SHIFT + np.cos(x2)),
            1 / (REFINEMENT_SHIFT + np.cos(x3)),
            1 / (REFINEMENT_SHIFT + np.sin(x1))]))

        h = 1 / (REFINEMENT_SHIFT + np.sin(x1 + x2 + x3))
        g = 1 / (REFINEMENT_SHIFT + np.cos(x1 - x3))
        zero = np.zeros(grid.shape)
        S = spectral_projector(PeriodicField.from_values(grid, np.array([
            [h, g, zero],
            [g, -h, zero],
            [zero, zero, zero]])), 'nonzero_mean')

        expected = spectral_projector(product(S, v, 'matvec', dealias=False), 'nonzero_mean')
        errors.append(_relative(differential(bilinear_antidivergence(v, S), 'div') - expected, expected))
    return errors


class VerifyOperators(Command):
    """
    Verification suite for the field and calculus operators

    Example block:
    {
        "type": "VerifyOperators",
        "grid": 32,
        "seed": 0,
        "samples": 4,
        "bandwidth": 4, # Optional: defaults to grid / 8
        "zeta": [1, 4, 16, 64, 256],
        "gamma": 0.5,
        "ell": 0.25, # Optional: mollification scale in (0, 1/2)
        "refinement": [16, 32, 64], # Optional: resolutions for the bilinear antidivergence refinement
        "tolerances": { # Optional: defaults will be used if not specified
            "inverse_divergence": 1e-10
        }
    }
    """
    TOLERANCES = {
        'inverse_divergence': 1e-10,
        'inverse_divergence_symmetry': 1e-12,
        'bilinear_antidivergence': 1e-10,
        'bilinear_symmetry': 1e-12,
        'leray_idempotence': 1e-12,
        'leray_divergence': 1e-10,
        'truncation_nonexpansive': 1e-12,
        'dealias_consistency': 1e-10,
        'mollifier_normalization': 1e-12,
        'parseval': 1e-10,
        'heat_semigroup': 1e-12,
        'truncation_growth': 1.0,
        'bilinear_refinement': 0.5
    }

    def __init__(self, **args):
        super().__init__('verify_operators', **args)

    def run_checks(self):
        grid = FourierGrid(self.config['grid'], workers=self.workers)
        rng = np.random.default_rng(self.config.get('seed', 0))
        samples = self.config.get('samples', 4)
        bandwidth = self.config.get('bandwidth', grid.resolution // 8)
        zeta = self.config.get('zeta', [1, 4, 16, 64, 256])
        gamma = self.config.get('gamma', 0.5)
        refinement = self.config.get('refinement', [16, 32, 64])

        worst = {name: 0.0 for name in self.TOLERANCES if name != 'bilinear_refinement'}
        sweep_rows = []
        for sample in range(samples):
            v = PeriodicField.random(grid, 1, rng, bandwidth)
            S = PeriodicField.random(grid, 2, rng, bandwidth)

            R = inverse_divergence(v)
            worst['inverse_divergence'] = max(worst['inverse_divergence'],
                                              _relative(differential(R, 'div') - v, v))
            scale = max(1.0, lebesgue_norm(R, math.inf))
            worst['inverse_divergence_symmetry'] = max(worst['inverse_divergence_symmetry'],
                                                       max(symmetry_defect(R)) / scale)

            B = bilinear_antidivergence(v, S)
            expected = spectral_projector(product(S, v, 'matvec'), 'nonzero_mean')
            worst['bilinear_antidivergence'] = max(worst['bilinear_antidivergence'],
                                                   _relative(differential(B, 'div') - expected, expected))
            scale = max(1.0, lebesgue_norm(B, math.inf))
            worst['bilinear_symmetry'] = max(worst['bilinear_symmetry'], max(symmetry_defect(B)) / scale)

            l2 = lebesgue_norm(v, 2)
            worst['parseval'] = max(worst['parseval'], abs(_quadrature_l2(v) - l2) / l2)

            s, t = HEAT_TIMES
            combined = heat_semigroup(S, s + t, c=1.0)
            worst['heat_semigroup'] = max(worst['heat_semigroup'], _relative(
                heat_semigroup(heat_semigroup(S, s, c=1.0), t, c=1.0) - combined, combined))

            P = leray_project(v)
            worst['leray_idempotence'] = max(worst['leray_idempotence'], _relative(leray_project(P) - P, P))
            worst['leray_divergence'] = max(worst['leray_divergence'], _relative(differential(P, 'div'), P))

            a = PeriodicField.random(grid, 0, rng, bandwidth)
            dealiased = product(a, v, 'scale')
            collocated = product(a, v, 'scale', dealias=False)
            worst['dealias_consistency'] = max(worst['dealias_consistency'], _relative(dealiased - collocated,
                                                                                       dealiased))

            # Amplified so that the coefficient clamp is active for the small truncation levels
            f = v * (10 * grid.resolution)
            norm = sobolev_norm(f, gamma)
            for level in zeta:
                truncated = truncate(f, level)
                ratio = sobolev_norm(truncated, gamma) / norm
                worst['truncation_nonexpansive'] = max(worst['truncation_nonexpansive'], ratio - 1)

                # Each retained coefficient is at most zeta, so the sup is at most zeta times the mode count
                retained = int(np.count_nonzero(grid.k2 <= level))
                supremum = lebesgue_norm(truncated, math.inf)
                worst['truncation_growth'] = max(worst['truncation_growth'], supremum / (level * retained))
                if sample == 0:
                    remainder = lebesgue_norm(f - truncated, 2)
                    sweep_rows.append((level, retained, remainder, remainder / norm, float(level) ** (-gamma / 2),
                                       ratio, supremum / float(level) ** 4))

        spec = MollifierSpec(self.config.get('ell', 0.25), 0.01)
        constant = PeriodicField.from_values(grid, np.ones(grid.shape))
        worst['mollifier_normalization'] = abs(float(np.sum(spec.weights)) - 1) + \
            lebesgue_norm(mollify_space(constant, spec) - constant, math.inf)

        for name in worst:
            self.check(name, worst[name])

        errors = bilinear_refinement_errors(refinement, self.workers)
        ratio = max(b / a if a > 0 else 0.0 for a, b in zip(errors, errors[1:]))
        self.check('bilinear_refinement', ratio,
                   detail=f'errors {", ".join(f"{e:.2e}" for e in errors)} at N = {refinement}')
        self.report.tables['bilinear_refinement'] = Table([refinement, errors], names=('resolution', 'error'))

        self.report.tables['zeta_sweep'] = Table(
            rows=sweep_rows, names=('zeta', 'retained_modes', 'remainder_L2', 'remainder_ratio', 'zeta_power',
                                    'norm_ratio', 'sup_zeta4_ratio'))
        self.report.data['bandwidth'] = bandwidth
        self.report.data['samples'] = samples
        self.log.info('verify_operators: %d samples on %s', samples, grid)

    @classmethod
    def validate_config(cls, config_json):
        """Returns an iterator of schema violations for the given json configuration"""
        schema = {
            'type': 'object',
            'additionalProperties': False,
            'required': ['grid'],
            'properties': {
                'type': {'type': 'string'},
                'grid': grid_schema(),
                'seed': {
                    'type': 'integer',
                    'minimum': 0
                },
                'samples': {
                    'type': 'integer',
                    'minimum': 1
                },
                'bandwidth': {
                    'type': 'integer',
                    'minimum': 1
                },
                'zeta': {
                    'type': 'array',
                    'minItems': 1,
                    'increasing': True,
                    'items': {
                        'type': 'number',
                        'minimum': 1
                    }
                },
                'gamma': {
                    'type': 'number',
                    'minimum': 0,
                    'maximum': 1,
                    'exclusiveMaximum': True
                },
                'ell': {
                    'type': 'number',
                    'minimum': 0.02,
                    'maximum': 0.5,
                    'exclusiveMaximum': True
                },
                'refinement': resolution_sweep_schema(),
                'tolerances': cls.tolerances_schema()
            }
        }

        return validation.validation_errors(config_json, schema, validation.MANIFEST_VALIDATORS)
