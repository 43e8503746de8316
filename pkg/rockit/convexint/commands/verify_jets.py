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

"""Verification suite for the geometric decomposition and the intermittent jets"""

import numpy as np
from astropy.table import Table, vstack
from rockit.convexint import validation
from rockit.convexint.calculus import differential
from rockit.convexint.command import Command
from rockit.convexint.fields import FourierGrid, lebesgue_norm
from rockit.convexint.jets import RESOLUTION_FACTOR, JetParameters, build_direction_set, build_profiles, \
    corrector_identity_residual, grid_moment, jet_moment, norm_agreement, scaling_probe, support_collisions, \
    synthesize_jet
from .schema_helpers import grid_schema, guard_schema, positive_schema, resolution_sweep_schema, sweep_schema

# lambda r_perp = 1 keeps the phase sampling of the moment independent of lambda;
# a guard of null reports the aliasing fraction, which exceeds 1e-8 on any grid this size
DEFAULT_REFERENCE = {
    'grid': 128,
    'lambda': 2,
    'r_perp': 0.5,
    'r_par': 0.75,
    'mu': 2,
    'resolution_factor': RESOLUTION_FACTOR,
    'aliasing_guard': None,
    'moment_sweep': [64, 128, 256, 512]
}

# Tubes are thin enough here for the shifts to separate every pair of directions
DEFAULT_DISJOINT = {
    'lambda': 100,
    'r_perp': 0.01,
    'r_par': 0.5,
    'mu': 1,
    'placement': 11,
    'samples': 20000
}

DEFAULT_SCALING = {
    'lambda': 64,
    'r_par': 0.5,
    'r_perp': 0.03125,
    'mu': 1,
    'r_perp_sweep': [0.03125, 0.0625, 0.125, 0.25],
    'r_par_sweep': [0.0625, 0.125, 0.25, 0.5],
    'p': [1, 2, 4],
    'relative_tolerance': 0.1,
    'absolute_tolerance': 0.1
}


def _jet_schema_properties():
    return {
        'lambda': {
            'type': 'integer',
            'minimum': 1
        },
        'r_perp': positive_schema(),
        'r_par': positive_schema(),
        'mu': positive_schema()
    }


def _reference_schema():
    return {
        'type': 'object',
        'additionalProperties': False,
        'properties': {
            **_jet_schema_properties(),
            'grid': grid_schema(),
            'resolution_factor': positive_schema(),
            'aliasing_guard': guard_schema(),
            'moment_sweep': resolution_sweep_schema()
        }
    }


def _disjoint_schema():
    return {
        'type': 'object',
        'additionalProperties': False,
        'properties': {
            **_jet_schema_properties(),
            'placement': {
                'type': 'integer',
                'minimum': 1
            },
            'samples': {
                'type': 'integer',
                'minimum': 1
            }
        }
    }


def _parameters(block, grid=None):
    return JetParameters(block['r_perp'], block['r_par'], block['lambda'], block['mu'], grid)


def moment_errors(params, profiles, directions, resolutions):
    """
    Largest entry of |mean(W (x) W) - xi (x) xi| over the directions at each resolution

    The grid moment is raw: no discrete normalisation, so the error measures
    how well the grid resolves the continuum normalisation.
    """
    errors = []
    for resolution in resolutions:
        worst = 0.0
        for index in range(len(directions)):
            xi = directions.vector(index)
            mean = grid_moment(index, params, profiles, directions, resolution)
            worst = max(worst, abs(mean - 1) * float(np.max(xi ** 2)))
        errors.append(worst)
    return errors


class VerifyJets(Command):
    """
    Verification suite for the geometric decomposition and the intermittent jets

    Example block:
    {
        "type": "VerifyJets",
        "seed": 0,
        "samples": 1000,
        "reference": { # Optional: defaults to the values below
            "grid": 128,
            "lambda": 2,
            "r_perp": 0.5,
            "r_par": 0.75,
            "mu": 2,
            "resolution_factor": 8,
            "aliasing_guard": null, # Optional: null reports the aliasing fraction without a bound
            "moment_sweep": [64, 128, 256, 512] # The last resolution must satisfy the resolution rule
        },
        "disjoint": { # Optional: parameters for the support separation check
            "lambda": 100,
            "r_perp": 0.01,
            "r_par": 0.5,
            "placement": 11,
            "samples": 20000
        },
        "scaling": { # Optional: set to false to skip the slope fits
            "lambda": 64,
            "r_perp_sweep": [0.03125, 0.0625, 0.125, 0.25],
            "r_par_sweep": [0.0625, 0.125, 0.25, 0.5],
            "p": [1, 2, 4]
        },
        "tolerances": { # Optional: defaults will be used if not specified
            "moment": 1e-3
        }
    }
    """
    TOLERANCES = {
        'geometric_reconstruction': 1e-10,
        'identity_coefficients_minimum': 0,
        'moment': 1e-3,
        'moment_refinement': 1,
        'discrete_moment': 1e-12,
        'divergence_free': 1e-10,
        'norm_agreement': 5e-2,
        'support_margin': 0,
        'support_collisions': 0,
        'corrector_slope_difference': 0.1
    }

    def __init__(self, **args):
        super().__init__('verify_jets', **args)

    def _check_geometry(self, directions, rng, samples):
        worst = 0.0
        for _ in range(samples):
            # Uniform direction in the 6-dimensional space of symmetric matrices
            offset = rng.normal(size=(3, 3))
            offset = (offset + offset.T) / 2
            offset *= directions.r_star * rng.uniform() ** (1 / 6) / np.linalg.norm(offset)
            R = np.eye(3) + offset

            gamma = directions.gamma(R)
            reconstructed = sum(g ** 2 * np.outer(directions.vector(i), directions.vector(i))
                                for i, g in enumerate(gamma))
            worst = max(worst, float(np.max(np.abs(reconstructed - R))))

        self.check('geometric_reconstruction', worst, detail=f'{samples} matrices with |R - Id| <= r_*')
        self.check('identity_coefficients_minimum', float(np.min(directions.c_identity)), comparison='ge',
                   detail=f'min c(Id); r_* = {directions.r_star:.6f}')
        self.report.data['directions'] = {
            'vectors': [[str(c) for c in xi] for xi in directions.directions],
            'n_star': directions.n_star,
            'c_identity': directions.c_identity,
            'dual_norms': directions.dual_norms,
            'r_star': directions.r_star
        }

    def _check_moment(self, params, block, profiles, directions):
        sweep = block['moment_sweep']
        required = block['resolution_factor'] * directions.n_star * params.lam
        if sweep[-1] < required:
            raise ValueError(f'moment sweep ends at N = {sweep[-1]}, below the resolution rule '
                             f'N >= {block["resolution_factor"]:g} n_* lambda = {required:g}')

        errors = moment_errors(params, profiles, directions, sweep)
        self.check('moment', errors[-1], detail=f'raw grid moment at N = {sweep[-1]} for {params}')

        # Largest ratio of successive errors; refinement must reduce the error at every step
        ratio = max(b / a if a > 0 else 0.0 for a, b in zip(errors, errors[1:]))
        self.check('moment_refinement', ratio, detail=f'errors {", ".join(f"{e:.2e}" for e in errors)}')
        self.report.tables['moment_sweep'] = Table([sweep, errors], names=('resolution', 'moment_error'))

    def _check_reference(self, params, block, profiles, directions):
        discrete = 0.0
        divergence = 0.0
        closed_form = 0.0
        rows = []
        for index in range(len(directions)):
            jet = synthesize_jet(index, params, profiles, directions, discrete_normalization=True,
                                 resolution_factor=block['resolution_factor'],
                                 aliasing_guard=block['aliasing_guard'])
            xi = directions.vector(index)
            error = float(np.max(np.abs(jet_moment(jet) - np.outer(xi, xi))))
            raw = abs(1 / jet.normalization ** 2 - 1) * float(np.max(xi ** 2))

            total = jet.W + jet.W_c
            relative_divergence = lebesgue_norm(differential(total, 'div'), 2) / \
                max(lebesgue_norm(total, 2) * directions.n_star * params.lam, 1e-300)
            corrector = corrector_identity_residual(jet)

            discrete = max(discrete, error)
            divergence = max(divergence, relative_divergence)
            closed_form = max(closed_form, corrector)
            rows.append((index, raw, error, relative_divergence, corrector, jet.aliasing, jet.normalization))

        self.check('discrete_moment', discrete, detail='grid moment after discrete normalization')
        self.check('divergence_free', divergence)
        # Resolution diagnostics, no bound
        self.report.data['corrector_closed_form'] = closed_form
        self.report.data['aliasing'] = max(row[5] for row in rows)
        self.log.info('verify_jets: closed-form corrector residual %.3e, aliasing fraction %.3e', closed_form,
                      self.report.data['aliasing'])
        self.report.tables['reference'] = Table(
            rows=rows, names=('direction', 'raw_moment_error', 'discrete_moment_error', 'divergence',
                              'corrector_residual', 'aliasing', 'normalization'))

    def _check_norms(self, params, block, profiles, directions, powers):
        """Cell norms used by the slope fits against norms of the synthesized jet"""
        worst = 0.0
        rows = []
        for p in powers:
            agreement = norm_agreement(params, p, profiles, directions,
                                       resolution_factor=block['resolution_factor'],
                                       aliasing_guard=block['aliasing_guard'])
            for quantity, (sampled, cell, difference) in agreement.items():
                rows.append((quantity, float(p), sampled, cell, difference))
                worst = max(worst, difference)

        self.check('norm_agreement', worst, detail=f'largest relative difference on {params.grid}')
        self.report.tables['norm_agreement'] = Table(
            rows=rows, names=('quantity', 'p', 'sampled', 'cell', 'relative_difference'))

    def _check_disjoint(self, block, rng):
        params = _parameters(block)
        directions = build_direction_set(params, placement=block['placement'], require_disjoint=True)
        margin = min(directions.margins.values())
        self.check('support_margin', margin, comparison='ge',
                   detail=f'smallest pairwise tube separation margin for {params}')

        collisions = support_collisions(directions, params, block['samples'], rng)
        self.check('support_collisions', sum(collisions.values()),
                   detail=f'sampled support points inside another tube, {block["samples"]} per pair')
        self.report.data['disjoint_shifts'] = directions.shifts
        self.report.tables['support_margins'] = Table(
            rows=[(i, j, m) for (i, j), m in sorted(directions.margins.items())],
            names=('direction', 'other', 'margin'))

    def _check_scaling(self, block, profiles, n_star):
        lam, mu = block['lambda'], block['mu']
        fits = {}
        for quantity in ('W', 'W_c', 'V'):
            for p in block['p']:
                sweeps = {
                    'r_perp': [JetParameters(r, block['r_par'], lam, mu) for r in block['r_perp_sweep']],
                    'r_par': [JetParameters(block['r_perp'], r, lam, mu) for r in block['r_par_sweep']]
                }
                for parameter, sweep in sweeps.items():
                    fit = scaling_probe(sweep, p, quantity=quantity, profiles=profiles, n_star=n_star,
                                        workers=self.workers)
                    fits[(quantity, p, parameter)] = fit

                    if fit.predicted == 0:
                        bound = block['absolute_tolerance']
                    else:
                        bound = block['relative_tolerance'] * abs(fit.predicted)
                    self.check(f'scaling_{quantity}_{parameter}_p{p:g}', abs(fit.slope - fit.predicted),
                               bound=bound, detail=f'slope {fit.slope:.4f}, predicted {fit.predicted:.4f}')

        # W_c carries one extra power of r_perp / r_par relative to W
        difference = 0.0
        for p in block['p']:
            extra = fits[('W_c', p, 'r_perp')].slope - fits[('W', p, 'r_perp')].slope
            difference = max(difference, abs(extra - 1))
        self.check('corrector_slope_difference', difference)

        tables = []
        for (quantity, p, parameter), fit in sorted(fits.items(), key=lambda item: str(item[0])):
            table = fit.table.copy()
            table['quantity'] = quantity
            table['p'] = float(p)
            table['parameter'] = parameter
            tables.append(table)
        self.report.tables['scaling'] = vstack(tables)
        self.report.tables['slopes'] = Table(
            rows=[(q, float(p), par, f.slope, f.predicted, f.residual) for (q, p, par), f in fits.items()],
            names=('quantity', 'p', 'parameter', 'slope', 'predicted', 'residual'))

    def run_checks(self):
        rng = np.random.default_rng(self.config.get('seed', 0))
        profiles = build_profiles()
        directions = build_direction_set()
        self._check_geometry(directions, rng, self.config.get('samples', 1000))

        block = {**DEFAULT_REFERENCE, **self.config.get('reference', {})}
        params = _parameters(block, FourierGrid(block['grid'], workers=self.workers))
        reference = build_direction_set(params, require_disjoint=False)
        self._check_moment(params, block, profiles, reference)
        self._check_reference(params, block, profiles, reference)

        scaling = self.config.get('scaling', {})
        if scaling is not False:
            scaling = {**DEFAULT_SCALING, **scaling}
            self._check_norms(params, block, profiles, reference, scaling['p'])
            self._check_scaling(scaling, profiles, directions.n_star)

        self._check_disjoint({**DEFAULT_DISJOINT, **self.config.get('disjoint', {})}, rng)
        self.log.info('verify_jets: n_* = %d, r_* = %.4f', directions.n_star, directions.r_star)

    @classmethod
    def validate_config(cls, config_json):
        """Returns an iterator of schema violations for the given json configuration"""
        schema = {
            'type': 'object',
            'additionalProperties': False,
            'properties': {
                'type': {'type': 'string'},
                'seed': {
                    'type': 'integer',
                    'minimum': 0
                },
                'samples': {
                    'type': 'integer',
                    'minimum': 1
                },
                'reference': _reference_schema(),
                'disjoint': _disjoint_schema(),
                'scaling': {
                    'anyOf': [
                        {'type': 'boolean', 'enum': [False]},
                        {
                            'type': 'object',
                            'additionalProperties': False,
                            'properties': {
                                'lambda': {
                                    'type': 'integer',
                                    'minimum': 1
                                },
                                'r_perp': positive_schema(),
                                'r_par': positive_schema(),
                                'mu': positive_schema(),
                                'r_perp_sweep': sweep_schema(4),
                                'r_par_sweep': sweep_schema(4),
                                'p': {
                                    'type': 'array',
                                    'minItems': 1,
                                    'items': {
                                        'type': 'number',
                                        'minimum': 1
                                    }
                                },
                                'relative_tolerance': positive_schema(),
                                'absolute_tolerance': positive_schema()
                            }
                        }
                    ]
                },
                'tolerances': cls.tolerances_schema()
            }
        }

        return validation.validation_errors(config_json, schema, validation.MANIFEST_VALIDATORS)
