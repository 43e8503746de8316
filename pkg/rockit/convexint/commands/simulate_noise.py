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

"""Verification suite for the stochastic convolution integrator"""

import math
import jsonschema
import numpy as np
from astropy.table import Table
from rockit.convexint import validation
from rockit.convexint.command import Command
from rockit.convexint.fields import FourierGrid, PeriodicField, SpaceTimeField
from rockit.convexint.noise import INTEGRATION_SCHEMES, WienerPath, calibrate_lipschitz, \
    check_growth, increment_gaussianity, integrate_z, lipschitz_in_drift, moment_estimate, run_ensemble, \
    strong_order
from .schema_helpers import grid_schema, noise_schema, parse_noise, positive_schema, sweep_schema

DEFAULT_STRONG_ORDER = {
    'paths': 128,
    'horizon': 1.0,
    'levels': [8, 16, 32, 64, 128],
    'amplitude': 1.0,
    'relative_tolerance': 0.2
}

DEFAULT_ORACLE = {
    'horizon': 1.0,
    'paths': 256
}

DEFAULT_MOMENTS = {
    'r': 8,
    'gamma': 0.05,
    'delta': 0.05,
    'window': 0.5,
    'burn_in': 1.0,
    'sweep': [1, 2, 4, 8]
}


class SimulateNoise(Command):
    """
    Verification suite for the stochastic convolution integrator

    Example block:
    {
        "type": "SimulateNoise",
        "grid": 8,
        "dt": 0.01,
        "horizon": 2.0,
        "c": 1.0,
        "paths": 64,
        "seed": 0,
        "noise": {
            "variant": "linear_scalar",
            "amplitude": 0.5
        },
        "strong_order": { # Optional: set to false to skip
            "paths": 128,
            "levels": [8, 16, 32, 64, 128]
        },
        "oracle": { # Optional: single-mode mean decay
            "horizon": 1.0,
            "paths": 256
        },
        "moments": { # Optional: set to false to skip
            "r": 8,
            "gamma": 0.05,
            "delta": 0.05,
            "window": 0.5,
            "burn_in": 1.0,
            "sweep": [1, 2, 4, 8]
        },
        "tolerances": { # Optional: defaults will be used if not specified
            "single_mode_mean": 3
        }
    }
    """
    TOLERANCES = {
        'single_mode_mean': 3,
        'increment_gaussianity': 0.001
    }

    def __init__(self, **args):
        super().__init__('simulate_noise', **args)

    def _model(self, grid, rng):
        block = self.config['noise']
        model = parse_noise(block)
        if block.get('calibrate', False):
            model = calibrate_lipschitz(model, grid, rng)
        return model

    def _check_strong_order(self, block, c, seed):
        block = {**DEFAULT_STRONG_ORDER, **block}
        rows = []
        for scheme in INTEGRATION_SCHEMES:
            result = strong_order(scheme, block['paths'], block['horizon'], c, block['amplitude'],
                                  tuple(block['levels']), seed)
            self.check(f'strong_order_{scheme}', abs(result.order - result.predicted),
                       bound=block['relative_tolerance'] * result.predicted,
                       detail=f'measured order {result.order:.3f}, predicted {result.predicted:g}')
            rows.extend((scheme, steps, error) for steps, error in zip(result.steps, result.errors))
        self.report.tables['strong_order'] = Table(rows=rows, names=('scheme', 'steps', 'error'))

    def _check_oracle(self, model, block, grid, dt, c, seed):
        """E <z(T), z0> / |z0|^2 = exp(-(1 + c) T) for z0 = (sin x_2, 0, 0) with no drift"""
        block = {**DEFAULT_ORACLE, **block}
        steps = int(round(block['horizon'] / dt))
        values = np.zeros((3,) + grid.shape)
        values[0] = np.sin(grid.x[1])
        z0 = PeriodicField.from_values(grid, values)
        v = SpaceTimeField.constant(PeriodicField.zeros(grid, 1), 0.0, dt, steps + 1)
        paths = WienerPath.spawn(seed + 1, block['paths'], dt, steps, model.dimension)

        norm = float(np.sum(z0.values ** 2))

        def projection(path):
            z = integrate_z(model, v, c, path, z0=z0, scheme=self.config['noise'].get('scheme', 'euler')).z
            return float(np.sum(z[-1].values * z0.values)) / norm

        samples = np.array(run_ensemble(projection, paths, self.workers))
        expected = math.exp(-(1 + c) * steps * dt)
        stderr = float(np.std(samples, ddof=1) / math.sqrt(len(samples)))
        deviation = abs(float(np.mean(samples)) - expected) / stderr if stderr > 0 else \
            abs(float(np.mean(samples)) - expected)

        self.check('single_mode_mean', deviation,
                   detail=f'mean {np.mean(samples):.5f}, expected {expected:.5f}, in standard errors')

    def _check_moments(self, model, block, grid, dt, c, seed, rng):
        block = {**DEFAULT_MOMENTS, **block}
        horizon = self.config.get('horizon', 2.0)
        steps = int(round(horizon / dt))
        drift = SpaceTimeField.constant(PeriodicField.random(grid, 1, rng, grid.resolution // 4), 0.0, dt,
                                        steps + 1)
        paths = WienerPath.spawn(seed + 2, self.config.get('paths', 64), dt, steps, model.dimension)
        scheme = self.config['noise'].get('scheme', 'euler')

        def ensemble(constant):
            return run_ensemble(lambda path: integrate_z(model, drift, constant, path, scheme=scheme),
                                paths, self.workers)

        states = ensemble(c)
        sweep = {value: ensemble(value) for value in block['sweep']} if block['sweep'] else None
        result = moment_estimate(states, block['r'], block['gamma'], block['delta'], model.delta0,
                                 block['window'], burn_in=block['burn_in'], sweep=sweep)

        late = [e for s, e in zip(result.window_starts, result.stderr) if s >= block['burn_in']]
        self.check('moment_flatness', abs(result.trend), bound=3 * max(late) if late else 0,
                   detail=f'trend of E|z|^{result.r} over windows after t = {block["burn_in"]:g}')
        if result.sweep_slope is not None:
            self.check('dissipation_sweep', result.sweep_slope, bound=result.sweep_bound,
                       detail='log-log slope of sup_t E|z(t)|^r against c')

        self.report.data['moments'] = result.as_dict()
        self.report.tables['moments'] = Table([result.window_starts, result.estimates, result.stderr],
                                              names=('window_start', 'estimate', 'stderr'))

        # Lipschitz dependence on the drift, recorded without a bound
        shifted = drift.map(lambda f: f * 1.5)
        estimate = lipschitz_in_drift(model, drift, shifted, c, paths[:16], workers=self.workers)
        self.report.data['lipschitz_in_drift'] = {
            'ratio': estimate.ratio,
            'stderr': estimate.stderr
        }

    def run_checks(self):
        grid = FourierGrid(self.config['grid'], workers=self.workers)
        seed = self.config.get('seed', 0)
        rng = np.random.default_rng(seed)
        dt = self.config.get('dt', 0.01)
        c = self.config.get('c', 1.0)

        model = self._model(grid, rng)
        self.report.data['noise'] = model.as_dict()

        strong = self.config.get('strong_order', {})
        if strong is not False:
            self._check_strong_order(strong, c, seed)

        oracle = self.config.get('oracle', {})
        if oracle is not False:
            self._check_oracle(model, oracle, grid, dt, c, seed)

        moments = self.config.get('moments', {})
        if moments is not False:
            self._check_moments(model, moments, grid, dt, c, seed, rng)

        path = WienerPath(seed, dt, int(round(self.config.get('horizon', 2.0) / dt)), model.dimension)
        gaussianity = increment_gaussianity(path, self.tolerance('increment_gaussianity'))
        self.check('increment_gaussianity', min(gaussianity.pvalues), comparison='ge',
                   detail='smallest Kolmogorov-Smirnov p-value over the driving directions')

        ok, value = check_growth(model, grid, rng)
        self.check('growth_condition', value, bound=model.lipschitz,
                   detail='largest growth or Lipschitz ratio of G on fresh samples')
        if not ok:
            self.log.warning('simulate_noise: noise constant L = %.4g is below the measured ratio %.4g',
                             model.lipschitz, value)

    @classmethod
    def validate_config(cls, config_json):
        """Returns an iterator of schema violations for the given json configuration"""
        optional_block = {
            'anyOf': [
                {'type': 'boolean', 'enum': [False]},
                {'type': 'object'}
            ]
        }

        schema = {
            'type': 'object',
            'additionalProperties': False,
            'required': ['grid', 'noise'],
            'properties': {
                'type': {'type': 'string'},
                'grid': grid_schema(),
                'dt': positive_schema(),
                'horizon': positive_schema(),
                'c': positive_schema(),
                'paths': {
                    'type': 'integer',
                    'minimum': 64
                },
                'seed': {
                    'type': 'integer',
                    'minimum': 0
                },
                'noise': noise_schema(),
                'strong_order': {
                    'anyOf': [
                        {'type': 'boolean', 'enum': [False]},
                        {
                            'type': 'object',
                            'additionalProperties': False,
                            'properties': {
                                'paths': {
                                    'type': 'integer',
                                    'minimum': 2
                                },
                                'horizon': positive_schema(),
                                'levels': sweep_schema(3),
                                'amplitude': positive_schema(),
                                'relative_tolerance': positive_schema()
                            }
                        }
                    ]
                },
                'oracle': optional_block,
                'moments': optional_block,
                'tolerances': cls.tolerances_schema()
            }
        }

        errors = list(validation.validation_errors(config_json, schema, validation.MANIFEST_VALIDATORS))
        if errors:
            return iter(errors)

        sub_schemas = {
            'oracle': {
                'type': 'object',
                'additionalProperties': False,
                'properties': {
                    'horizon': positive_schema(),
                    'paths': {
                        'type': 'integer',
                        'minimum': 2
                    }
                }
            },
            'moments': {
                'type': 'object',
                'additionalProperties': False,
                'properties': {
                    'r': {
                        'type': 'integer',
                        'minimum': 2
                    },
                    'gamma': positive_schema(),
                    'delta': positive_schema(exclusive=False),
                    'window': positive_schema(),
                    'burn_in': positive_schema(exclusive=False),
                    'sweep': {
                        'type': 'array',
                        'increasing': True,
                        'items': positive_schema()
                    }
                }
            }
        }

        for key, sub_schema in sub_schemas.items():
            if isinstance(config_json.get(key), dict):
                for error in validation.validation_errors(config_json[key], sub_schema,
                                                          validation.MANIFEST_VALIDATORS):
                    error.path.appendleft(key)
                    errors.append(error)

        # The moment estimator needs the exponents to leave room for the Kolmogorov criterion
        moments = config_json.get('moments')
        if isinstance(moments, dict) and not errors:
            block = {**DEFAULT_MOMENTS, **moments}
            delta0 = config_json['noise'].get('delta0', 0)
            if block['r'] % 2 != 0 or not block['gamma'] + block['delta'] + delta0 < 0.5 - 2 / block['r']:
                errors.append(jsonschema.ValidationError(
                    f'moments: r = {block["r"]} must be even with gamma + delta + delta0 < 1/2 - 2/r'))

        if config_json['noise'].get('scheme') == 'milstein' and config_json['noise']['variant'] != 'linear_scalar':
            errors.append(jsonschema.ValidationError(
                'noise: the milstein scheme requires linear_scalar noise'))

        return iter(errors)

