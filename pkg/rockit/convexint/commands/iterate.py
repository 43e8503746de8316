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

"""Runs the convex integration iteration and checks every step"""

# pylint: disable=too-many-branches

import os
import jsonschema
import numpy as np
from astropy.table import Table
from rockit.convexint import validation
from rockit.convexint.command import Command
from rockit.convexint.constants import IterationMode
from rockit.convexint.fields import FourierGrid, lebesgue_norm, load_snapshot, save_snapshot
from rockit.convexint.jets import ALIASING_GUARD, RESOLUTION_FACTOR
from rockit.convexint.noise import calibrate_lipschitz, tail_regularity
from rockit.convexint.report import skipped
from rockit.convexint.schedule import schedule, validate_toy_rows
from rockit.convexint.scheme import CLAMP_BUDGET, IterationSettings, initial_state, iterate, \
    nonuniqueness_experiment, residual_convergence
from .schema_helpers import grid_schema, guard_schema, noise_schema, parse_noise, parse_schedule, positive_schema, \
    schedule_schema, sweep_schema

# Smallest fitted order of the residual in dt
CONVERGENCE_ORDER = 3.5


class Iterate(Command):
    """
    Runs the convex integration iteration and checks every step

    Example block:
    {
        "type": "Iterate",
        "mode": "stochastic", # deterministic, stochastic or cauchy
        "grid": 32,
        "dt": 0.01,
        "horizon": 1.0,
        "c": 1.0,
        "paths": 4,
        "seed": 0,
        "steps": 1,
        "noise": {
            "variant": "linear_scalar",
            "amplitude": 0.1
        },
        "initial_velocity": "u0.jfld", # Optional: cauchy mode only, zero if not given
        "schedule": {
            "mode": "toy",
            "energy": {"mean": 1.0},
            "steps": [
                {"epsilon": 0.0625, "ell": 0.25, "lambda": 2, "zeta": 2, "r_perp": 0.5, "r_par": 0.75, "mu": 1},
                {"epsilon": 0.03125, "ell": 0.1, "lambda": 2, "zeta": 4, "r_perp": 0.5, "r_par": 0.75, "mu": 1}
            ]
        },
        "print_schedule": 4, # Optional: number of schedule steps to tabulate
        "nonuniqueness": { # Optional: cauchy mode with a toy schedule only
            "K1": 0.05,
            "K2": 0.1,
            "time": 1.0
        },
        "convergence": { # Optional: residual order in dt
            "dts": [0.02, 0.01, 0.005]
        },
        "resolution_factor": 8, # Optional: N >= factor n_* lambda; below 8 needs under_resolved
        "under_resolved": false, # Optional: allow a resolution factor below 8
        "aliasing_guard": null, # Optional: largest jet aliasing fraction, null to only report it
        "checkpoints": true, # Optional: write the final velocity of every level to the output directory
        "tolerances": { # Optional: defaults will be used if not specified
            "residual_relative": 1e-2,
            "overlap": 1 # Accept tubes that meet; the interaction stress is then reported, not bounded
        }
    }
    """
    TOLERANCES = {
        'cancellation': 1e-10,
        'residual_relative': 1e-2,
        'symmetry': 1e-10,
        'clamped_fraction': CLAMP_BUDGET,
        'initial_velocity': 1e-12,
        'cutoff_preserved': 1e-12,
        'disc_ratio': 1.0,
        'osc_int_ratio': 1e-12,
        'overlap': 0,
        'convergence_order': CONVERGENCE_ORDER
    }

    def __init__(self, **args):
        super().__init__('iterate', **args)

    def _settings(self, grid, cauchy):
        config = self.config
        mode = IterationMode.parse(config['mode'])
        rng = np.random.default_rng(config.get('seed', 0))

        noise = None
        if 'noise' in config and mode != IterationMode.Deterministic:
            noise = parse_noise(config['noise'])
            if config['noise'].get('calibrate', False):
                noise = calibrate_lipschitz(noise, grid, rng)

        u0 = None
        if cauchy and config.get('initial_velocity'):
            u0 = load_snapshot(config['initial_velocity'], workers=self.workers)
            if u0.grid != grid or u0.rank != 1:
                raise ValueError(f'initial velocity {config["initial_velocity"]} is not a vector field on {grid}')

        return IterationSettings(
            mode, grid, config['dt'],
            horizon=config.get('horizon', 1.0),
            c=config.get('c', 1.0),
            noise=noise,
            paths=config.get('paths', 1),
            seed=config.get('seed', 0),
            u0=u0,
            resolution_factor=config.get('resolution_factor', RESOLUTION_FACTOR),
            aliasing_guard=config.get('aliasing_guard', ALIASING_GUARD),
            under_resolved=config.get('under_resolved', False),
            placement=config.get('placement', 8),
            require_disjoint=config.get('require_disjoint', False),
            r0=config.get('r0', 1),
            gamma=config.get('gamma', 0.05),
            clamp_budget=self.tolerance('clamped_fraction'),
            workers=self.workers)

    def _schedule_table(self, schedule_config, count):
        rows = [schedule(schedule_config, q).as_dict() for q in range(1, count + 1)]
        columns = ('q', 'epsilon', 'ell', 'lambda', 'zeta', 'r_perp', 'r_par', 'mu', 'runnable')
        table = Table(rows=[[str(r[c]) if c not in ('q', 'runnable') else r[c] for c in columns] for r in rows],
                      names=columns)
        self.report.tables['schedule'] = table
        for row in rows:
            self.log.info('schedule q=%d: epsilon %s, ell %s, lambda %s%s', row['q'], row['epsilon'],
                          row['ell'], row['lambda'], '' if row['runnable'] else ' (not runnable)')
        return rows

    def _check_step(self, report, grid, settings):
        q = report.q
        checks = report.checks
        self.check('cancellation', checks['cancellation'], detail=f'step {q}')
        self.check('residual_relative', checks['residual_relative'],
                   detail=f'step {q}: sup residual {checks["residual"]:.3e}')
        self.check('symmetry', checks['symmetry'], detail=f'step {q}')
        self.check('disc_ratio', checks['disc_ratio'],
                   detail=f'step {q}: residual {checks["residual_relative"]:.3e} with the discretisation stress, '
                          f'{checks["residual_without_disc"]:.3e} without')
        self.check('overlap', checks['overlap'], detail=f'step {q}: fraction of direction pairs whose tubes meet')
        if checks['overlap'] == 0:
            self.check('osc_int_ratio', checks['osc_int_ratio'], detail=f'step {q}: disjoint tubes')
        else:
            self.report.add(skipped('osc_int_ratio', f'step {q}: tubes meet for {100 * checks["overlap"]:.0f}% '
                                                     f'of direction pairs; |osc_int| / |osc| = '
                                                     f'{checks["osc_int_ratio"]:.3e}'))
        self.report.data.setdefault('aliasing', []).append(checks['aliasing'])
        points = len(report.times) * grid.points * settings.paths
        self.check('clamped_fraction', checks['clamped_points'] / points, detail=f'step {q}')

        if report.budget:
            self.check('energy_budget', report.budget['error'], bound=report.budget['bound'],
                       detail=f'step {q}: slack {report.budget["slack"]:.3e}')
        else:
            self.report.add(skipped('energy_budget', f'step {q}: no frame with the cut-off fully on'))

        if 'initial_velocity' in checks:
            self.check('initial_velocity', checks['initial_velocity'], detail=f'step {q}')
            self.check('cutoff_preserved', checks['cutoff_preserved'], detail=f'step {q}')

    def _write_checkpoint(self, state):
        if not self.output or not self.config.get('checkpoints', False):
            return
        os.makedirs(self.output, exist_ok=True)
        v = state.paths[0].v
        path = os.path.join(self.output, f'iterate-v{state.q}.jfld')
        save_snapshot(path, v[-1])
        self.log.info('iterate: level %d velocity written to %s', state.q, path)

    def run_checks(self):
        config = self.config
        cauchy = config['mode'] == 'cauchy'
        steps = config.get('steps', 1)
        schedule_config = parse_schedule(config['schedule'], cauchy)

        count = config.get('print_schedule', steps + 1)
        if schedule_config.mode == 'toy':
            count = min(count, schedule_config.steps)
        rows = self._schedule_table(schedule_config, count)

        needed = [schedule(schedule_config, q) for q in range(1, steps + 2)] \
            if schedule_config.mode == 'paper' else []
        blocked = [s.q for s in needed if not s.runnable]
        if blocked:
            self.report.add(skipped('iteration', f'paper schedule steps {blocked} exceed the runnable frequency '
                                                 f'{schedule_config.runnable_lambda}'))
            self.report.data['schedule'] = rows
            return

        grid = FourierGrid(config['grid'], workers=self.workers)
        settings = self._settings(grid, cauchy)
        if settings.noise is not None:
            self.report.data['noise'] = settings.noise.as_dict()

        if cauchy:
            u0 = settings.u0
            if u0 is not None and lebesgue_norm(u0, 2) > 0:
                regularity = tail_regularity(u0, settings.c, settings.gamma)
                self.check('tail_regularity', regularity.slope, comparison='ge', bound=regularity.bound,
                           detail='log-log slope of the heat tail Hölder norm in t')
                self.report.tables['tail_regularity'] = regularity.table

        state = initial_state(schedule_config, settings, steps)
        self._write_checkpoint(state)
        for _ in range(steps):
            state, report = iterate(state, schedule_config, settings)
            self._check_step(report, grid, settings)
            self._write_checkpoint(state)

        self.report.data['ledger'] = [entry.as_dict() for entry in state.ledger]
        self.report.tables['stress_terms'] = Table(
            rows=[[entry.q] + [entry.stress_norms[name] for name in sorted(entry.stress_norms)]
                  for entry in state.ledger],
            names=['q'] + sorted(state.ledger[0].stress_norms))

        convergence = config.get('convergence')
        if convergence:
            fit = residual_convergence(schedule_config, settings, convergence['dts'], steps)
            self.check('convergence_order', fit.order, comparison='ge',
                       detail='fitted order of the sup residual in dt')
            self.report.tables['convergence'] = fit.table

        experiment = config.get('nonuniqueness')
        if experiment:
            result = nonuniqueness_experiment(schedule_config, settings, experiment['K1'], experiment['K2'],
                                              steps, experiment.get('time', settings.horizon))
            self.check('nonuniqueness', result.separation, comparison='ge', bound=0.5 * result.predicted,
                       detail=f'energies {result.energies[0]:.4e} and {result.energies[1]:.4e} at '
                              f't = {result.time:g}')
            self.report.data['nonuniqueness'] = result.as_dict()

    @classmethod
    def validate_config(cls, config_json):
        """Returns an iterator of schema violations for the given json configuration"""
        schema = {
            'type': 'object',
            'additionalProperties': False,
            'required': ['mode', 'grid', 'dt', 'schedule'],
            'properties': {
                'type': {'type': 'string'},
                'mode': {
                    'type': 'string',
                    'enum': ['deterministic', 'stochastic', 'cauchy']
                },
                'grid': grid_schema(),
                'dt': positive_schema(),
                'horizon': positive_schema(),
                'c': positive_schema(),
                'paths': {
                    'type': 'integer',
                    'minimum': 1
                },
                'seed': {
                    'type': 'integer',
                    'minimum': 0
                },
                'steps': {
                    'type': 'integer',
                    'minimum': 1
                },
                'resolution_factor': positive_schema(),
                'under_resolved': {'type': 'boolean'},
                'aliasing_guard': guard_schema(),
                'placement': {
                    'type': 'integer',
                    'minimum': 1
                },
                'require_disjoint': {'type': 'boolean'},
                'r0': {
                    'type': 'integer',
                    'minimum': 1
                },
                'gamma': {
                    'type': 'number',
                    'minimum': 0,
                    'maximum': 0.5,
                    'exclusiveMinimum': True,
                    'exclusiveMaximum': True
                },
                'noise': noise_schema(),
                'initial_velocity': {
                    'type': 'string',
                    'existing_file': True
                },
                'schedule': schedule_schema(),
                'print_schedule': {
                    'type': 'integer',
                    'minimum': 1
                },
                'nonuniqueness': {
                    'type': 'object',
                    'additionalProperties': False,
                    'required': ['K1', 'K2'],
                    'properties': {
                        'K1': positive_schema(),
                        'K2': positive_schema(),
                        'time': positive_schema()
                    }
                },
                'convergence': {
                    'type': 'object',
                    'additionalProperties': False,
                    'required': ['dts'],
                    'properties': {
                        'dts': sweep_schema()
                    }
                },
                'checkpoints': {'type': 'boolean'},
                'tolerances': cls.tolerances_schema()
            }
        }

        errors = list(validation.validation_errors(config_json, schema, validation.MANIFEST_VALIDATORS))
        if errors or not isinstance(config_json, dict):
            return iter(errors)

        mode = config_json['mode']
        block = config_json['schedule']
        if mode == 'stochastic' and 'noise' not in config_json:
            errors.append(jsonschema.ValidationError('stochastic runs require a noise block'))

        if 'initial_velocity' in config_json and mode != 'cauchy':
            errors.append(jsonschema.ValidationError('initial_velocity is only used by cauchy runs'))

        if 'nonuniqueness' in config_json and (mode != 'cauchy' or block['mode'] != 'toy'):
            errors.append(jsonschema.ValidationError('nonuniqueness needs a cauchy run with a toy schedule'))

        if block['mode'] == 'toy':
            valid, messages = validate_toy_rows(block.get('steps'), mode == 'cauchy')
            if not valid:
                for message in messages:
                    if not message.startswith('info:'):
                        errors.append(jsonschema.ValidationError('schedule: ' + message))
            elif len(block['steps']) < config_json.get('steps', 1) + 1:
                errors.append(jsonschema.ValidationError(
                    f'schedule: {config_json.get("steps", 1)} steps need {config_json.get("steps", 1) + 1} rows '
                    f'(got {len(block["steps"])})'))
        elif 'steps' in block:
            errors.append(jsonschema.ValidationError('schedule: steps are only read in toy mode'))

        return iter(errors)
