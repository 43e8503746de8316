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


"""Tests for the run manifest schema and the shared validators"""

import json
import os
import pytest
from rockit.convexint import validation
from rockit.convexint.commands import Iterate, SimulateNoise, VerifyJets, VerifyOperators
from rockit.convexint.config import Config, resolve_output
from rockit.convexint.constants import OUTPUT_ROOT_ENV

OPERATORS = {'type': 'VerifyOperators', 'grid': 16, 'samples': 1}

ROWS = [
    {'epsilon': 0.0625, 'ell': 0.25, 'lambda': 2, 'zeta': 2, 'r_perp': 0.5, 'r_par': 0.75, 'mu': 1},
    {'epsilon': 0.03125, 'ell': 0.1, 'lambda': 2, 'zeta': 4, 'r_perp': 0.5, 'r_par': 0.75, 'mu': 1}
]


def errors(command):
    with pytest.raises(validation.ManifestError) as error:
        Config({'command': command})
    return error.value.errors


def iterate_block(**extra):
    return {'type': 'Iterate', 'mode': 'deterministic', 'grid': 32, 'dt': 0.01,
            'schedule': {'mode': 'toy', 'steps': ROWS}, **extra}


class TestConfig:
    def test_defaults(self):
        config = Config({'command': OPERATORS})
        assert config.log_name == 'convexint'
        assert config.output is None
        assert config.workers == 1
        assert config.command_type is VerifyOperators

    def test_round_trip(self):
        config = Config({'command': OPERATORS, 'output': 'reports', 'workers': 2, 'log_name': 'ops'})
        assert Config(config.to_json()) == config
        assert config != Config({'command': OPERATORS})

    def test_load(self, tmp_path):
        path = tmp_path / 'manifest.json'
        path.write_text(json.dumps({'command': OPERATORS}), encoding='utf-8')
        assert Config.load(str(path)) == Config({'command': OPERATORS})

    def test_top_level(self):
        with pytest.raises(validation.ManifestError) as error:
            Config({'command': OPERATORS, 'workers': 0, 'extra': 1})
        assert any('extra' in e for e in error.value.errors)
        assert any(e.startswith('workers: ') for e in error.value.errors)

        with pytest.raises(validation.ManifestError, match='\'command\' is a required property'):
            Config({})

    def test_command_type(self):
        assert errors({'grid': 16}) == ['command: missing key \'type\'']
        assert errors({'type': 'Observe'}) == ['command: unknown command type \'Observe\'']

    def test_prefixed_errors(self):
        assert errors({**OPERATORS, 'grid': 7}) == [
            'command: (VerifyOperators) grid: 7 is not an even resolution >= 8']
        assert errors({**OPERATORS, 'ell': 0.5}) == [
            'command: (VerifyOperators) ell: 0.5 is greater than or equal to the maximum of 0.5']
        assert errors({**OPERATORS, 'refinement': [32, 16]}) == [
            'command: (VerifyOperators) refinement: [32, 16] is not strictly increasing']

    def test_create_command(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)
        config = Config({'command': OPERATORS, 'output': 'reports', 'workers': 2})
        command = config.create_command()
        assert isinstance(command, VerifyOperators)
        assert command.name == 'verify_operators'
        assert command.output == 'reports'
        assert command.workers == 2

        command = config.create_command(output='elsewhere', workers=1)
        assert command.output == 'elsewhere'
        assert command.workers == 1

    def test_output_root(self, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, '/data/runs')
        assert resolve_output('reports') == os.path.join('/data/runs', 'reports')
        assert resolve_output('/tmp/reports') == '/tmp/reports'
        assert resolve_output(None) is None
        monkeypatch.delenv(OUTPUT_ROOT_ENV)
        assert resolve_output('reports') == 'reports'


class TestCommandSchemas:
    def test_verify_jets(self):
        assert not list(VerifyJets.validate_config({'type': 'VerifyJets', 'scaling': False}))
        assert errors({'type': 'VerifyJets', 'reference': {'grid': 12, 'lambda': 0}}) == [
            'command: (VerifyJets) reference->lambda: 0 is less than the minimum of 1']
        assert errors({'type': 'VerifyJets', 'tolerances': {'unknown': 1}})

        block = {'type': 'VerifyJets', 'reference': {'aliasing_guard': None, 'moment_sweep': [64, 128]},
                 'disjoint': {'placement': 11, 'samples': 100}, 'tolerances': {'identity_coefficients_minimum': 0}}
        assert not list(VerifyJets.validate_config(block))
        assert errors({'type': 'VerifyJets', 'reference': {'moment_sweep': [128, 64]}}) == [
            'command: (VerifyJets) reference->moment_sweep: [128, 64] is not strictly increasing']
        assert errors({'type': 'VerifyJets', 'disjoint': {'grid': 32}})
        assert errors({'type': 'VerifyJets', 'tolerances': {'identity_coefficients': 0}})

    def test_simulate_noise(self):
        block = {'type': 'SimulateNoise', 'grid': 8, 'noise': {'variant': 'linear_scalar'}}
        assert not list(SimulateNoise.validate_config(block))

        messages = errors({**block, 'moments': {'r': 3}})
        assert messages == ['command: (SimulateNoise) moments: r = 3 must be even with '
                            'gamma + delta + delta0 < 1/2 - 2/r']

        messages = errors({**block, 'noise': {'variant': 'linear_matrix', 'scheme': 'milstein'}})
        assert messages == ['command: (SimulateNoise) noise: the milstein scheme requires linear_scalar noise']

        messages = errors({**block, 'oracle': {'paths': 1}})
        assert messages == ['command: (SimulateNoise) oracle->paths: 1 is less than the minimum of 2']

        assert errors({**block, 'paths': 8})
        assert errors({**block, 'noise': {'variant': 'multiplicative'}})

    def test_iterate(self):
        assert not list(Iterate.validate_config(iterate_block()))

        assert errors(iterate_block(mode='stochastic')) == [
            'command: (Iterate) stochastic runs require a noise block']
        assert errors(iterate_block(steps=2)) == ['command: (Iterate) schedule: 2 steps need 3 rows (got 2)']
        assert errors(iterate_block(nonuniqueness={'K1': 0.1, 'K2': 0.2})) == [
            'command: (Iterate) nonuniqueness needs a cauchy run with a toy schedule']

    def test_iterate_rows(self):
        messages = errors(iterate_block(schedule={'mode': 'toy', 'steps': [ROWS[0], {**ROWS[1], 'lambda': 3}]}))
        assert messages == ['command: (Iterate) schedule: step 2: lambda * r_perp = 1.5 is not a positive integer']

        # Cut-off runs need theta on every row
        messages = errors(iterate_block(mode='cauchy'))
        assert 'command: (Iterate) schedule: step 1: missing key \'theta\' (required for cut-off runs)' in messages

        messages = errors(iterate_block(schedule={'mode': 'paper', 'steps': ROWS}))
        assert messages == ['command: (Iterate) schedule: steps are only read in toy mode']

    def test_iterate_resolution(self):
        block = iterate_block(resolution_factor=3, under_resolved=True, aliasing_guard=None,
                              tolerances={'overlap': 1, 'disc_ratio': 0.5, 'osc_int_ratio': 1e-10})
        assert not list(Iterate.validate_config(block))
        assert errors(iterate_block(aliasing_guard=-1)) == [
            'command: (Iterate) aliasing_guard: -1 is less than the minimum of 0']
        assert errors(iterate_block(under_resolved='yes'))

    def test_initial_velocity(self, tmp_path):
        missing = str(tmp_path / 'u0.jfld')
        messages = errors(iterate_block(initial_velocity=missing))
        assert f'command: (Iterate) initial_velocity: {missing} does not exist' in messages


class TestValidators:
    def test_increasing(self):
        schema = {'type': 'array', 'increasing': True}
        assert not list(validation.validation_errors([1, 2, 3], schema, validation.MANIFEST_VALIDATORS))
        found = list(validation.validation_errors([1, 1], schema, validation.MANIFEST_VALIDATORS))
        assert [e.message for e in found] == ['[1, 1] is not strictly increasing']

    def test_even_resolution(self):
        schema = {'even_resolution': True}
        for value in (8, 16, 64):
            assert not list(validation.validation_errors(value, schema, validation.MANIFEST_VALIDATORS))
        for value in (4, 9, 'sixteen'):
            assert list(validation.validation_errors(value, schema, validation.MANIFEST_VALIDATORS))

    def test_validate_config(self, capsys):
        schema = {'type': 'object', 'properties': {'a': {'type': 'integer'}}}
        validation.validate_config({'a': 1}, schema)
        with pytest.raises(validation.ManifestError, match='a: \'x\' is not of type \'integer\''):
            validation.validate_config({'a': 'x'}, schema, print_exception=True)
        assert 'error: invalid manifest:' in capsys.readouterr().out
