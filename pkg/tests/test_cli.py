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


"""Tests for the command line entry point and the command base class"""

import json
import pytest
from rockit.convexint.cli import main
from rockit.convexint.command import Command
from rockit.convexint.config import Config
from rockit.convexint.constants import OUTPUT_ROOT_ENV, CheckStatus, CommandStatus
from rockit.convexint.report import Report, check, load_report
from conftest import write_manifest

OPERATORS = {'type': 'VerifyOperators', 'grid': 16, 'samples': 1}


@pytest.fixture(autouse=True)
def no_output_root(monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)


class Broken(Command):
    TOLERANCES = {'value': 1.0}

    def __init__(self, **args):
        super().__init__('broken', **args)

    def run_checks(self):
        self.check('value', 0.5)
        raise RuntimeError('singular stress')


class Failing(Command):
    TOLERANCES = {'value': 1.0}

    def __init__(self, **args):
        super().__init__('failing', **args)

    def run_checks(self):
        self.check('value', 2.0)
        self.check('value', 2.0, comparison='ge', bound=1.0)


class TestCommand:
    def test_tolerance_override(self):
        command = Failing(config={'tolerances': {'value': 3.0}})
        assert command.tolerance('value') == 3.0
        assert command.run() == CommandStatus.Succeeded

    def test_checks_failed(self):
        command = Failing()
        assert command.run() == CommandStatus.ChecksFailed
        assert [c.status for c in command.report.checks] == [CheckStatus.Failed, CheckStatus.Passed]

    def test_exception(self, tmp_path, capsys):
        command = Broken(output=str(tmp_path))
        assert command.run() == CommandStatus.Error
        assert 'RuntimeError: singular stress' in capsys.readouterr().out

        report = load_report(str(tmp_path / 'broken.json'))
        assert report['data']['error'] == 'RuntimeError: singular stress'
        assert report['checks'][0]['pass'] is True

    def test_tolerances_schema(self):
        schema = Failing.tolerances_schema()
        assert list(schema['properties']) == ['value']
        assert schema['additionalProperties'] is False


class TestMain:
    def test_usage(self, capsys):
        assert main([]) == CommandStatus.InvalidManifest
        assert main(['observe']) == CommandStatus.InvalidManifest
        assert 'verify-operators' in capsys.readouterr().out

    def test_verify_operators(self, tmp_path):
        manifest = write_manifest(tmp_path / 'operators.json', OPERATORS)
        output = tmp_path / 'reports'
        assert main(['verify-operators', manifest, '--output', str(output)]) == CommandStatus.Succeeded

        report = load_report(str(output / 'verify_operators.json'))
        assert report['passed'] is True
        assert report['manifest'] == OPERATORS
        assert (output / 'verify_operators-zeta_sweep.csv').exists()
        assert (output / 'verify_operators-bilinear_refinement.csv').exists()
        checks = {c['check'] for c in report['checks']}
        assert {'parseval', 'heat_semigroup', 'truncation_growth', 'bilinear_refinement'} <= checks

        assert main(['report', str(output)]) == CommandStatus.Succeeded
        assert (output / 'summary.csv').exists()

    def test_invalid_manifests(self, tmp_path, capsys):
        assert main(['verify-operators', str(tmp_path / 'missing.json')]) == CommandStatus.InvalidManifest

        broken = tmp_path / 'broken.json'
        broken.write_text('{"command": ', encoding='utf-8')
        assert main(['verify-operators', str(broken)]) == CommandStatus.InvalidManifest

        invalid = write_manifest(tmp_path / 'invalid.json', {**OPERATORS, 'grid': 9})
        assert main(['verify-operators', invalid]) == CommandStatus.InvalidManifest
        assert 'grid: 9 is not an even resolution' in capsys.readouterr().out

        # The manifest is valid but names another command
        manifest = write_manifest(tmp_path / 'operators.json', OPERATORS)
        assert main(['verify-jets', manifest]) == CommandStatus.InvalidManifest
        assert 'defines a VerifyOperators command, not VerifyJets' in capsys.readouterr().out

    def test_report_failures(self, tmp_path):
        assert main(['report', str(tmp_path)]) == CommandStatus.Error

        report = Report('suite')
        report.add(check('bound', 2.0, 1.0))
        report.write(str(tmp_path))
        assert main(['report', str(tmp_path), '--output', str(tmp_path / 'table.csv')]) == \
            CommandStatus.ChecksFailed
        assert (tmp_path / 'table.csv').exists()


def test_paper_schedule_is_skipped(tmp_path):
    """Paper-mode frequencies are far beyond any grid, so the iteration is reported as skipped"""
    block = {
        'type': 'Iterate',
        'mode': 'deterministic',
        'grid': 32,
        'dt': 0.01,
        'schedule': {'mode': 'paper'},
        'print_schedule': 3
    }
    command = Config({'command': block}).create_command(output=str(tmp_path))
    assert command.run() == CommandStatus.Succeeded

    report = json.loads((tmp_path / 'iterate.json').read_text(encoding='utf-8'))
    assert [c['status'] for c in report['checks']] == ['SKIP']
    assert len(report['data']['schedule']) == 3
    assert report['data']['schedule'][0]['runnable'] is False
    assert (tmp_path / 'iterate-schedule.csv').exists()
