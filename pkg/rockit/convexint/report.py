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

"""Check results and json/csv report output"""

from dataclasses import dataclass, field
from fractions import Fraction
import glob
import json
import math
import os
import numpy as np
from astropy.table import Table
from .constants import REPORT_SCHEMA_VERSION, CheckStatus


@dataclass
class CheckResult:
    """Outcome of one verification check"""
    check: str
    measured: float
    bound: float
    status: int
    detail: str = ''

    @property
    def passed(self):
        return self.status != CheckStatus.Failed

    def as_dict(self):
        return {
            'check': self.check,
            'measured': self.measured,
            'bound': self.bound,
            'pass': self.passed,
            'status': CheckStatus.label(self.status),
            'detail': self.detail
        }


def check(name, measured, bound, comparison='le', detail=''):
    """
    Compares a measured value against its bound

    comparison 'le' passes when measured <= bound and 'ge' when measured >= bound.
    Non-finite measurements always fail.
    """
    if comparison not in ('le', 'ge'):
        raise ValueError(f'unknown comparison \'{comparison}\'')

    measured = float(measured)
    bound = float(bound)
    if not math.isfinite(measured):
        passed = False
    elif comparison == 'le':
        passed = measured <= bound
    else:
        passed = measured >= bound
    return CheckResult(name, measured, bound, CheckStatus.Passed if passed else CheckStatus.Failed, detail)


def skipped(name, detail):
    return CheckResult(name, math.nan, math.nan, CheckStatus.Skipped, detail)


def jsonable(value):
    """Converts numpy scalars, arrays, Fractions and nested containers into json types"""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # json has no representation for nan or inf
        return value if math.isfinite(value) else str(value)
    if isinstance(value, Fraction):
        return str(value)
    return value


@dataclass
class Report:
    """Checks, data and tables produced by one command"""
    command: str
    manifest: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def add(self, result):
        self.checks.append(result)
        return result

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self):
        for c in self.checks:
            if not c.passed:
                return c
        return None

    def as_dict(self):
        return {
            'schema_version': REPORT_SCHEMA_VERSION,
            'command': self.command,
            'manifest': self.manifest,
            'passed': self.passed,
            'checks': [c.as_dict() for c in self.checks],
            'data': self.data,
            'tables': sorted(self.tables)
        }

    def write(self, directory):
        """Writes <command>.json and one <command>-<table>.csv per table; returns the json path"""
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, f'{self.command}.json')
        with open(path, 'w', encoding='utf-8') as output:
            json.dump(jsonable(self.as_dict()), output, indent=2, sort_keys=True)
            output.write('\n')

        for name, table in self.tables.items():
            table.write(os.path.join(directory, f'{self.command}-{name}.csv'), format='ascii.csv', overwrite=True)
        return path


def load_report(path):
    with open(path, 'r', encoding='utf-8') as report_file:
        report = json.load(report_file)

    version = report.get('schema_version')
    if version != REPORT_SCHEMA_VERSION:
        raise ValueError(f'{path} has unsupported report schema version {version}')
    return report


def _number(value):
    # Skipped checks store nan as a string
    return float(value) if isinstance(value, (int, float)) and not isinstance(value, bool) else math.nan


def collect_reports(directory):
    """Summary table (command, check, measured, bound, pass) of every json report in a directory"""
    paths = sorted(glob.glob(os.path.join(directory, '*.json')))
    if not paths:
        raise ValueError(f'no reports found in {directory}')

    rows = []
    for path in paths:
        report = load_report(path)
        for entry in report['checks']:
            measured = _number(entry['measured'])
            bound = _number(entry['bound'])
            rows.append((report['command'], entry['check'], measured, bound, entry['pass']))

    if not rows:
        return Table(names=('command', 'check', 'measured', 'bound', 'pass'), dtype=(str, str, float, float, bool))
    return Table(rows=rows, names=('command', 'check', 'measured', 'bound', 'pass'))
