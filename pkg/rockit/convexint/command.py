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

"""Base verification command that is extended by the suites"""

import logging
import sys
import traceback
from .constants import CommandStatus
from .report import Report, check


class Command:
    """Base verification command that is extended by the suites"""

    # Default check bounds; manifests may override them through a 'tolerances' block
    TOLERANCES = {}

    def __init__(self, name, **args):
        self.name = name
        self.config = args.get('config', {})
        self.log_name = args.get('log_name', 'convexint')
        self.output = args.get('output')
        self.workers = args.get('workers', 1)
        self.log = logging.getLogger(self.log_name)

        # Succeeded, ChecksFailed or Error once run() returns
        self.status = None
        self.report = Report(self.name, manifest=dict(self.config))

    # pylint: disable=unused-argument
    @classmethod
    def validate_config(cls, config_json):
        """Returns an iterator of schema violations for the given json configuration"""
        return iter(())
    # pylint: enable=unused-argument

    @classmethod
    def tolerances_schema(cls):
        """Schema block accepting overrides for the class tolerances"""
        return {
            'type': 'object',
            'additionalProperties': False,
            'properties': {name: {'type': 'number', 'minimum': 0} for name in cls.TOLERANCES}
        }

    def tolerance(self, name):
        return self.config.get('tolerances', {}).get(name, self.TOLERANCES[name])

    def check(self, name, measured, comparison='le', detail='', bound=None):
        """Adds a check against the (possibly overridden) tolerance called name"""
        result = check(name, measured, self.tolerance(name) if bound is None else bound, comparison, detail)
        if not result.passed:
            self.log.warning('%s: check %s failed (measured %.3e, bound %.3e)', self.name, name,
                             result.measured, result.bound)
        return self.report.add(result)

    def run(self):
        """
        Runs the checks and writes the report
        Exceptions are caught, printed and turned into the Error status
        """
        try:
            self.run_checks()
            self.status = CommandStatus.Succeeded if self.report.passed else CommandStatus.ChecksFailed
        except Exception:
            print('error: exception in command:')
            traceback.print_exc(file=sys.stdout)
            self.log.error('Exception in %s', self.name)
            self.status = CommandStatus.Error
            self.report.data['error'] = traceback.format_exc(limit=1).strip().splitlines()[-1]

        if self.output:
            path = self.report.write(self.output)
            self.log.info('%s: report written to %s', self.name, path)
        return self.status

    def run_checks(self):
        """
        Runs the verification work and adds checks to self.report
        Subclasses override this
        """
        return None
