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

"""Constants and status codes used by convexint"""

# Version written into every json report
REPORT_SCHEMA_VERSION = 1

# Binary field snapshot header
SNAPSHOT_MAGIC = b'JFLD'
SNAPSHOT_VERSION = 1

# Environment variable that prefixes relative output directories
OUTPUT_ROOT_ENV = 'CONVEXINT_OUTPUT_ROOT'


class CommandStatus:
    """Numeric return codes"""
    Succeeded = 0
    ChecksFailed = 1
    InvalidManifest = 2
    Error = 3

    _messages = {
        1: 'error: one or more checks failed',
        2: 'error: invalid run manifest',
        3: 'error: command raised an exception',
    }

    @classmethod
    def message(cls, error_code):
        """Returns a human readable string describing an error code"""
        if error_code in cls._messages:
            return cls._messages[error_code]
        return f'error: Unknown error code {error_code}'


class CheckStatus:
    """Outcome of a single verification check"""
    Failed, Passed, Skipped = range(3)

    _labels = {
        0: 'FAIL',
        1: 'PASS',
        2: 'SKIP'
    }

    @classmethod
    def label(cls, status):
        """Returns a human readable string describing a status"""
        if status in cls._labels:
            return cls._labels[status]
        return 'UNKNOWN'


class IterationMode:
    """Flavour of the convex integration run"""
    Deterministic, Stochastic, Cauchy = range(3)

    _labels = {
        0: 'deterministic',
        1: 'stochastic',
        2: 'cauchy'
    }

    @classmethod
    def label(cls, mode):
        """Returns the manifest name of a mode"""
        if mode in cls._labels:
            return cls._labels[mode]
        return 'unknown'

    @classmethod
    def parse(cls, label):
        """Returns the mode matching a manifest name"""
        for mode, value in cls._labels.items():
            if value == label:
                return mode
        raise ValueError(f'unknown iteration mode \'{label}\'')
