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

"""Helper function to validate and parse the json run manifest"""

import json
import os
import jsonschema
from . import validation
from .commands import Iterate, SimulateNoise, VerifyJets, VerifyOperators
from .constants import OUTPUT_ROOT_ENV

COMMANDS = {
    'VerifyOperators': VerifyOperators,
    'VerifyJets': VerifyJets,
    'SimulateNoise': SimulateNoise,
    'Iterate': Iterate
}

CONFIG_SCHEMA = {
    'type': 'object',
    'additionalProperties': False,
    'required': ['command'],
    'properties': {
        'log_name': {
            'type': 'string'
        },
        'output': {
            'type': 'string'
        },
        'workers': {
            'type': 'integer',
            'minimum': 1
        },
        'command': {
            'type': 'object',
            'command': True
        }
    }
}


# pylint: disable=unused-argument
def command_validator(validator, value, instance, schema):
    """Validate a command block against the schema of the command class it names"""
    if not isinstance(instance, dict):
        return

    if 'type' not in instance:
        yield jsonschema.ValidationError("missing key 'type'")
        return

    command = COMMANDS.get(instance['type'])
    if command is None:
        yield jsonschema.ValidationError(f'unknown command type \'{instance["type"]}\'')
        return

    # Prefix each message with the command type
    for message in validation.format_errors(command.validate_config(instance)):
        yield jsonschema.ValidationError(f'({instance["type"]}) {message}')
# pylint: enable=unused-argument


def resolve_output(output):
    """Prefixes a relative output directory with $CONVEXINT_OUTPUT_ROOT when it is set"""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if output is None or root is None or os.path.isabs(output):
        return output
    return os.path.join(root, output)


class Config:
    """Run manifest parsed from a json object"""
    def __init__(self, config_json):
        # Will throw on schema violations
        validation.validate_config(config_json, CONFIG_SCHEMA, {
            'command': command_validator
        })

        self.log_name = config_json.get('log_name', 'convexint')
        self.output = config_json.get('output')
        self.workers = config_json.get('workers', 1)
        self.command_json = config_json['command']
        self.command_type = COMMANDS[self.command_json['type']]

    @classmethod
    def load(cls, config_filename):
        # Will throw on file not found or invalid json
        with open(config_filename, 'r', encoding='utf-8') as config_file:
            config_json = json.load(config_file)
        return cls(config_json)

    def to_json(self):
        """Canonical manifest; Config(config.to_json()) == config"""
        config_json = {
            'log_name': self.log_name,
            'workers': self.workers,
            'command': self.command_json
        }
        if self.output is not None:
            config_json['output'] = self.output
        return config_json

    def __eq__(self, other):
        return isinstance(other, Config) and self.to_json() == other.to_json()

    def create_command(self, output=None, workers=None):
        """Instantiates the command with optional overrides for the output directory and worker count"""
        return self.command_type(
            config=self.command_json,
            log_name=self.log_name,
            output=resolve_output(output if output is not None else self.output),
            workers=workers if workers is not None else self.workers)
