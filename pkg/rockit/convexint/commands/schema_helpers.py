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

"""Schema blocks and parsers shared by the commands"""

from rockit.convexint.jets import exact_fraction
from rockit.convexint.noise import INTEGRATION_SCHEMES, NOISE_VARIANTS, NONLINEARITIES, NoiseModel
from rockit.convexint.schedule import EnergyProfile, ScheduleConfig, ToyRow


def grid_schema():
    """Schema block for a grid resolution"""
    return {
        'type': 'integer',
        'even_resolution': True
    }


def positive_schema(exclusive=True):
    return {
        'type': 'number',
        'minimum': 0,
        'exclusiveMinimum': exclusive
    }


def sweep_schema(minimum_items=2):
    """Schema block for a strictly increasing list of positive numbers"""
    return {
        'type': 'array',
        'minItems': minimum_items,
        'increasing': True,
        'items': positive_schema()
    }


def guard_schema():
    """Schema block for an aliasing guard; null measures the aliasing fraction without enforcing it"""
    return {
        'type': ['number', 'null'],
        'minimum': 0
    }


def resolution_sweep_schema():
    """Schema block for a strictly increasing list of grid resolutions"""
    return {
        'type': 'array',
        'minItems': 2,
        'increasing': True,
        'items': grid_schema()
    }


def noise_schema():
    """Schema block for a noise model"""
    return {
        'type': 'object',
        'additionalProperties': False,
        'required': ['variant'],
        'properties': {
            'variant': {
                'type': 'string',
                'enum': list(NOISE_VARIANTS)
            },
            'amplitude': {
                'type': 'number',
                'minimum': 0
            },
            'p0': {
                'type': 'number',
                'minimum': 1,
                'maximum': 2,
                'exclusiveMaximum': True
            },
            'delta0': {
                'type': 'number',
                'minimum': 0,
                'maximum': 0.5,
                'exclusiveMaximum': True
            },
            'lipschitz': positive_schema(),
            'decay': {
                'type': 'number',
                'minimum': 0.75,
                'exclusiveMinimum': True
            },
            'nonlinearity': {
                'type': 'string',
                'enum': list(NONLINEARITIES)
            },
            'modes': {
                'type': 'integer',
                'minimum': 1
            },
            'scheme': {
                'type': 'string',
                'enum': list(INTEGRATION_SCHEMES)
            },

            # Replace lipschitz by a measured constant before running
            'calibrate': {'type': 'boolean'}
        }
    }


def energy_schema():
    """Schema block for the prescribed kinetic energy e(t)"""
    return {
        'type': 'object',
        'additionalProperties': False,
        'required': ['mean'],
        'properties': {
            'mean': positive_schema(),
            'amplitude': {'type': 'number'},
            'period': positive_schema()
        }
    }


def schedule_schema():
    """Schema block for a toy or paper parameter schedule"""
    return {
        'type': 'object',
        'additionalProperties': False,
        'required': ['mode'],
        'properties': {
            'mode': {
                'type': 'string',
                'enum': ['paper', 'toy']
            },

            # Toy rows are validated separately so the messages carry the step index
            'steps': {
                'type': 'array',
                'items': {'type': 'object'}
            },
            'energy': energy_schema(),
            'p0': {
                'type': 'number',
                'minimum': 1,
                'maximum': 2,
                'exclusiveMaximum': True
            },
            'delta0': positive_schema(exclusive=False),
            'gamma': positive_schema(),
            'r0': {
                'type': 'integer',
                'minimum': 1
            },
            'c': positive_schema(),
            'alpha0': positive_schema(),
            'M0': {
                'type': 'integer',
                'minimum': 2
            },
            'N0': {
                'type': 'integer',
                'minimum': 1
            },
            'Xi': {
                'type': 'integer',
                'minimum': 2
            },
            'max_bits': {
                'type': 'integer',
                'minimum': 64
            },
            'runnable_lambda': {
                'type': 'integer',
                'minimum': 1
            }
        }
    }


def parse_noise(block):
    """NoiseModel from a validated noise block (the scheme and calibrate keys are handled by the caller)"""
    keys = ('variant', 'amplitude', 'p0', 'delta0', 'lipschitz', 'decay', 'nonlinearity', 'modes')
    return NoiseModel(**{k: block[k] for k in keys if k in block})


def parse_schedule(block, cauchy=False):
    """ScheduleConfig from a validated schedule block"""
    args = {
        'mode': block['mode'],
        'rows': [ToyRow.from_json(row) for row in block.get('steps', [])],
        'cauchy': cauchy
    }

    if 'energy' in block:
        args['energy'] = EnergyProfile(**block['energy'])

    for key in ('p0', 'delta0', 'gamma', 'alpha0'):
        if key in block:
            args[key] = exact_fraction(block[key])

    for key in ('r0', 'c', 'M0', 'N0', 'Xi', 'max_bits', 'runnable_lambda'):
        if key in block:
            args[key] = block[key]

    return ScheduleConfig(**args)
