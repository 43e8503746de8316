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

"""Shared fixtures for the convexint tests"""

import json
import numpy as np
import pytest
from rockit.convexint.fields import FourierGrid, PeriodicField


@pytest.fixture(scope='session')
def grid16():
    return FourierGrid(16)


@pytest.fixture(scope='session')
def grid32():
    return FourierGrid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def shear(grid, amplitude=1.0):
    """(sin x_2, 0, 0): a divergence-free, mean-zero single mode"""
    values = np.zeros((3,) + grid.shape)
    values[0] = amplitude * np.sin(grid.x[1])
    return PeriodicField.from_values(grid, values)


def write_manifest(path, command, **extra):
    """Writes a run manifest wrapping a command block and returns its path"""
    manifest = {'command': command, **extra}
    path.write_text(json.dumps(manifest), encoding='utf-8')
    return str(path)
