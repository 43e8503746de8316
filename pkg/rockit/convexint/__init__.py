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

"""Stochastic convex integration for the Navier-Stokes equations on the three-torus"""

from .config import Config
from .constants import CheckStatus, CommandStatus, IterationMode
from .command import Command
from .fields import FourierGrid, PeriodicField, SpaceTimeField
from .jets import DirectionSet, JetParameters, build_direction_set, synthesize_jet
from .noise import NoiseModel, WienerPath, integrate_z
from .report import CheckResult, Report
from .schedule import ScheduleConfig, ToyRow, schedule
from .scheme import IterationSettings, initial_state, iterate, run
from .validation import ManifestError
