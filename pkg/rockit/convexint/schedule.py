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

"""Helper functions for validating and evaluating iteration parameter schedules"""

# pylint: disable=too-many-instance-attributes

from dataclasses import dataclass, field
from fractions import Fraction
import math
import sys
import traceback
import numpy as np
from .jets import JetParameters, exact_fraction
from . import validation

# Exact values with more bits than this are reported as magnitudes
DEFAULT_MAGNITUDE_BITS = 4096

# Largest frequency that a desk-scale grid can resolve
DEFAULT_RUNNABLE_LAMBDA = 64

TOY_ROW_SCHEMA = {
    'type': 'object',
    'additionalProperties': False,
    'required': ['epsilon', 'ell', 'lambda', 'zeta', 'r_perp', 'r_par', 'mu'],
    'toy_row': True,
    'properties': {
        'epsilon': {'type': 'number', 'exclusiveMinimum': True, 'minimum': 0},
        'ell': {'type': 'number', 'exclusiveMinimum': True, 'minimum': 0},
        'lambda': {'type': 'number', 'exclusiveMinimum': True, 'minimum': 0},
        'zeta': {'type': 'number', 'minimum': 1},
        'r_perp': {'type': 'number'},
        'r_par': {'type': 'number'},
        'mu': {'type': 'number', 'exclusiveMinimum': True, 'minimum': 0},
        'kappa': {'type': 'number', 'exclusiveMinimum': True, 'minimum': 0},
        'theta': {'type': 'number', 'exclusiveMinimum': True, 'minimum': 0}
    }
}


@dataclass(frozen=True)
class Magnitude:
    """A positive number too large or small to evaluate, held as its base-2 logarithm"""
    log2: float

    def __float__(self):
        if self.log2 > 1023:
            return math.inf
        if self.log2 < -1074:
            return 0.0
        return 2.0 ** self.log2

    def __str__(self):
        return f'2^({self.log2:.6g})'


def _log2(value):
    if isinstance(value, Magnitude):
        return value.log2
    if isinstance(value, Fraction):
        return math.log2(value.numerator) - math.log2(value.denominator)
    return math.log2(value)


def _bits(value):
    if isinstance(value, Fraction):
        return max(value.numerator.bit_length(), value.denominator.bit_length())
    if isinstance(value, int):
        return value.bit_length()
    return 0


def _settle(value, max_bits):
    """Demotes exact values with too many bits to a Magnitude"""
    if isinstance(value, Magnitude):
        return value
    if _bits(value) > max_bits:
        return Magnitude(_log2(value))
    return value


def _exact_power(base, exponent, max_bits):
    """
    base ** exponent for a positive Fraction base and a Fraction exponent

    The result is exact when the exponent is an integer, or when base is a
    perfect power that makes it one. Everything else becomes a Magnitude.
    """
    exponent = Fraction(exponent)
    log2 = _log2(base) * float(exponent)
    if abs(log2) > max_bits:
        return Magnitude(log2)

    if not isinstance(base, Magnitude):
        if exponent.denominator == 1:
            return _settle(Fraction(base) ** int(exponent), max_bits)

        # Dyadic bases 2^k give exact powers whenever k * exponent is integral
        base = Fraction(base)
        for part in (base.numerator, base.denominator):
            if part & (part - 1):
                return Magnitude(log2)
        k = Fraction(base.numerator.bit_length() - base.denominator.bit_length())
        power = k * exponent
        if power.denominator == 1:
            return _settle(Fraction(2) ** int(power), max_bits)
    return Magnitude(log2)


def value_label(value):
    """Human readable label for exact, float or symbolic schedule values"""
    if isinstance(value, Magnitude):
        return str(value)
    if isinstance(value, Fraction):
        return str(value) if value.denominator != 1 else str(value.numerator)
    return f'{value:g}' if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class EnergyProfile:
    """
    Prescribed kinetic energy e(t) = mean + amplitude sin(2 pi t / period)

    The bounds e_lower = mean - |amplitude| and e_upper = mean + |amplitude|
    must be positive.
    """
    mean: float
    amplitude: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        if not self.mean - abs(self.amplitude) > 0:
            raise ValueError(f'energy profile lower bound {self.mean - abs(self.amplitude):g} is not positive')
        if not self.period > 0:
            raise ValueError(f'energy profile period {self.period} is not positive')

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.mean + self.amplitude * np.sin(2 * np.pi * t / self.period)

    @property
    def lower(self):
        return self.mean - abs(self.amplitude)

    @property
    def upper(self):
        return self.mean + abs(self.amplitude)

    def as_dict(self):
        return {'mean': self.mean, 'amplitude': self.amplitude, 'period': self.period}


@dataclass(frozen=True)
class ToyRow:
    """One explicit step of a toy schedule"""
    epsilon: float
    ell: float
    lam: int
    zeta: float
    r_perp: Fraction
    r_par: float
    mu: float
    kappa: float = None
    theta: float = None

    @classmethod
    def from_json(cls, block):
        return cls(block['epsilon'], block['ell'], block['lambda'], block['zeta'],
                   exact_fraction(block['r_perp']), block['r_par'], block['mu'],
                   block.get('kappa'), block.get('theta'))

    def as_dict(self):
        row = {
            'epsilon': self.epsilon,
            'ell': self.ell,
            'lambda': self.lam,
            'zeta': self.zeta,
            'r_perp': float(self.r_perp),
            'r_par': self.r_par,
            'mu': self.mu
        }
        if self.kappa is not None:
            row['kappa'] = self.kappa
        if self.theta is not None:
            row['theta'] = self.theta
        return row


@dataclass
class ScheduleConfig:
    """
    Parameter schedule of the iteration

    paper mode evaluates the closed-form double exponential schedule from
    the constants p0, delta0, gamma, r0, c, alpha0, M0, N0 and Xi; toy mode
    replays an explicit list of ToyRow steps. cauchy switches to the variant
    with a time cut-off and constant energy increments theta_q.
    """
    mode: str = 'toy'
    rows: list = field(default_factory=list)
    energy: EnergyProfile = None
    cauchy: bool = False
    p0: Fraction = Fraction(3, 2)
    delta0: Fraction = Fraction(1, 20)
    gamma: Fraction = Fraction(1, 20)
    r0: int = 1
    c: float = 1.0
    alpha0: Fraction = Fraction(2)
    M0: int = 2
    N0: int = 8
    Xi: int = 2 ** 10
    max_bits: int = DEFAULT_MAGNITUDE_BITS
    runnable_lambda: int = DEFAULT_RUNNABLE_LAMBDA

    def __post_init__(self):
        if self.mode not in ('paper', 'toy'):
            raise ValueError(f'unknown schedule mode \'{self.mode}\'')
        if self.mode == 'toy':
            valid, messages = validate_toy_rows([r.as_dict() for r in self.rows], self.cauchy)
            if not valid:
                raise validation.ManifestError(messages)
        if not self.cauchy and self.energy is None:
            self.energy = EnergyProfile(1.0)

    @property
    def steps(self):
        """Number of available toy steps (paper mode is unbounded)"""
        return len(self.rows) if self.mode == 'toy' else None

    def theta(self, q):
        """Cauchy-mode energy increment theta_q"""
        if self.mode == 'toy':
            return _row(self, q).theta
        return float(Fraction(1, 2 ** (2 * q)))


@dataclass
class StepParameters:
    """Parameters of step q, exact where possible"""
    q: int
    epsilon: object
    ell: object
    lam: object
    zeta: object
    r_perp: object
    r_par: object
    mu: object
    kappa: object = None
    theta: float = None
    runnable: bool = True

    def jet_parameters(self, grid=None):
        """JetParameters for the building blocks of this step"""
        if not self.runnable:
            raise ValueError(f'step {self.q} parameters are not runnable (lambda = {value_label(self.lam)})')
        return JetParameters(self.r_perp, float(self.r_par), self.lam, float(self.mu), grid)

    def as_dict(self):
        data = {
            'q': self.q,
            'epsilon': value_label(self.epsilon),
            'ell': value_label(self.ell),
            'lambda': value_label(self.lam),
            'zeta': value_label(self.zeta),
            'r_perp': value_label(self.r_perp),
            'r_par': value_label(self.r_par),
            'mu': value_label(self.mu),
            'runnable': self.runnable
        }
        if self.kappa is not None:
            data['kappa'] = value_label(self.kappa)
        if self.theta is not None:
            data['theta'] = self.theta
        return data


def _row(config, q):
    if not 1 <= q <= len(config.rows):
        raise ValueError(f'toy schedule has {len(config.rows)} steps (requested q = {q})')
    return config.rows[q - 1]


def epsilon(config, q):
    """epsilon_q = 2^(-q-3) for q <= 1 and Xi^(-alpha0 M0^(q-2)) after (epsilon_1 = 1 in the cut-off variant)"""
    if q <= 1:
        if config.cauchy and q == 1:
            return Fraction(1)
        return Fraction(1, 2 ** (q + 3))
    exponent = -Fraction(config.alpha0) * Fraction(config.M0) ** (q - 2)
    return _exact_power(Fraction(config.Xi), exponent, config.max_bits)


def epsilon_value(config, q):
    """epsilon_q as a float; toy rows supply their own values for q >= 1"""
    if config.mode == 'toy' and q >= 1:
        return float(_row(config, q).epsilon)
    return float(epsilon(config, q))


def ell(config, q, measured_lambda=1.0):
    """ell_1 = 1/2, afterwards ell_q^gamma Lambda_(q-1) = epsilon_q^N0"""
    if q == 1:
        return Fraction(1, 2)
    eps = epsilon(config, q)
    if measured_lambda == 1:
        return _exact_power(eps, Fraction(config.N0) / Fraction(config.gamma), config.max_bits)
    log2 = (config.N0 * _log2(eps) - math.log2(measured_lambda)) / float(config.gamma)
    if abs(log2) > config.max_bits:
        return Magnitude(log2)
    return 2.0 ** log2


def _frequency_base(config, ell_q):
    """floor(ell^(-3p0/(2-p0)) + ell^(-40) [+ ell^(-10gamma/3)]) + 1"""
    p0 = Fraction(config.p0)
    exponents = [Fraction(3) * p0 / (2 - p0), Fraction(40)]
    if config.cauchy:
        exponents.append(Fraction(10) * Fraction(config.gamma) / 3)

    if isinstance(ell_q, float):
        logs = [-float(e) * math.log2(ell_q) for e in exponents]
        if max(logs) > 52:
            return Magnitude(max(logs))
        return math.floor(sum(2.0 ** x for x in logs)) + 1

    inverse = _exact_power(ell_q, -1, config.max_bits)
    powers = [_exact_power(inverse, e, config.max_bits) for e in exponents]
    if any(isinstance(p, Magnitude) for p in powers):
        return Magnitude(max(_log2(p) for p in powers))
    return math.floor(sum(powers)) + 1


def frequency(config, ell_q):
    """lambda_q = (floor(ell^(-3p0/(2-p0)) + ell^(-40) [+ ell^(-10gamma/3)]) + 1)^8"""
    base = _frequency_base(config, ell_q)
    if isinstance(base, Magnitude):
        return Magnitude(8 * base.log2)
    if 8 * base.bit_length() > config.max_bits:
        return Magnitude(8 * math.log2(base))
    return base ** 8


def schedule(config, q, measured_lambda=1.0):
    """
    Parameters of step q

    Toy mode returns the validated table row. Paper mode evaluates the
    closed forms exactly; values beyond the magnitude bound are returned as
    Magnitude instances and the step is flagged not runnable. The jet
    parameters follow r_perp = lambda^(-7/8), r_par = lambda^(-1/2) and
    mu = lambda^(5/4) for lambda = n^8.
    """
    if q < 1:
        raise ValueError(f'schedule steps start at q = 1 (requested q = {q})')

    if config.mode == 'toy':
        row = _row(config, q)
        kappa = row.kappa
        if config.cauchy and kappa is None:
            kappa = row.ell ** 0.25
        return StepParameters(q, row.epsilon, row.ell, row.lam, row.zeta, row.r_perp, row.r_par, row.mu,
                              kappa, row.theta, row.lam <= config.runnable_lambda)

    eps = epsilon(config, q)
    ell_q = ell(config, q, measured_lambda)
    lam = frequency(config, ell_q)
    zeta = Fraction(2) if q == 1 else (_exact_power(ell_q, -1, config.max_bits)
                                       if not isinstance(ell_q, float) else 1 / ell_q)

    if isinstance(lam, Magnitude):
        r_perp = Magnitude(-7 * lam.log2 / 8)
        r_par = Magnitude(-lam.log2 / 2)
        mu = Magnitude(5 * lam.log2 / 4)
    else:
        n = _frequency_base(config, ell_q)
        r_perp = Fraction(1, n ** 7)
        r_par = Fraction(1, n ** 4)
        mu = n ** 10

    kappa = None
    theta = None
    if config.cauchy:
        kappa = _exact_power(ell_q, Fraction(1, 4), config.max_bits) if not isinstance(ell_q, float) \
            else ell_q ** 0.25
        theta = config.theta(q)

    runnable = not isinstance(lam, Magnitude) and lam <= config.runnable_lambda
    return StepParameters(q, eps, ell_q, lam, zeta, r_perp, r_par, mu, kappa, theta, runnable)


def time_cutoff(t, kappa):
    """
    Smooth cut-off chi(t) with chi = 0 for t <= kappa and chi = 1 for t >= 2 kappa

    Returns (chi, dchi/dt) evaluated at t.
    """
    if not kappa > 0:
        raise ValueError(f'cut-off time kappa = {kappa} is not positive')

    t = np.asarray(t, dtype=float)
    s = (t - kappa) / kappa

    def h(x):
        inside = x > 0
        safe = np.where(inside, x, 1)
        return np.where(inside, np.exp(-1 / safe), 0.0)

    def dh(x):
        inside = x > 0
        safe = np.where(inside, x, 1)
        return np.where(inside, np.exp(-1 / safe) / safe ** 2, 0.0)

    a, b = h(s), h(1 - s)
    total = a + b
    chi = a / total
    dchi = (dh(s) * b + a * dh(1 - s)) / total ** 2 / kappa
    return chi, dchi


def _validate_row(index, block, cauchy):
    """Validates a toy row and returns a list of any schema or admissibility violations"""
    try:
        errors = list(validation.format_errors(validation.validation_errors(block, TOY_ROW_SCHEMA,
                                                                  validation.MANIFEST_VALIDATORS)))
        if cauchy and 'theta' not in block:
            errors.append('missing key \'theta\' (required for cut-off runs)')
    except Exception:
        errors = ['exception while validating']
        traceback.print_exc(file=sys.stdout)

    # Prefix each message with the step index
    return [f'step {index + 1}: ' + e for e in errors]


def validate_toy_rows(rows, cauchy=False):
    """
    Tests whether a list of json rows defines a valid toy schedule
    Returns a tuple of (valid, messages) where:
       valid is a boolean indicating whether the schedule is valid
       messages is a list of strings describing errors in the schedule
    """
    if not isinstance(rows, list) or not rows:
        return False, ['steps: must be a non-empty list']

    errors = []
    for i, row in enumerate(rows):
        errors.extend(_validate_row(i, row, cauchy))

    is_valid = len(errors) == 0

    # Violating the halving of epsilon or the sum of theta^(1/2) only
    # weakens the bounds being measured, so report them without failing
    if is_valid:
        for i, (a, b) in enumerate(zip(rows, rows[1:]), start=2):
            if b['epsilon'] > a['epsilon'] / 2:
                errors.append(f'info: step {i}: epsilon = {b["epsilon"]:g} exceeds half of the previous step')
        if cauchy:
            total = sum(math.sqrt(r['theta']) for r in rows)
            errors.append(f'info: sum of theta^(1/2) over the schedule is {total:g}')

    return is_valid, errors
