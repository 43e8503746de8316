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

"""Convex integration iteration: amplitudes, perturbations and the Reynolds stress"""

# pylint: disable=too-many-arguments
# pylint: disable=too-many-locals
# pylint: disable=too-many-instance-attributes
# pylint: disable=too-many-statements
# pylint: disable=cell-var-from-loop

from dataclasses import dataclass, field, replace
import logging
import math
import numpy as np
from astropy.table import Table
from .calculus import MollifierSpec, bilinear_antidivergence, curl_curl, differential, finite_difference, \
    inverse_divergence, mollify, time_derivative
from .constants import IterationMode
from .fields import VOLUME, PeriodicField, SpaceTimeField, holder_time_norm, lebesgue_norm, leray_project, \
    product, spectral_projector, traceless_part, traceless_sym_product, truncate
from .jets import ALIASING_GUARD, RESOLUTION_FACTOR, build_direction_set, build_profiles, synthesize_jet
from .noise import WienerPath, integrate_z, run_ensemble, tail_field
from .schedule import epsilon_value, schedule, time_cutoff

log = logging.getLogger(__name__)

# Largest fraction of space-time points whose amplitude may be clamped
CLAMP_BUDGET = 1e-3

# Pointwise tolerance of the cancellation identity, relative to max(1, sup rho)
CANCELLATION_TOLERANCE = 1e-10

STRESS_TERMS = ('osc_x', 'osc_t', 'osc_int', 'disc', 'cor', 'lin_w', 'lin_z', 'noise', 'comm1', 'comm2',
                'mol', 'cut')

# (n, p) pairs reported for M_q(n, p)
DEFAULT_GROWTH_ORDERS = ((1, 1), (2, 1), (1, 2))

# Frames cached by an AmplitudeSeries (the causal stencil needs five)
AMPLITUDE_CACHE = 8


@dataclass
class IterationSettings:
    """Numerical settings shared by every step of a run"""
    mode: int
    grid: object
    dt: float
    horizon: float = 1.0
    c: float = 1.0
    noise: object = None
    paths: int = 1
    seed: int = 0
    u0: PeriodicField = None
    resolution_factor: float = RESOLUTION_FACTOR
    aliasing_guard: float = ALIASING_GUARD
    under_resolved: bool = False
    placement: int = 8
    require_disjoint: bool = False
    r0: int = 1
    gamma: float = 0.05
    clamp_budget: float = CLAMP_BUDGET
    growth_orders: tuple = DEFAULT_GROWTH_ORDERS
    workers: int = 1

    def __post_init__(self):
        if self.mode not in (IterationMode.Deterministic, IterationMode.Stochastic, IterationMode.Cauchy):
            raise ValueError(f'unknown iteration mode {self.mode}')
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError(f'time step {self.dt} and horizon {self.horizon} must be positive')
        if abs(self.horizon / self.dt - round(self.horizon / self.dt)) > 1e-9:
            raise ValueError(f'horizon {self.horizon} is not a multiple of the time step {self.dt}')
        if self.mode == IterationMode.Stochastic and self.noise is None:
            raise ValueError('stochastic runs require a noise model')
        if self.mode == IterationMode.Deterministic:
            self.noise = None
            self.paths = 1
        if self.paths < 1:
            raise ValueError(f'an ensemble needs at least one path (got {self.paths})')
        if self.resolution_factor < RESOLUTION_FACTOR:
            if not self.under_resolved:
                raise ValueError(f'resolution factor {self.resolution_factor:g} is below the resolution rule '
                                 f'N >= {RESOLUTION_FACTOR} n_* lambda; set under_resolved to run anyway')
            log.warning('running under-resolved: N >= %g n_* lambda instead of %d n_* lambda',
                        self.resolution_factor, RESOLUTION_FACTOR)

    @property
    def steps_to_horizon(self):
        return int(round(self.horizon / self.dt))


@dataclass
class PathState:
    """Level q fields of one sample path"""
    v: SpaceTimeField
    R: SpaceTimeField
    z: SpaceTimeField
    zbar: SpaceTimeField


@dataclass
class IterationState:
    """Level q of the iteration across the ensemble"""
    q: int
    paths: list
    wiener: list = None
    tail: SpaceTimeField = None
    ledger: list = field(default_factory=list)

    @property
    def t0(self):
        return self.paths[0].v.t0

    @property
    def dt(self):
        return self.paths[0].v.dt

    @property
    def times(self):
        return self.paths[0].v.times


@dataclass
class EnergyGap:
    """theta_q(t) and delta E_q(t) sampled on the level q frames"""
    times: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    kinetic: np.ndarray

    def mollified(self, spec):
        """theta_q *_t phi_ell on the frames of the mollified level"""
        delay = spec.frame_delay
        out = np.zeros(len(self.theta) - delay)
        for j, w in enumerate(spec.weights, start=1):
            out += w * self.theta[delay - j:len(self.theta) - j]
        return out


@dataclass
class Amplitudes:
    """rho (after clamping), the unclamped rho and a_xi values (6, N, N, N) at one frame"""
    rho: np.ndarray
    rho_formula: np.ndarray
    a: np.ndarray
    clamped: int


@dataclass
class Perturbation:
    """Perturbation parts at one frame; the cut-off is applied to principal, corrector and temporal"""
    principal: PeriodicField
    corrector: PeriodicField
    temporal: PeriodicField
    w: PeriodicField
    W_pc: PeriodicField
    W_t: PeriodicField
    dW_pc: PeriodicField
    dW_t: PeriodicField
    chi: float = 1.0
    dchi: float = 0.0


@dataclass
class StressBreakdown:
    """Every Reynolds stress term as a SpaceTimeField on the new level"""
    terms: dict

    @property
    def total(self):
        total = None
        for name in STRESS_TERMS:
            total = self.terms[name] if total is None else total + self.terms[name]
        return total

    def norms(self, descriptor='L1'):
        """sup over frames of the spatial norm of each term"""
        p = math.inf if descriptor == 'Linf' else float(descriptor[1:])
        return {name: max(lebesgue_norm(f, p) for f in self.terms[name]) for name in STRESS_TERMS}


@dataclass
class ResidualReport:
    times: np.ndarray
    norms: np.ndarray
    scale: float

    @property
    def sup(self):
        return float(np.max(self.norms))

    @property
    def relative(self):
        return self.sup / self.scale if self.scale > 0 else self.sup


@dataclass
class EnergyReport:
    """Ledger entry of the step that produced level q; times, theta and delta_E are sampled on level q - 1"""
    q: int
    mode: str
    step: dict
    times: list
    theta: list
    delta_E: list
    Lambda: float
    growth: list
    Zbar: dict
    stress_norms: dict
    budget: dict
    checks: dict
    ratios: dict

    def as_dict(self):
        return {
            'q': self.q,
            'mode': self.mode,
            'step': self.step,
            'times': [float(t) for t in self.times],
            'theta': [float(t) for t in self.theta],
            'delta_E': [float(d) for d in self.delta_E],
            'Lambda': self.Lambda,
            'growth': self.growth,
            'Zbar': self.Zbar,
            'stress_norms': self.stress_norms,
            'budget': self.budget,
            'checks': self.checks,
            'ratios': self.ratios
        }


def _zeros(grid, rank, t0, dt, count):
    return SpaceTimeField.constant(PeriodicField.zeros(grid, rank), t0, dt, count)


def history_frames(config, settings, steps):
    """Frames consumed by the temporal mollifiers of `steps` iterations from q = 1"""
    total = 0
    for q in range(2, steps + 2):
        total += MollifierSpec(float(schedule(config, q).ell), settings.dt).frame_delay
    return total


def _truncated(z, tail, zeta):
    source = z if tail is None else z + tail.aligned_to(z)
    return source.map(lambda f: truncate(f, zeta))


def initial_state(config, settings, steps=1):
    """
    Level q = 1: v_1 = 0 and R_1 = zbar_1 (x) zbar_1 - c R(P zbar_1) with zbar_1 = Pi_zeta_1 z_1

    The frame window starts early enough to feed `steps` one-sided
    mollifications and ends at the horizon, so the last level starts at t = 0.
    """
    grid = settings.grid
    dt = settings.dt
    history = history_frames(config, settings, steps)
    count = history + settings.steps_to_horizon + 1
    t0 = -history * dt
    zeta = float(schedule(config, 1).zeta)

    v = _zeros(grid, 1, t0, dt, count)

    tail = None
    if settings.mode == IterationMode.Cauchy:
        u0 = settings.u0 if settings.u0 is not None else PeriodicField.zeros(grid, 1)
        tail = tail_field(u0, settings.c, t0, dt, count)

    wiener = None
    if settings.noise is not None:
        wiener = WienerPath.spawn(settings.seed, settings.paths, dt, settings.steps_to_horizon,
                                  settings.noise.dimension)

    def build(index):
        if wiener is None:
            z = _zeros(grid, 1, t0, dt, count)
        else:
            z = integrate_z(settings.noise, v, settings.c, wiener[index], tail=tail).z
        zbar = _truncated(z, tail, zeta)
        R = zbar.map(lambda f: traceless_sym_product(f, f, dealias=False)
                     - inverse_divergence(leray_project(f)) * settings.c)
        return PathState(v, R, z, zbar)

    paths = run_ensemble(build, range(settings.paths), settings.workers)
    log.info('initial level: %d frames from t = %.4f, %d path(s)', count, t0, settings.paths)
    return IterationState(1, paths, wiener, tail)


def energy_gap(energy, v, zbar, eps_previous, eps_older=None):
    """
    theta_q(t) = (e(t)(1 - eps_(q-2)) - E|v_q(t) + zbar_q(t)|^2) / (3 (2 pi)^3)

    v and zbar are single SpaceTimeFields or equal-length lists over the
    ensemble. e(t) is held at e(0) for t < 0. Raises ValueError if theta is
    not positive somewhere, which means the energy profile is too small.
    """
    if isinstance(v, SpaceTimeField):
        v, zbar = [v], [zbar]
    if len(v) != len(zbar) or not v:
        raise ValueError('velocity and noise ensembles must be non-empty and of equal size')

    times = v[0].times
    kinetic = np.zeros(len(times))
    for vi, zi in zip(v, zbar):
        kinetic += np.array([lebesgue_norm(a + b, 2) ** 2 for a, b in zip(vi, zi.aligned_to(vi))])
    kinetic /= len(v)

    e = energy(np.maximum(times, 0.0))
    theta = (e * (1 - eps_previous) - kinetic) / (3 * VOLUME)
    delta = np.abs(e * (1 - eps_older) - kinetic) if eps_older is not None else np.zeros(len(times))

    if np.min(theta) <= 0:
        i = int(np.argmin(theta))
        raise ValueError(f'energy gap theta = {theta[i]:.3e} is not positive at t = {times[i]:.4f}; '
                         'the energy profile is too small for the current velocity')
    return EnergyGap(times, theta, delta, kinetic)


def amplitudes(R_ell, theta, ell, directions, moments=None):
    """
    rho = 2 sqrt(ell^2 + |R|^2) + theta and a_xi = sqrt(rho / m_xi) gamma_xi(Id - R / rho)

    m_xi is the grid moment of psi^2 phi^2 (1 for normalised jets), so that
    sum_xi a_xi^2 m_xi xi (x) xi = rho Id - R exactly. Points where |R|/rho
    exceeds the admissibility radius get rho inflated to |R| / r* and are
    counted in Amplitudes.clamped.
    """
    values = R_ell.values
    magnitude = np.sqrt(np.sum(values ** 2, axis=(0, 1)))
    rho = 2 * np.sqrt(ell ** 2 + magnitude ** 2) + theta

    limit = magnitude / (directions.r_star * (1 - 1e-9))
    clamped = int(np.count_nonzero(limit > rho))
    inflated = np.maximum(rho, limit)

    identity = np.eye(3).reshape(3, 3, 1, 1, 1)
    gamma = directions.gamma(identity - values / inflated)

    moments = np.ones(len(directions)) if moments is None else np.asarray(moments, dtype=float)
    if np.any(moments <= 0):
        raise ValueError('jet moments must be positive')
    a = np.sqrt(inflated / moments.reshape(-1, 1, 1, 1)) * gamma
    return Amplitudes(inflated, rho, a, clamped)


class AmplitudeSeries:
    """
    Lazily evaluated amplitudes on the frames of one path with causal time derivatives

    The derivative at frame n uses the backward fourth order stencil on
    frames n-4 ... n, except for the first four frames.
    """
    def __init__(self, R_ell, theta, ell, directions, moments, dt):
        self.R_ell = R_ell
        self.theta = theta
        self.ell = ell
        self.directions = directions
        self.moments = moments
        self.dt = dt
        self.clamped = 0
        self._cache = {}
        self._counted = set()

    def __len__(self):
        return len(self.R_ell)

    def at(self, n):
        if n not in self._cache:
            result = amplitudes(self.R_ell[n], self.theta[n], self.ell, self.directions, self.moments[n])
            if n not in self._counted:
                self.clamped += result.clamped
                self._counted.add(n)
            if len(self._cache) >= AMPLITUDE_CACHE:
                del self._cache[min(self._cache)]
            self._cache[n] = result
        return self._cache[n]

    def derivative(self, n):
        """d a_xi / dt at frame n"""
        if n < 4:
            stack = np.stack([self.at(i).a for i in range(5)])
            return finite_difference(stack, self.dt, causal=True)[n]
        stack = np.stack([self.at(i).a for i in range(n - 4, n + 1)])
        return finite_difference(stack, self.dt, causal=True)[4]


def _field(grid, values):
    return PeriodicField.from_values(grid, values)


def _scalar_density(jet):
    return jet.psi ** 2 * jet.phi ** 2


def build_perturbation(a, jets, mu, chi=1.0, dchi=0.0, da=None):
    """
    Perturbation parts at one frame

    W_p = sum a W, W_p + W_c = sum curl curl(a V) and
    W_t = -1/mu sum P P_!=0(a^2 phi^2 psi^2 xi). With da the time derivatives
    of W_p + W_c and W_t are included; the cut-off multiplies the principal
    and corrector parts by chi and the temporal part by chi^2.
    """
    grid = jets[0].W.grid
    zero = PeriodicField.zeros(grid, 1)

    principal_values = np.sum([a[i] * jet.W.values for i, jet in enumerate(jets)], axis=0)
    W_p = _field(grid, principal_values)

    W_pc, W_t, dW_pc, dW_t = zero, zero, zero, zero
    for i, jet in enumerate(jets):
        xi = np.array([float(c) for c in jet.direction]).reshape(3, 1, 1, 1)
        density = _scalar_density(jet)
        W_pc = W_pc + curl_curl(_field(grid, a[i] * jet.V.values))
        W_t = W_t + leray_project(_field(grid, xi * (a[i] ** 2 * density)))
        if da is not None:
            dW_pc = dW_pc + curl_curl(_field(grid, da[i] * jet.V.values + a[i] * jet.V_t.values))
            da2 = 2 * a[i] * da[i]
            source = da2 * density + 2 * a[i] ** 2 * jet.phi ** 2 * jet.psi * jet.psi_t
            dW_t = dW_t + leray_project(_field(grid, xi * source))

    W_t = W_t * (-1.0 / mu)
    dW_t = dW_t * (-1.0 / mu)

    principal = W_p * chi
    corrector = (W_pc - W_p) * chi
    temporal = W_t * chi ** 2
    w = principal + corrector + temporal
    return Perturbation(principal, corrector, temporal, w, W_pc, W_t, dW_pc, dW_t, chi, dchi)


def cancellation_residual(amp, jets, R_ell):
    """
    Largest pointwise |sum a^2 W(x)W + R - sum a^2 P_!=0(W(x)W) - rho Id| relative to max(1, sup rho)

    With disjoint jet supports sum a^2 W (x) W = w_p (x) w_p.
    """
    total = np.array(R_ell.values, dtype=float)
    for i, jet in enumerate(jets):
        xi = np.array([float(c) for c in jet.direction])
        outer = np.einsum('i,j->ij', xi, xi).reshape(3, 3, 1, 1, 1)
        density = _scalar_density(jet)
        oscillation = density - np.mean(density)
        total += amp.a[i] ** 2 * outer * (density - oscillation)

    for i in range(3):
        total[i, i] -= amp.rho
    scale = max(1.0, float(np.max(amp.rho)))
    return float(np.max(np.abs(total))) / scale


def _interaction(a, jets, principal_values):
    """Pointwise W_p (x) W_p - sum a^2 W (x) W"""
    X = np.einsum('i...,j...->ij...', principal_values, principal_values)
    for i, jet in enumerate(jets):
        values = jet.W.values
        X -= a[i] ** 2 * np.einsum('i...,j...->ij...', values, values)
    return X


def oscillation_stress(a, da, jets, mu, perturbation):
    """
    Oscillation terms at one frame

    osc_x = chi^2 sum B(grad a^2, P_!=0(W (x) W)),
    osc_t = -chi^2/mu sum R(P_!=0(d_t(a^2) phi^2 psi^2 xi)),
    osc_int = chi^2 (W_p (x) W_p - sum a^2 W (x) W) with the trace removed, and
    disc = R P(Q - div(osc_x + osc_t)) where
    Q = chi^2 (div sum a^2 P_!=0(W (x) W) + d_t W_t) is what the first two
    terms cancel in the continuum.
    """
    grid = jets[0].W.grid
    chi2 = perturbation.chi ** 2
    zero2 = PeriodicField.zeros(grid, 2)

    osc_x, osc_t, weighted = zero2, zero2, zero2
    for i, jet in enumerate(jets):
        xi = np.array([float(c) for c in jet.direction])
        density = _scalar_density(jet)
        outer = _field(grid, np.einsum('i,j->ij', xi, xi).reshape(3, 3, 1, 1, 1) * density)
        oscillating = spectral_projector(outer, 'nonzero_mean')

        a2 = _field(grid, a[i] ** 2)
        osc_x = osc_x + bilinear_antidivergence(differential(a2, 'grad'), oscillating, dealias=False)
        weighted = weighted + product(a2, oscillating, 'scale', dealias=False)

        source = _field(grid, xi.reshape(3, 1, 1, 1) * (2 * a[i] * da[i] * density))
        osc_t = osc_t + inverse_divergence(spectral_projector(source, 'nonzero_mean'))

    osc_x = osc_x * chi2
    osc_t = osc_t * (-chi2 / mu)

    principal_values = np.sum([a[i] * jet.W.values for i, jet in enumerate(jets)], axis=0)
    osc_int = traceless_part(_field(grid, _interaction(a, jets, principal_values))) * chi2

    Q = (differential(weighted, 'div') + perturbation.dW_t) * chi2
    mismatch = Q - differential(osc_x + osc_t, 'div')
    disc = inverse_divergence(leray_project(mismatch))
    return {'osc_x': osc_x, 'osc_t': osc_t, 'osc_int': osc_int, 'disc': disc}


def oscillation_ratios(terms):
    """L2 norms of disc and osc_int relative to |osc_x| + |osc_t| at one frame"""
    scale = lebesgue_norm(terms['osc_x'], 2) + lebesgue_norm(terms['osc_t'], 2)
    if scale == 0:
        return {'disc': 0.0, 'osc_int': 0.0}
    return {name: lebesgue_norm(terms[name], 2) / scale for name in ('disc', 'osc_int')}


def assemble_stress(perturbation, oscillation, Y, d, R_ell, product_ell, c):
    """
    All Reynolds stress terms of the new level at one frame

    Y = v_ell + zbar_ell and d = zbar_(q+1) - zbar_ell; product_ell is the
    mollified trace-free part of (v_q + zbar_q) (x) (v_q + zbar_q). Returns
    a dict keyed by STRESS_TERMS; the sum is symmetric and trace-free.
    """
    p = perturbation
    terms = dict(oscillation)

    def term(name, fn):
        try:
            terms[name] = fn()
        except ValueError as e:
            raise ValueError(f'{name}: {e}') from e

    extra = p.corrector + p.temporal
    term('cor', lambda: traceless_sym_product(extra, p.principal, symmetric=True, dealias=False)
         + traceless_sym_product(extra, extra, dealias=False))
    term('lin_w', lambda: inverse_divergence(p.dW_pc * p.chi - differential(p.w, 'laplacian')))
    term('lin_z', lambda: inverse_divergence(leray_project(d) * (-c)))
    term('noise', lambda: traceless_sym_product(d, d, dealias=False))
    term('comm1', lambda: traceless_sym_product(d, Y + p.w, symmetric=True, dealias=False))
    term('comm2', lambda: traceless_sym_product(p.w, Y, symmetric=True, dealias=False))
    term('mol', lambda: traceless_sym_product(Y, Y, dealias=False) - product_ell)
    term('cut', lambda: inverse_divergence(p.W_t * (2 * p.chi * p.dchi) + p.W_pc * p.dchi)
         + R_ell * (1 - p.chi ** 2))

    for name in STRESS_TERMS:
        terms[name] = terms[name].with_tags('trace-free', 'symmetric')
    return terms


def pde_residual(v, R, zbar, c, skip=0):
    """
    sup_t |P[d_t v - c zbar - Laplacian v + div((v + zbar) (x) (v + zbar)) - div R]|_L2

    d_t is the central fourth order difference over the frames; skip drops
    that many frames at both ends of the window from the reported norms.
    """
    if len(v) < 5:
        raise ValueError(f'the residual needs at least 5 frames (got {len(v)})')
    zbar = zbar.aligned_to(v)
    R = R.aligned_to(v)
    dv = time_derivative(v)

    norms, scale = [], 0.0
    for n in range(skip, len(v) - skip):
        U = v[n] + zbar[n]
        flux = differential(product(U, U, 'outer', dealias=False), 'div')
        momentum = dv[n] - zbar[n] * c - differential(v[n], 'laplacian') + flux
        residual = leray_project(momentum - differential(R[n], 'div'))
        norms.append(lebesgue_norm(residual, 2))
        scale = max(scale, lebesgue_norm(leray_project(momentum), 2))
    return ResidualReport(v.times[skip:len(v) - skip], np.array(norms), scale)


def frame_norms(fields, norm):
    """(paths, frames) array of norm(frame) for a list of SpaceTimeFields"""
    return np.array([[norm(f) for f in F] for F in fields])


def moment_norm(norms, p, window_frames):
    """
    sup_t (E sup_[t, t+window] |f|^p)^(1/p) from a (paths, frames) array of spatial norms

    Windows slide by one frame; a window longer than the samples covers all of them.
    """
    norms = np.asarray(norms, dtype=float)
    window_frames = max(1, min(int(window_frames), norms.shape[1]))
    windows = np.lib.stride_tricks.sliding_window_view(norms, window_frames, axis=1).max(axis=-1)
    return float(np.max(np.mean(windows ** p, axis=0)) ** (1.0 / p))


def _c1_norm(F):
    """Per-frame |v|_inf + |d_t v|_inf + |grad v|_inf"""
    dv = time_derivative(F)
    return np.array([lebesgue_norm(f, math.inf) + lebesgue_norm(df, math.inf)
                     + lebesgue_norm(differential(f, 'grad'), math.inf) for f, df in zip(F, dv)])


def growth_measures(state, ell, r0, orders, window_frames, start=0):
    """
    Lambda_q = 1 + |R_q|^12_(L1, 12 r0) + |v_q|^10_(C1, 10 r0)
    and M_q(n, p) = 1/ell_q + |R_q|^n_(L1, np) + |v_q|^n_(C1, np)
    """
    stress = np.array([[lebesgue_norm(f, 1) for f in p.R.frames[start:]] for p in state.paths])
    velocity = np.array([_c1_norm(p.v)[start:] for p in state.paths])

    Lambda = 1 + moment_norm(stress, 12 * r0, window_frames) ** 12 \
        + moment_norm(velocity, 10 * r0, window_frames) ** 10
    growth = []
    for n, p in orders:
        value = 1 / ell + moment_norm(stress, n * p, window_frames) ** n \
            + moment_norm(velocity, n * p, window_frames) ** n
        growth.append({'n': n, 'p': p, 'M': float(value)})
    return float(Lambda), growth


def noise_differences(previous, zbar_next, tail, ell_next, gamma, r0, window_frames, start=0, late_start=0):
    """
    The three summands of Zbar_(q+1)

    sup E|z_q [+ z_tail] - zbar_q|^(2r0)_(C_t L2) + sup E|zbar_(q+1) - zbar_q|^(2r0)_(C_t L2)
    + ell_(q+1)^(2 gamma r0) sup E|zbar_q|^(2r0)_(C^gamma_t H^gamma). zbar_next holds the
    new truncations on the level q frames. Windows start at frame `start`, and at
    `late_start` for the last summand.
    """
    p = 2 * r0
    first, second, third = [], [], []
    for path, zbar in zip(previous, zbar_next):
        z = path.z if tail is None else path.z + tail.aligned_to(path.z)
        first.append([lebesgue_norm(a - b, 2) for a, b in zip(z.frames[start:], path.zbar.frames[start:])])
        second.append([lebesgue_norm(a - b, 2) for a, b in zip(zbar.frames[start:], path.zbar.frames[start:])])

        holder = []
        count = max(2, min(window_frames, len(path.zbar) - late_start))
        for i in range(late_start, len(path.zbar) - count + 1, max(1, count // 4)):
            holder.append(holder_time_norm(path.zbar.window(i, i + count), gamma, f'H{gamma:g}'))
        third.append(holder or [0.0])

    summands = {
        'truncation': moment_norm(first, p, window_frames) ** p,
        'increment': moment_norm(second, p, window_frames) ** p,
        'regularity': ell_next ** (2 * gamma * r0) * float(np.max(np.mean(np.array(third) ** p, axis=0)))
    }
    summands['total'] = summands['truncation'] + summands['increment'] + summands['regularity']
    return summands


@dataclass
class _Level:
    """Mollified level q fields of one path on the new frames"""
    v: SpaceTimeField
    R: SpaceTimeField
    zbar: SpaceTimeField
    product: SpaceTimeField


def _mollified_level(path, spec):
    U = path.v + path.zbar.aligned_to(path.v)
    flux = U.map(lambda f: traceless_sym_product(f, f, dealias=False))
    return _Level(mollify(path.v, spec), mollify(path.R, spec), mollify(path.zbar, spec), mollify(flux, spec))


def _jets_at(t, params, profiles, directions, settings):
    frame_params = params.at(t)
    return [synthesize_jet(i, frame_params, profiles, directions, resolution_factor=settings.resolution_factor,
                           aliasing_guard=settings.aliasing_guard)
            for i in range(len(directions))]


def iterate(state, config, settings):
    """
    One step q -> q + 1

    mollify -> integrate z_(q+1) with drift v_q -> truncate -> energy gap ->
    amplitudes -> perturbation -> v_(q+1) = v_ell + w -> stress assembly ->
    residual. Returns the new IterationState and its EnergyReport.
    """
    q = state.q
    grid = settings.grid
    dt = state.dt
    cauchy = settings.mode == IterationMode.Cauchy
    window_frames = int(round(1.0 / dt)) + 1

    level_start = state.paths[0].v.index_of(0.0) if cauchy and state.t0 < 0 else 0
    Lambda, growth = growth_measures(state, float(schedule(config, q).ell), settings.r0, settings.growth_orders,
                                     window_frames, level_start)

    step = schedule(config, q + 1, measured_lambda=Lambda)
    ell = float(step.ell)
    spec = MollifierSpec(ell, dt)
    if len(state.paths[0].v) - spec.frame_delay < 5:
        raise ValueError(f'step {q + 1} needs more than {spec.frame_delay + 4} frames of level {q} '
                         f'(got {len(state.paths[0].v)})')

    params = step.jet_parameters(grid)
    directions = build_direction_set(params, placement=settings.placement,
                                     require_disjoint=settings.require_disjoint)
    profiles = build_profiles()

    # Noise of the new level and the mollified old level
    def advance_noise(index):
        path = state.paths[index]
        if state.wiener is None:
            z = _zeros(grid, 1, path.v.t0, dt, len(path.v))
        else:
            z = integrate_z(settings.noise, path.v, settings.c, state.wiener[index], tail=state.tail).z
        return z, _truncated(z, state.tail, float(step.zeta))

    noise = run_ensemble(advance_noise, range(len(state.paths)), settings.workers)
    levels = run_ensemble(lambda p: _mollified_level(p, spec), state.paths, settings.workers)
    frames = levels[0].v

    # Energy increments theta_q (deterministic over the ensemble)
    if cauchy:
        theta_value = config.theta(q)
        if theta_value is None:
            raise ValueError(f'cut-off runs need theta for step {q}')
        gap = EnergyGap(state.times, np.full(len(state.times), theta_value), np.zeros(len(state.times)),
                        np.zeros(len(state.times)))
    else:
        gap = energy_gap(config.energy, [p.v for p in state.paths], [p.zbar for p in state.paths],
                         epsilon_value(config, q - 2), epsilon_value(config, q - 3))
    theta_ell = gap.mollified(spec)
    theta_now = gap.theta[spec.frame_delay:]

    # Grid moments of the jets at every frame
    times = frames.times
    moments = np.array([[jet.moment for jet in _jets_at(t, params, profiles, directions, settings)]
                        for t in times])

    if cauchy:
        chi, dchi = time_cutoff(times, float(step.kappa))
    else:
        chi, dchi = np.ones(len(times)), np.zeros(len(times))

    series = [AmplitudeSeries(level.R, theta_ell, ell, directions, moments, dt) for level in levels]
    zbar_next = [zbar.aligned_to(frames) for _, zbar in noise]

    velocity = [[] for _ in levels]
    stress = [{name: [] for name in STRESS_TERMS} for _ in levels]
    budget_rows = [[] for _ in levels]
    cancellation = 0.0
    cross_term = 0.0
    aliasing = 0.0
    term_ratios = {'disc': 0.0, 'osc_int': 0.0}

    for n, t in enumerate(times):
        active = chi[n] > 0 or dchi[n] != 0
        jets = _jets_at(t, params, profiles, directions, settings) if active else None
        if jets is not None:
            aliasing = max(aliasing, max(jet.aliasing for jet in jets))

        def frame(index):
            level = levels[index]
            Y = level.v[n] + level.zbar[n]
            d = zbar_next[index][n] - level.zbar[n]
            amp = series[index].at(n)
            if jets is None:
                zero = PeriodicField.zeros(grid, 1)
                perturbation = Perturbation(zero, zero, zero, zero, zero, zero, zero, zero, 0.0, 0.0)
                zero2 = PeriodicField.zeros(grid, 2)
                oscillation = {'osc_x': zero2, 'osc_t': zero2, 'osc_int': zero2, 'disc': zero2}
                return perturbation, assemble_stress(perturbation, oscillation, Y, d, level.R[n],
                                                     level.product[n], settings.c), amp, None

            da = series[index].derivative(n)
            perturbation = build_perturbation(amp.a, jets, params.mu, chi[n], dchi[n], da)
            oscillation = oscillation_stress(amp.a, da, jets, params.mu, perturbation)
            terms = assemble_stress(perturbation, oscillation, Y, d, level.R[n], level.product[n], settings.c)
            return perturbation, terms, amp, da

        results = run_ensemble(frame, range(len(levels)), settings.workers)
        for index, (perturbation, terms, amp, _) in enumerate(results):
            level = levels[index]
            velocity[index].append(level.v[n] + perturbation.w)
            for name in STRESS_TERMS:
                stress[index][name].append(terms[name])

            if jets is None:
                continue

            if index == 0:
                cancellation = max(cancellation, cancellation_residual(amp, jets, level.R[n]))
                for name, ratio in oscillation_ratios(terms).items():
                    term_ratios[name] = max(term_ratios[name], ratio)
            if not cauchy or chi[n] == 1.0:
                budget_rows[index].append(_budget_row(amp, jets, level.R[n], perturbation, ell,
                                                      theta_ell[n], theta_now[n]))
            cross_term = max(cross_term, 2 * abs(float(VOLUME * np.mean(
                np.sum(level.v[n].values * perturbation.w.values, axis=0)))))

    clamped = sum(s.clamped for s in series)
    clamp_fraction = clamped / (len(times) * grid.points * len(series))
    if clamp_fraction > settings.clamp_budget:
        raise ValueError(f'admissibility clamp applied at {100 * clamp_fraction:.3f}% of points, '
                         f'more than the {100 * settings.clamp_budget:.3f}% budget')
    if clamped:
        log.warning('step %d: admissibility clamp applied at %d points (%.4f%%)', q + 1, clamped,
                    100 * clamp_fraction)

    new_paths = []
    breakdowns = []
    for index, level in enumerate(levels):
        v = SpaceTimeField(velocity[index], frames.t0, dt)
        breakdown = StressBreakdown({name: SpaceTimeField(stress[index][name], frames.t0, dt)
                                     for name in STRESS_TERMS})
        breakdowns.append(breakdown)
        z = noise[index][0].aligned_to(frames)
        new_paths.append(PathState(v, breakdown.total, z, zbar_next[index]))

    new_state = IterationState(q + 1, new_paths, state.wiener, state.tail, list(state.ledger))

    residual = pde_residual(new_paths[0].v, new_paths[0].R, new_paths[0].zbar, settings.c, skip=2)
    without_disc = pde_residual(new_paths[0].v, new_paths[0].R - breakdowns[0].terms['disc'], new_paths[0].zbar,
                                settings.c, skip=2)
    late = frames.index_of(0.0) if cauchy and frames.t0 < 0 else 0
    zbar_summands = noise_differences(state.paths, [zb for _, zb in noise], state.tail, ell,
                                      settings.gamma, settings.r0, window_frames, level_start,
                                      _late_index(state, cauchy, float(step.kappa) if cauchy else 0.0))

    budget = _summarize_budget(budget_rows)
    checks = {
        'cancellation': cancellation,
        'residual': residual.sup,
        'residual_relative': residual.relative,
        'cross_term': cross_term,
        'clamped_points': clamped,
        'residual_without_disc': without_disc.relative,
        'disc_ratio': term_ratios['disc'],
        'osc_int_ratio': term_ratios['osc_int'],
        'overlap': directions.overlap,
        'aliasing': aliasing,
        'symmetry': max(_symmetry(b.total) for b in breakdowns),
        'corrector_identity': _corrector_identity(levels[0], series[0], params, profiles, directions, settings,
                                                  times, chi),
        'temporal_remainder': _temporal_remainder(series[0], params, profiles, directions, settings, times, chi)
    }
    if cauchy:
        checks['initial_velocity'] = max(lebesgue_norm(p.v[p.v.index_of(0.0)], 2) for p in new_paths) \
            if new_paths[0].v.t0 <= 0 else 0.0
        checks['cutoff_preserved'] = max(
            max((lebesgue_norm(v - vl, 2) for v, vl, x in zip(p.v, level.v, chi) if x == 0), default=0.0)
            for p, level in zip(new_paths, levels))

    stress_moment = frame_norms([p.R for p in new_paths], lambda f: lebesgue_norm(f, 1))
    increment = frame_norms([p.v - old.v.aligned_to(p.v) for p, old in zip(new_paths, state.paths)],
                            lambda f: lebesgue_norm(f, 2))
    ratios = {
        'stress': moment_norm(stress_moment[:, late:], settings.r0, window_frames) / epsilon_value(config, q),
        'velocity_increment': moment_norm(increment[:, late:], 2 * settings.r0, window_frames)
        / math.sqrt(epsilon_value(config, q - 3))
    }

    stress_norms = {name: float(np.mean([b.norms('L1')[name] for b in breakdowns])) for name in STRESS_TERMS}
    report = EnergyReport(q + 1, IterationMode.label(settings.mode), step.as_dict(), list(state.times),
                          list(gap.theta), list(gap.delta), Lambda, growth, zbar_summands, stress_norms,
                          budget, checks, ratios)
    new_state.ledger.append(report)

    log.info('step q=%d: Lambda %.4e, theta in [%.4e, %.4e], cancellation %.2e, residual %.2e', q + 1, Lambda,
             float(np.min(gap.theta)), float(np.max(gap.theta)), cancellation, residual.sup)
    log.info('step q=%d: relative residual %.3e, %.3e without the discretisation stress; '
             '|disc| / |osc| %.3e, |osc_int| / |osc| %.3e', q + 1, residual.relative, without_disc.relative,
             term_ratios['disc'], term_ratios['osc_int'])
    if aliasing > ALIASING_GUARD:
        log.warning('step q=%d: jet aliasing fraction %.3e exceeds %.0e', q + 1, aliasing, ALIASING_GUARD)
    return new_state, report


def _late_index(state, cauchy, kappa):
    if not cauchy:
        return 0
    times = state.times
    late = np.flatnonzero(times >= kappa)
    return int(late[0]) if len(late) else len(times) - 1


def _symmetry(F):
    worst = 0.0
    for f in F:
        values = f.values
        worst = max(worst, float(np.max(np.abs(values - np.swapaxes(values, 0, 1)))),
                    float(np.max(np.abs(np.einsum('ii...->...', values)))))
    return worst


def _budget_row(amp, jets, R_ell, perturbation, ell, theta_ell, theta):
    """Energy pumping error and the terms that bound it at one frame"""
    wp = perturbation.principal.values
    energy = VOLUME * float(np.mean(np.sum(wp ** 2, axis=0)))
    diagonal = 0.0
    high_frequency = 0.0
    for i, jet in enumerate(jets):
        density = _scalar_density(jet)
        weighted = amp.a[i] ** 2 * density
        diagonal += VOLUME * float(np.mean(weighted))
        high_frequency += abs(VOLUME * float(np.mean(amp.a[i] ** 2 * (density - np.mean(density)))))

    return {
        'error': abs(energy - 3 * theta * VOLUME),
        'ell': 6 * VOLUME * ell,
        'stress': 6 * lebesgue_norm(R_ell, 1),
        'theta': 3 * VOLUME * abs(theta_ell - theta),
        'high_frequency': high_frequency,
        'clamp': 3 * VOLUME * float(np.mean(amp.rho - amp.rho_formula)),
        'interaction': abs(energy - diagonal)
    }


def _summarize_budget(rows):
    """Expectation over paths of each term, then the sup over frames; flags frames where the error exceeds the bound"""
    rows = [r for r in rows if r]
    if not rows:
        return {}
    count = min(len(r) for r in rows)
    keys = rows[0][0].keys()
    mean = {k: np.mean([[r[n][k] for n in range(count)] for r in rows], axis=0) for k in keys}
    bound = sum(mean[k] for k in keys if k != 'error')
    summary = {k: float(np.max(v)) for k, v in mean.items()}
    summary['bound'] = float(np.max(bound))
    summary['slack'] = float(np.min(bound - mean['error']))
    summary['within'] = bool(np.all(mean['error'] <= bound * (1 + 1e-12)))
    return summary


def _last_full_frame(times, chi):
    """Last frame where the cut-off is fully on"""
    on = np.flatnonzero(np.asarray(chi) == 1.0)
    return int(on[-1]) if len(on) else len(times) - 1


def _corrector_identity(level, series, params, profiles, directions, settings, times, chi):
    """
    Relative L2 distance between W_c = sum curl curl(a V) - a W and the expanded
    sum curl(grad a x V) + grad a x curl V + a W^(c) at one frame
    """
    n = _last_full_frame(times, chi)
    jets = _jets_at(times[n], params, profiles, directions, settings)
    a = series.at(n).a
    grid = level.v.grid

    spectral, expanded = PeriodicField.zeros(grid, 1), PeriodicField.zeros(grid, 1)
    for i, jet in enumerate(jets):
        amplitude = _field(grid, a[i])
        grad = differential(amplitude, 'grad')
        spectral = spectral + curl_curl(_field(grid, a[i] * jet.V.values)) - _field(grid, a[i] * jet.W.values)
        expanded = expanded + differential(product(grad, jet.V, 'cross', dealias=False), 'curl') \
            + product(grad, differential(jet.V, 'curl'), 'cross', dealias=False) \
            + product(amplitude, jet.W_c, 'scale', dealias=False)

    reference = lebesgue_norm(spectral, 2)
    return lebesgue_norm(spectral - expanded, 2) / reference if reference else 0.0


def _temporal_remainder(series, params, profiles, directions, settings, times, chi):
    """L2 norm of the gradient part (Id - P) sum P_!=0(a^2 phi^2 psi^2 xi) / mu removed by the projection"""
    n = _last_full_frame(times, chi)
    jets = _jets_at(times[n], params, profiles, directions, settings)
    a = series.at(n).a
    grid = jets[0].W.grid
    total = PeriodicField.zeros(grid, 1)
    for i, jet in enumerate(jets):
        xi = np.array([float(c) for c in jet.direction]).reshape(3, 1, 1, 1)
        total = total + spectral_projector(_field(grid, xi * (a[i] ** 2 * _scalar_density(jet))), 'nonzero_mean')
    return lebesgue_norm(total - leray_project(total), 2) / params.mu


def run(config, settings, steps):
    """Runs `steps` iterations from the initial level; returns the final state (its ledger holds every report)"""
    if config.steps is not None and steps + 1 > config.steps:
        raise ValueError(f'{steps} iterations need {steps + 1} schedule rows (got {config.steps})')
    state = initial_state(config, settings, steps)
    for _ in range(steps):
        state, _ = iterate(state, config, settings)
    return state


@dataclass
class ConvergenceFit:
    dts: list
    residuals: list
    order: float
    table: Table


def residual_convergence(config, settings, dts, steps=1):
    """Runs the iteration at several time steps and fits the order of the residual in dt"""
    if len(dts) < 2:
        raise ValueError('a convergence fit needs at least two time steps')
    residuals = []
    for dt in dts:
        state = run(config, replace(settings, dt=dt), steps)
        residuals.append(state.ledger[-1].checks['residual'])
        log.info('dt = %g: residual %.3e', dt, residuals[-1])

    order = float(np.polyfit(np.log(dts), np.log(residuals), 1)[0])
    table = Table([list(dts), residuals], names=('dt', 'residual'))
    return ConvergenceFit(list(dts), residuals, order, table)


@dataclass
class NonuniquenessResult:
    thetas: tuple
    time: float
    energies: tuple
    separation: float
    predicted: float
    budget: float
    passed: bool

    def as_dict(self):
        return {
            'thetas': list(self.thetas),
            'time': self.time,
            'energies': list(self.energies),
            'separation': self.separation,
            'predicted': self.predicted,
            'budget': self.budget,
            'passed': self.passed
        }


def nonuniqueness_experiment(config, settings, K1, K2, steps=1, time=1.0):
    """
    Two cut-off runs that differ only in theta_1

    Compares E|v(t)|^2 at `time` with the predicted separation 3 (2 pi)^3 |K1 - K2|.
    The runs pass when the separation is at least half of the prediction.
    """
    if settings.mode != IterationMode.Cauchy or config.mode != 'toy':
        raise ValueError('the non-uniqueness experiment needs cut-off (cauchy) settings and a toy schedule')

    energies, budget = [], 0.0
    for K in (K1, K2):
        rows = list(config.rows)
        rows[0] = replace(rows[0], theta=K)
        varied = replace(config, rows=rows)
        state = run(varied, settings, steps)
        index = state.paths[0].v.index_of(time)
        energies.append(float(np.mean([lebesgue_norm(p.v[index], 2) ** 2 for p in state.paths])))
        budget += sum(entry.budget.get('bound', 0.0) for entry in state.ledger)

    separation = abs(energies[0] - energies[1])
    predicted = 3 * VOLUME * abs(K1 - K2)
    passed = separation >= 0.5 * predicted
    log.info('non-uniqueness: separation %.4e, predicted %.4e', separation, predicted)
    return NonuniquenessResult((K1, K2), time, tuple(energies), separation, predicted, budget, passed)
