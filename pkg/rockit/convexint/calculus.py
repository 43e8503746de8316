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

"""Spectral differential operators, antidivergences and mollifiers"""

import numpy as np
from numpy.polynomial import legendre
from .fields import PeriodicField, SpaceTimeField, product

# Gauss-Legendre nodes used for the radial Fourier transform of the spatial mollifier
RADIAL_QUADRATURE_NODES = 64

# Relative size of a spatial mean that is still treated as zero
MEAN_TOLERANCE = 1e-12

# One-sided and central fourth order first derivative stencils (divide by 12h)
CENTRAL_STENCIL = np.array([1, -8, 0, 8, -1])
FORWARD_STENCIL = np.array([-25, 48, -36, 16, -3])
SHIFTED_STENCIL = np.array([-3, -10, 18, -6, 1])


def _wrap(f, coefficients, tags=()):
    return PeriodicField.from_coefficients(f.grid, coefficients, real=f.real, tags=tags)


def differential(f, kind):
    """
    Spectral derivatives of a PeriodicField

    grad: scalar -> vector, vector -> matrix with G[i, j] = d_j f_i
    div: vector -> scalar, matrix -> vector with (div S)_i = d_j S_ij
    curl: vector -> vector
    laplacian: any rank, uses the full |k|^2
    """
    grid = f.grid
    ikd = 1j * grid.kd
    c = f.coefficients

    if kind == 'grad':
        if f.rank == 0:
            return _wrap(f, ikd * c)
        if f.rank == 1:
            return _wrap(f, np.einsum('j...,i...->ij...', ikd, c))
    elif kind == 'div':
        if f.rank == 1:
            return _wrap(f, np.sum(ikd * c, axis=0))
        if f.rank == 2:
            return _wrap(f, np.einsum('j...,ij...->i...', ikd, c))
    elif kind == 'curl':
        if f.rank == 1:
            return _wrap(f, np.array([
                ikd[1] * c[2] - ikd[2] * c[1],
                ikd[2] * c[0] - ikd[0] * c[2],
                ikd[0] * c[1] - ikd[1] * c[0]
            ]))
    elif kind == 'laplacian':
        return _wrap(f, -grid.k2 * c)
    else:
        raise ValueError(f'unknown differential operator \'{kind}\'')

    raise ValueError(f'{kind} is not defined for rank {f.rank} fields')


def curl_curl(f):
    """curl curl f = grad div f - laplacian f"""
    return differential(differential(f, 'curl'), 'curl')


def _check_mean_zero(f, label):
    scale = max(1.0, float(np.max(np.abs(f.coefficients))))
    mean = np.max(np.abs(f.coefficients[..., 0, 0, 0]))
    if mean > MEAN_TOLERANCE * scale:
        raise ValueError(f'{label} requires a mean-zero argument (mean magnitude {mean:.3e})')


def inverse_divergence(v):
    """
    Antidivergence R of a mean-zero vector field

    Returns the symmetric trace-free matrix field with div R v = v. Modes
    without a resolved first derivative (pure Nyquist) are dropped.
    """
    if v.rank != 1:
        raise ValueError(f'inverse divergence requires a vector field (got rank {v.rank})')
    _check_mean_zero(v, 'inverse divergence')

    grid = v.grid
    kappa = grid.kd
    resolved = grid.kd2 > 0
    k2 = np.where(resolved, grid.kd2, 1)

    u = np.where(resolved, -v.coefficients / k2, 0)
    d = np.sum(1j * kappa * u, axis=0)

    R = np.einsum('k...,l...->kl...', 1j * kappa, u)
    R = R + np.swapaxes(R, 0, 1)
    R -= 0.5 * np.einsum('k...,l...->kl...', kappa, kappa) / k2 * d
    for i in range(3):
        R[i, i] -= 0.5 * d

    return _wrap(v, np.where(resolved, R, 0), tags={'trace-free', 'symmetric'})


def bilinear_antidivergence(v, S, dealias=True):
    """
    Bilinear antidivergence B(v, S) of a vector field and a mean-zero matrix field

    Returns a symmetric trace-free matrix field with
    div B(v, S) = S v - mean(S v).
    """
    if v.rank != 1 or S.rank != 2:
        raise ValueError('bilinear antidivergence requires a vector and a matrix field')
    _check_mean_zero(S, 'bilinear antidivergence')

    grad_v = differential(v, 'grad')
    total = None
    u = None
    for l in range(3):
        # T^(l) = R(S[:, l]) satisfies div T^(l) = S[:, l]
        column = PeriodicField.from_coefficients(S.grid, S.coefficients[:, l], real=S.real)
        T = inverse_divergence(column)
        term = product(v.component(l), T, 'scale', dealias=dealias)
        total = term if total is None else total + term

        # u_i = sum_l T^(l)_ij d_j v_l
        correction = product(T, grad_v.component(l), 'matvec', dealias=dealias)
        u = correction if u is None else u + correction

    # The mean of u cancels the mean of S v, so only the fluctuation needs R
    coefficients = np.array(u.coefficients)
    coefficients[..., 0, 0, 0] = 0
    result = total - inverse_divergence(_wrap(u, coefficients))
    return result.with_tags('trace-free', 'symmetric')


def _bump(x):
    """exp(-1/(1 - x^2)) on (-1, 1), zero outside"""
    inside = np.abs(x) < 1
    safe = np.where(inside, x, 0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe ** 2)), 0.0)


class MollifierSpec:
    """
    Space-time mollifier at scale ell on a time grid with step dt

    The spatial kernel is the normalised radial bump supported in the ball
    of radius ell; the temporal kernel is a one-sided bump supported in
    (0, ell) so mollified fields only depend on past frames.
    """
    def __init__(self, ell, dt):
        if not 0 < ell < 0.5:
            raise ValueError(f'mollification scale must lie in (0, 1/2) (got {ell})')
        if not dt > 0:
            raise ValueError(f'time step must be positive (got {dt})')

        self.ell = float(ell)
        self.dt = float(dt)

        count = int(np.ceil(self.ell / self.dt)) - 1
        j = np.arange(1, count + 1)
        weights = _bump(2 * j * self.dt / self.ell - 1)
        if count < 1 or not np.sum(weights) > 0:
            raise ValueError(f'mollification scale {ell} is not resolved by time step {dt}')

        self.weights = weights / np.sum(weights)
        self.frame_delay = int(count)
        self._multipliers = {}

    @property
    def first_moment(self):
        """sum_j j dt w_j, the mean time lag of the temporal kernel"""
        return float(np.sum(np.arange(1, self.frame_delay + 1) * self.dt * self.weights))

    def radial_transform(self, magnitude):
        """Normalised Fourier transform of the spatial kernel at wavenumber magnitudes"""
        nodes, quadrature = legendre.leggauss(RADIAL_QUADRATURE_NODES)
        r = 0.5 * self.ell * (nodes + 1)
        w = 0.5 * self.ell * quadrature * _bump(r / self.ell) * r ** 2

        magnitude = np.asarray(magnitude, dtype=float)
        kr = np.multiply.outer(magnitude, r)
        transform = np.sum(w * np.sinc(kr / np.pi), axis=-1)
        return transform / np.sum(w)

    def spatial_multiplier(self, grid):
        key = grid.resolution
        if key not in self._multipliers:
            unique, inverse = np.unique(grid.k2, return_inverse=True)
            values = self.radial_transform(np.sqrt(unique))
            multiplier = values[inverse].reshape(grid.shape)
            multiplier.flags.writeable = False
            self._multipliers[key] = multiplier
        return self._multipliers[key]


def mollify_space(f, spec):
    """Spatial convolution with the ell-scale mollifier (PeriodicField or SpaceTimeField)"""
    if isinstance(f, SpaceTimeField):
        return f.map(lambda frame: mollify_space(frame, spec))
    return _wrap(f, f.coefficients * spec.spatial_multiplier(f.grid), tags=f.tags)


def mollify_time(F, spec):
    """
    Causal temporal convolution of a SpaceTimeField

    Output frame i is sum_j w_j F[i + J - j], so the result starts J frames
    after the input.
    """
    if abs(F.dt - spec.dt) > 1e-12 * spec.dt:
        raise ValueError(f'mollifier time step {spec.dt} does not match field time step {F.dt}')

    delay = spec.frame_delay
    if len(F) <= delay:
        raise ValueError(f'time mollification needs more than {delay} frames of history (got {len(F)})')

    data = F.coefficients
    out = np.zeros((len(F) - delay,) + data.shape[1:], dtype=complex)
    for j, w in enumerate(spec.weights, start=1):
        out += w * data[delay - j:len(F) - j]

    frames = [PeriodicField.from_coefficients(F.grid, c, real=F.frames[0].real, tags=F.frames[0].tags)
              for c in out]
    return SpaceTimeField(frames, F.t0 + delay * F.dt, F.dt)


def mollify(F, spec):
    """Space-time mollification (f *_x rho) *_t phi"""
    return mollify_time(mollify_space(F, spec), spec)


def finite_difference(data, dt, axis=0, causal=False):
    """
    Fourth order first derivative along an axis with one-sided ends

    causal=True uses the backward stencil on frames t - 4dt ... t wherever
    four earlier frames exist, so the result at t never reads later frames
    past the first four.
    """
    data = np.moveaxis(np.asarray(data), axis, 0)
    count = data.shape[0]
    if count < 5:
        raise ValueError(f'fourth order time derivative needs at least 5 frames (got {count})')

    out = np.empty_like(data)
    out[2:-2] = (data[:-4] - 8 * data[1:-3] + 8 * data[3:-1] - data[4:]) / (12 * dt)
    out[0] = np.tensordot(FORWARD_STENCIL, data[:5], axes=1) / (12 * dt)
    out[1] = np.tensordot(SHIFTED_STENCIL, data[:5], axes=1) / (12 * dt)
    out[-1] = -np.tensordot(FORWARD_STENCIL, data[::-1][:5], axes=1) / (12 * dt)
    out[-2] = -np.tensordot(SHIFTED_STENCIL, data[::-1][:5], axes=1) / (12 * dt)
    if causal:
        backward = sum(-w * data[4 - j:count - j] for j, w in enumerate(FORWARD_STENCIL))
        out[4:] = backward / (12 * dt)
    return np.moveaxis(out, 0, axis)


def time_derivative(F, causal=False):
    """Frame-wise fourth order time derivative of a SpaceTimeField"""
    derivative = finite_difference(F.coefficients, F.dt, causal=causal)
    real = F.frames[0].real
    frames = [PeriodicField.from_coefficients(F.grid, c, real=real) for c in derivative]
    return SpaceTimeField(frames, F.t0, F.dt)
