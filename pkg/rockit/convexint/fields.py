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

"""Periodic spectral fields on the three-torus"""

# pylint: disable=too-many-arguments

import re
import numpy as np
from scipy import fft
from astropy.table import Table
from .constants import SNAPSHOT_MAGIC, SNAPSHOT_VERSION

# Volume of the periodic box [0, 2pi)^3
VOLUME = (2 * np.pi) ** 3

SNAPSHOT_HEADER = np.dtype([
    ('magic', 'S4'),
    ('version', '<u2'),
    ('resolution', '<u4'),
    ('rank', 'u1'),
    ('real', 'u1')
])


class FourierGrid:
    """
    Uniform N^3 grid on [0, 2pi)^3 and its integer wavevector lattice

    Coefficients are stored in numpy fft order, so index 0 is the DC mode and
    index N/2 is the Nyquist mode. First derivatives use wavevectors with the
    Nyquist component zeroed so that real fields stay real.
    """
    def __init__(self, resolution, workers=1):
        if not isinstance(resolution, (int, np.integer)) or resolution < 8 or resolution % 2 != 0:
            raise ValueError(f'grid resolution must be an even integer >= 8 (got {resolution})')

        self.resolution = int(resolution)
        self.workers = workers
        n = self.resolution

        k = np.fft.fftfreq(n, 1.0 / n)
        kd = k.copy()
        kd[n // 2] = 0

        self.k = np.array(np.meshgrid(k, k, k, indexing='ij'))
        self.kd = np.array(np.meshgrid(kd, kd, kd, indexing='ij'))
        self.k2 = np.sum(self.k ** 2, axis=0)
        self.kd2 = np.sum(self.kd ** 2, axis=0)
        self.kmax = np.max(np.abs(self.k), axis=0)

        x = 2 * np.pi * np.arange(n) / n
        self.x = np.array(np.meshgrid(x, x, x, indexing='ij'))
        self.spacing = 2 * np.pi / n

        self._shape = (n, n, n)
        for array in (self.k, self.kd, self.k2, self.kd2, self.kmax, self.x):
            array.flags.writeable = False

    @property
    def shape(self):
        return self._shape

    @property
    def points(self):
        return self.resolution ** 3

    def self_conjugate(self):
        """Mask of wavevectors that are their own conjugate (DC and Nyquist combinations)"""
        n = self.resolution
        k = np.fft.fftfreq(n, 1.0 / n)
        axis = (k == 0) | (k == -n // 2)
        return axis[:, None, None] & axis[None, :, None] & axis[None, None, :]

    def forward(self, values):
        """Physical values -> coefficients normalised so that f(x) = sum_k c_k exp(ik.x)"""
        return fft.fftn(values, axes=(-3, -2, -1), workers=self.workers) / self.points

    def inverse(self, coefficients, real=True):
        values = fft.ifftn(coefficients, axes=(-3, -2, -1), workers=self.workers) * self.points
        return values.real if real else values

    def __eq__(self, other):
        return isinstance(other, FourierGrid) and other.resolution == self.resolution

    def __hash__(self):
        return hash(self.resolution)

    def __repr__(self):
        return f'FourierGrid({self.resolution})'


class PeriodicField:
    """
    A rank 0, 1 or 2 tensor field on the torus held as Fourier coefficients

    Fields are immutable values: arithmetic returns new fields and the
    coefficient array is read-only. Physical values are computed on demand
    and cached.
    """
    def __init__(self, grid, coefficients, real=True, tags=()):
        coefficients = np.asarray(coefficients, dtype=complex)
        if coefficients.shape[-3:] != grid.shape:
            raise ValueError(f'coefficient shape {coefficients.shape} does not match {grid}')

        rank = coefficients.ndim - 3
        if rank not in (0, 1, 2) or any(d != 3 for d in coefficients.shape[:rank]):
            raise ValueError(f'unsupported component shape {coefficients.shape[:-3]}')

        coefficients = coefficients.copy()
        if real:
            # Enforce Hermitian symmetry by projecting onto the real-valued fields
            coefficients = grid.forward(grid.inverse(coefficients, real=True))

        coefficients.flags.writeable = False
        self.grid = grid
        self.coefficients = coefficients
        self.rank = rank
        self.real = real
        self.tags = frozenset(tags)
        self._values = None

    @classmethod
    def from_values(cls, grid, values, real=True, tags=()):
        values = np.asarray(values)
        field = cls.__new__(cls)
        coefficients = grid.forward(values)
        coefficients.flags.writeable = False
        field.grid = grid
        field.coefficients = coefficients
        field.rank = values.ndim - 3
        field.real = real
        field.tags = frozenset(tags)
        if real:
            cached = np.array(values.real, dtype=float)
        else:
            cached = np.array(values, dtype=complex)
        cached.flags.writeable = False
        field._values = cached
        return field

    @classmethod
    def from_coefficients(cls, grid, coefficients, real=True, tags=()):
        """Wraps coefficients that are already Hermitian symmetric (no projection)"""
        field = cls.__new__(cls)
        coefficients = np.array(coefficients, dtype=complex)
        coefficients.flags.writeable = False
        field.grid = grid
        field.coefficients = coefficients
        field.rank = coefficients.ndim - 3
        field.real = real
        field.tags = frozenset(tags)
        field._values = None
        return field

    @classmethod
    def zeros(cls, grid, rank, tags=()):
        return cls.from_coefficients(grid, np.zeros((3,) * rank + grid.shape, dtype=complex), tags=tags)

    @classmethod
    def random(cls, grid, rank, rng, bandwidth=None, amplitude=1.0, mean_zero=True):
        """Real band-limited random field with Gaussian coefficients for |k|_inf <= bandwidth"""
        if bandwidth is None:
            bandwidth = grid.resolution // 3
        shape = (3,) * rank + grid.shape
        values = rng.standard_normal(shape)
        coefficients = grid.forward(values)
        coefficients = np.where(grid.kmax <= bandwidth, coefficients, 0)
        if mean_zero:
            coefficients[..., 0, 0, 0] = 0
        coefficients *= amplitude * grid.points ** 0.5 / max(1, (2 * bandwidth + 1) ** 1.5)
        return cls.from_coefficients(grid, coefficients)

    @property
    def values(self):
        """Physical values on the grid (components first)"""
        if self._values is None:
            values = self.grid.inverse(self.coefficients, real=self.real)
            values.flags.writeable = False
            self._values = values
        return self._values

    @property
    def components(self):
        return self.coefficients.shape[:-3]

    def mean(self):
        """Spatial mean of each component"""
        mean = self.coefficients[..., 0, 0, 0]
        return mean.real if self.real else mean

    def component(self, *index):
        return PeriodicField.from_coefficients(self.grid, self.coefficients[index], real=self.real)

    def transpose(self):
        if self.rank != 2:
            raise ValueError('transpose requires a rank 2 field')
        return self._new(np.swapaxes(self.coefficients, 0, 1), self.tags)

    def trace(self):
        if self.rank != 2:
            raise ValueError('trace requires a rank 2 field')
        return self._new(np.einsum('ii...->...', self.coefficients))

    def with_tags(self, *tags):
        return self._new(self.coefficients, self.tags | set(tags))

    def _new(self, coefficients, tags=()):
        return PeriodicField.from_coefficients(self.grid, coefficients, real=self.real, tags=tags)

    def _check_compatible(self, other):
        if not isinstance(other, PeriodicField):
            raise TypeError(f'cannot combine PeriodicField with {type(other).__name__}')
        if other.grid != self.grid:
            raise ValueError(f'grid mismatch: {self.grid} and {other.grid}')
        if other.rank != self.rank:
            raise ValueError(f'rank mismatch: {self.rank} and {other.rank}')

    def __add__(self, other):
        self._check_compatible(other)
        return PeriodicField.from_coefficients(self.grid, self.coefficients + other.coefficients,
                                               real=self.real and other.real, tags=self.tags & other.tags)

    def __sub__(self, other):
        self._check_compatible(other)
        return PeriodicField.from_coefficients(self.grid, self.coefficients - other.coefficients,
                                               real=self.real and other.real, tags=self.tags & other.tags)

    def __neg__(self):
        return self._new(-self.coefficients, self.tags)

    def __mul__(self, scalar):
        if isinstance(scalar, PeriodicField):
            raise TypeError('use product() for pointwise products of fields')
        if np.iscomplexobj(scalar) and self.real:
            raise TypeError('complex scaling of a real field')
        return self._new(self.coefficients * scalar, self.tags)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def __repr__(self):
        return f'PeriodicField(rank={self.rank}, N={self.grid.resolution}, real={self.real})'


class SpaceTimeField:
    """Uniformly time-sampled sequence of PeriodicFields"""
    def __init__(self, frames, t0, dt):
        frames = list(frames)
        if not frames:
            raise ValueError('a space-time field needs at least one frame')
        if not dt > 0:
            raise ValueError(f'time step must be positive (got {dt})')

        grid, rank = frames[0].grid, frames[0].rank
        for frame in frames:
            if frame.grid != grid or frame.rank != rank:
                raise ValueError('all frames must share one grid and rank')

        self.frames = frames
        self.t0 = float(t0)
        self.dt = float(dt)
        self.grid = grid
        self.rank = rank

    @classmethod
    def from_coefficients(cls, grid, coefficients, t0, dt, real=True):
        frames = [PeriodicField.from_coefficients(grid, c, real=real) for c in coefficients]
        return cls(frames, t0, dt)

    @classmethod
    def constant(cls, field, t0, dt, count):
        return cls([field] * count, t0, dt)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, index):
        return self.frames[index]

    def __iter__(self):
        return iter(self.frames)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.frames))

    @property
    def coefficients(self):
        """Stacked coefficients with frames along the first axis"""
        return np.stack([f.coefficients for f in self.frames])

    def index_of(self, t):
        """Index of the frame at time t (must lie on the frame grid)"""
        index = int(round((t - self.t0) / self.dt))
        if index < 0 or index >= len(self.frames) or abs(self.t0 + index * self.dt - t) > 1e-9 * self.dt:
            raise ValueError(f't = {t} is not a frame time of this field')
        return index

    def window(self, start, stop=None):
        """Frames [start, stop) as a new field"""
        stop = len(self.frames) if stop is None else stop
        return SpaceTimeField(self.frames[start:stop], self.t0 + start * self.dt, self.dt)

    def aligned_to(self, other):
        """Restricts this field to the frame times of another field"""
        start = self.index_of(other.t0)
        if start + len(other) > len(self.frames):
            raise ValueError('field does not cover the requested frame range')
        return self.window(start, start + len(other))

    def map(self, fn):
        return SpaceTimeField([fn(f) for f in self.frames], self.t0, self.dt)

    def _check_compatible(self, other):
        if len(other) != len(self) or abs(other.t0 - self.t0) > 1e-9 * self.dt or other.dt != self.dt:
            raise ValueError('space-time fields are not sampled on the same frames')

    def __add__(self, other):
        self._check_compatible(other)
        return SpaceTimeField([a + b for a, b in zip(self.frames, other.frames)], self.t0, self.dt)

    def __sub__(self, other):
        self._check_compatible(other)
        return SpaceTimeField([a - b for a, b in zip(self.frames, other.frames)], self.t0, self.dt)

    def __mul__(self, scalar):
        return SpaceTimeField([f * scalar for f in self.frames], self.t0, self.dt)

    __rmul__ = __mul__


def _pointwise_magnitude(field):
    """Euclidean (Frobenius) magnitude at every grid point"""
    values = np.abs(field.values)
    if field.rank == 0:
        return values
    return np.sqrt(np.sum(values.reshape((-1,) + field.grid.shape) ** 2, axis=0))


def lebesgue_norm(f, p):
    """
    Grid quadrature of (int |f|^p)^(1/p) over the torus

    p=2 uses Parseval and is exact for band-limited fields; p=inf is the
    maximum over grid points (no oversampling).
    """
    if not p >= 1:
        raise ValueError(f'L^p norm requires p >= 1 (got {p})')
    if not f.real:
        raise ValueError('L^p norm requires a real-valued field')

    if p == 2:
        return float(np.sqrt(VOLUME * np.sum(np.abs(f.coefficients) ** 2)))

    magnitude = _pointwise_magnitude(f)
    if np.isinf(p):
        return float(np.max(magnitude))
    return float((VOLUME * np.mean(magnitude ** p)) ** (1.0 / p))


def sobolev_norm(f, s):
    """H^s norm (sum_k (1 + |k|^2)^s |f_k|^2 (2pi)^3)^(1/2); negative s is the dual norm"""
    weight = (1.0 + f.grid.k2) ** s
    return float(np.sqrt(VOLUME * np.sum(weight * np.abs(f.coefficients) ** 2)))


_DESCRIPTOR = re.compile(r'^(L|H)(inf|-?[0-9]*\.?[0-9]+)$')


def parse_norm(descriptor):
    """Returns (kind, exponent) for descriptors like 'L2', 'L1', 'Linf', 'H0.5', 'H-1'"""
    match = _DESCRIPTOR.match(descriptor)
    if not match:
        raise ValueError(f'unknown spatial norm \'{descriptor}\'')
    kind, exponent = match.groups()
    if kind == 'H' and exponent == 'inf':
        raise ValueError(f'unknown spatial norm \'{descriptor}\'')
    return kind, float(exponent)


def spatial_norm(f, descriptor):
    kind, exponent = parse_norm(descriptor)
    if kind == 'H':
        return sobolev_norm(f, exponent)
    return lebesgue_norm(f, exponent)


def holder_time_norm(F, alpha, descriptor='L2'):
    """
    Discrete C^alpha_t E norm of a space-time field

    Returns the sup over frame pairs of |F(s) - F(r)|_E / |s - r|^alpha plus
    sup_s |F(s)|_E. This is a lower bound of the continuum norm.
    """
    if not 0 < alpha < 1:
        raise ValueError(f'Hölder exponent must lie in (0, 1) (got {alpha})')
    if len(F) < 2:
        raise ValueError('Hölder norm requires at least two frames')

    kind, exponent = parse_norm(descriptor)
    sup = max(spatial_norm(f, descriptor) for f in F.frames)

    increment = 0.0
    if kind == 'H' or exponent == 2:
        # Hilbert norms act on weighted coefficient vectors
        s = exponent if kind == 'H' else 0.0
        weight = np.sqrt(VOLUME * (1.0 + F.grid.k2) ** s)
        data = np.stack([(f.coefficients * weight).ravel() for f in F.frames])
        for lag in range(1, len(F)):
            diff = data[lag:] - data[:-lag]
            norms = np.sqrt(np.sum(np.abs(diff) ** 2, axis=1))
            increment = max(increment, float(np.max(norms)) / (lag * F.dt) ** alpha)
    else:
        for lag in range(1, len(F)):
            for i in range(len(F) - lag):
                norm = lebesgue_norm(F.frames[i + lag] - F.frames[i], exponent)
                increment = max(increment, norm / (lag * F.dt) ** alpha)

    return increment + sup


def leray_project(f):
    """Helmholtz projection onto divergence-free, mean-zero vector fields"""
    if f.rank != 1:
        raise ValueError(f'Leray projection requires a vector field (got rank {f.rank})')

    grid = f.grid
    kd = grid.kd
    safe = np.where(grid.kd2 == 0, 1, grid.kd2)
    k_dot_f = np.sum(kd * f.coefficients, axis=0)
    projected = f.coefficients - kd * k_dot_f / safe

    # Modes without a resolved derivative (DC and pure Nyquist) are dropped
    projected = np.where(grid.kd2 == 0, 0, projected)
    return PeriodicField.from_coefficients(grid, projected, real=f.real)


def spectral_projector(f, kind, kappa=0.0):
    """
    Fourier band projectors

    nonzero_mean zeroes the DC coefficient, high_pass keeps |k| >= kappa
    (kappa = 0 keeps everything) and low_pass keeps |k| <= kappa.
    """
    if kind == 'nonzero_mean':
        coefficients = f.coefficients.copy()
        coefficients[..., 0, 0, 0] = 0
        return PeriodicField.from_coefficients(f.grid, coefficients, real=f.real, tags=f.tags)

    if kind not in ('high_pass', 'low_pass'):
        raise ValueError(f'unknown projector kind \'{kind}\'')
    if kappa < 0:
        raise ValueError(f'band edge must be non-negative (got {kappa})')

    magnitude = np.sqrt(f.grid.k2)
    keep = magnitude >= kappa if kind == 'high_pass' else magnitude <= kappa
    return PeriodicField.from_coefficients(f.grid, np.where(keep, f.coefficients, 0), real=f.real, tags=f.tags)


def heat_semigroup(f, t, c=0.0):
    """e^{-ct} S(t) f: coefficients multiplied by exp(-(|k|^2 + c) t)"""
    if t < 0:
        raise ValueError(f'semigroup time must be non-negative (got {t})')
    if c < 0:
        raise ValueError(f'dissipative constant must be non-negative (got {c})')
    if t == 0:
        return f
    return PeriodicField.from_coefficients(f.grid, f.coefficients * np.exp(-(f.grid.k2 + c) * t),
                                           real=f.real, tags=f.tags)


def truncate(f, zeta):
    """
    Truncation operator: keep |k|^2 <= zeta and clamp every retained real coefficient into [-zeta, zeta]

    Real coefficients are taken in the sup-normalised basis {cos(k.x), sin(k.x)}
    (one cosine for self-conjugate modes), so f = sum a_k cos(k.x) + b_k sin(k.x)
    with a_k = 2 Re c_k and b_k = -2 Im c_k.
    """
    if zeta < 1:
        raise ValueError(f'truncation level must be at least 1 (got {zeta})')
    if not f.real:
        raise ValueError('truncation requires a real-valued field')

    grid = f.grid
    coefficients = f.coefficients
    pair = ~grid.self_conjugate()

    real = np.where(pair, np.clip(2 * coefficients.real, -zeta, zeta) / 2,
                    np.clip(coefficients.real, -zeta, zeta))
    imag = np.where(pair, np.clip(2 * coefficients.imag, -zeta, zeta) / 2, 0)

    clamped = np.where(grid.k2 <= zeta, real + 1j * imag, 0)
    return PeriodicField.from_coefficients(grid, clamped, real=True)


def _padded_values(field, size):
    """Physical values on a size^3 grid after zero-padding the spectrum (Nyquist dropped)"""
    n = field.grid.resolution
    k = np.fft.fftfreq(n, 1.0 / n).astype(int)
    keep = np.flatnonzero(k != -n // 2)
    target = k[keep] % size

    padded = np.zeros(field.components + (size, size, size), dtype=complex)
    source = field.coefficients[(Ellipsis,) + np.ix_(keep, keep, keep)]
    padded[(Ellipsis,) + np.ix_(target, target, target)] = source
    values = fft.ifftn(padded, axes=(-3, -2, -1), workers=field.grid.workers) * size ** 3
    return values.real if field.real else values


def _truncated_coefficients(grid, values):
    """Inverse of _padded_values: transform on the padded grid and keep the resolved modes"""
    size = values.shape[-1]
    n = grid.resolution
    padded = fft.fftn(values, axes=(-3, -2, -1), workers=grid.workers) / size ** 3
    k = np.fft.fftfreq(n, 1.0 / n).astype(int)
    keep = np.flatnonzero(k != -n // 2)
    target = k[keep] % size

    coefficients = np.zeros(values.shape[:-3] + grid.shape, dtype=complex)
    coefficients[(Ellipsis,) + np.ix_(keep, keep, keep)] = padded[(Ellipsis,) + np.ix_(target, target, target)]
    return coefficients


_PRODUCTS = {
    'scale': None,
    'outer': 'i...,j...->ij...',
    'dot': 'i...,i...->...',
    'matvec': 'ij...,j...->i...',
    'contract': 'ij...,ij...->...'
}


def product(a, b, kind='scale', dealias=True):
    """
    Pointwise product of two fields

    kind: scale (rank 0 times any rank), outer (vector x vector -> matrix),
    dot (vector . vector), matvec (matrix . vector), contract (matrix : matrix),
    cross (vector x vector). dealias=True uses the 3/2 zero-padding rule;
    dealias=False multiplies grid values directly (collocation).
    """
    if a.grid != b.grid:
        raise ValueError(f'grid mismatch: {a.grid} and {b.grid}')
    if kind not in _PRODUCTS and kind != 'cross':
        raise ValueError(f'unknown product kind \'{kind}\'')

    grid = a.grid
    if dealias:
        size = 3 * grid.resolution // 2
        va, vb = _padded_values(a, size), _padded_values(b, size)
    else:
        va, vb = a.values, b.values

    if kind == 'scale':
        if a.rank != 0:
            raise ValueError('scale product requires a scalar first argument')
        values = va * vb
    elif kind == 'cross':
        if a.rank != 1 or b.rank != 1:
            raise ValueError('cross product requires two vector fields')
        values = np.cross(va, vb, axis=0)
    else:
        expected = {'outer': (1, 1), 'dot': (1, 1), 'matvec': (2, 1), 'contract': (2, 2)}[kind]
        if (a.rank, b.rank) != expected:
            raise ValueError(f'{kind} product requires ranks {expected} (got {(a.rank, b.rank)})')
        values = np.einsum(_PRODUCTS[kind], va, vb)

    real = a.real and b.real
    if dealias:
        return PeriodicField.from_coefficients(grid, _truncated_coefficients(grid, values), real=real)
    return PeriodicField.from_values(grid, values, real=real)


def traceless_part(S):
    """Trace-free part S - tr(S) Id / 3 of a rank 2 field"""
    if S.rank != 2:
        raise ValueError('trace-free part requires a rank 2 field')
    coefficients = np.array(S.coefficients)
    trace = np.einsum('ii...->...', coefficients) / 3
    for i in range(3):
        coefficients[i, i] -= trace
    return PeriodicField.from_coefficients(S.grid, coefficients, real=S.real, tags=S.tags | {'trace-free'})


def traceless_sym_product(a, b, symmetric=False, dealias=True):
    """a (x) b or a (x)_s b = a (x) b + b (x) a with the trace removed"""
    if a.rank != 1 or b.rank != 1:
        raise ValueError('traceless products require two vector fields')
    outer = product(a, b, 'outer', dealias=dealias)
    tags = {'trace-free'}
    if symmetric:
        outer = outer + outer.transpose()
        tags.add('symmetric')
    elif a is b:
        tags.add('symmetric')
    return traceless_part(outer).with_tags(*tags)


def symmetry_defect(S):
    """Largest pointwise |S - S^T| and |tr S| of a rank 2 field"""
    values = S.values
    asym = np.max(np.abs(values - np.swapaxes(values, 0, 1)))
    trace = np.max(np.abs(np.einsum('ii...->...', values)))
    return float(asym), float(trace)


def save_snapshot(path, field):
    """Writes a field as a JFLD header followed by little-endian complex128 coefficients"""
    header = np.zeros(1, dtype=SNAPSHOT_HEADER)
    header['magic'] = SNAPSHOT_MAGIC
    header['version'] = SNAPSHOT_VERSION
    header['resolution'] = field.grid.resolution
    header['rank'] = field.rank
    header['real'] = int(field.real)
    with open(path, 'wb') as output:
        output.write(header.tobytes())
        output.write(np.ascontiguousarray(field.coefficients, dtype='<c16').tobytes())


def load_snapshot(path, workers=1):
    with open(path, 'rb') as snapshot:
        data = snapshot.read()

    if len(data) < SNAPSHOT_HEADER.itemsize:
        raise ValueError(f'{path} is too short to be a field snapshot')
    header = np.frombuffer(data[:SNAPSHOT_HEADER.itemsize], dtype=SNAPSHOT_HEADER)[0]
    if header['magic'] != SNAPSHOT_MAGIC:
        raise ValueError(f'{path} is not a field snapshot')
    if header['version'] != SNAPSHOT_VERSION:
        raise ValueError(f'{path} has unsupported snapshot version {header["version"]}')

    grid = FourierGrid(int(header['resolution']), workers=workers)
    shape = (3,) * int(header['rank']) + grid.shape
    payload = np.frombuffer(data[SNAPSHOT_HEADER.itemsize:], dtype='<c16')
    if payload.size != np.prod(shape):
        raise ValueError(f'{path} payload does not match its header')
    return PeriodicField.from_coefficients(grid, payload.reshape(shape), real=bool(header['real']))


def norms_table(fields, descriptors=('L1', 'L2', 'Linf', 'H1')):
    """astropy Table of spatial norms, one row per labelled field"""
    rows = []
    for label, field in fields.items():
        rows.append([label] + [spatial_norm(field, d) for d in descriptors])
    return Table(rows=rows, names=['field'] + list(descriptors))
