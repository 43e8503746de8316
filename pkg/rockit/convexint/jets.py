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

"""Intermittent jets: direction set, profiles, jet synthesis and scaling fits"""

# pylint: disable=too-many-arguments
# pylint: disable=too-many-locals
# pylint: disable=too-many-instance-attributes

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
import itertools
import logging
import math
import numpy as np
from astropy.table import Table
from scipy import integrate
from .calculus import curl_curl
from .fields import PeriodicField, lebesgue_norm

log = logging.getLogger(__name__)

DEFAULT_DIRECTIONS = (
    ('3/5', '4/5', 0), ('3/5', '-4/5', 0),
    (0, '3/5', '4/5'), (0, '3/5', '-4/5'),
    ('4/5', 0, '3/5'), ('-4/5', 0, '3/5')
)

# Symmetric matrix coordinates used for the 6x6 basis matrix
SYMMETRIC_INDICES = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))

# Safety factor applied to the linear bound for the admissibility radius
ADMISSIBILITY_MARGIN = 0.99

# Coefficients below this are treated as non-positive
POSITIVITY_TOLERANCE = 1e-12

# Absolute accuracy requested for the profile normalisation checks
DIAGNOSTIC_TOLERANCE = 1e-12

# Fraction of spectral energy above 2N/3 above which jet synthesis fails
ALIASING_GUARD = 1e-8

# Grid points per jet frequency: N >= RESOLUTION_FACTOR n_* lambda
RESOLUTION_FACTOR = 8

# Search range for integer vectors orthogonal to a direction
FRAME_SEARCH_RANGE = 10

# Fine sampling of one jet cell for the scaling fits
CELL_SAMPLES_1D = 512
CELL_SAMPLES_2D = 128

# x_1 planes evaluated at once by the slab moment quadrature
MOMENT_SLAB = 8


def _bump(s):
    """g(s) = exp(-1/(1-s)) for s < 1, zero otherwise"""
    inside = s < 1
    safe = np.where(inside, s, 0)
    return np.where(inside, np.exp(-1.0 / (1.0 - safe)), 0.0)


def _laplacian_bump(s):
    """Planar Laplacian of g(|y|^2) written as a function of s = |y|^2"""
    inside = s < 1
    safe = np.where(inside, s, 0)
    d = 1.0 - safe
    value = 4 * _bump(safe) * (-d ** -2 + safe * d ** -4 - 2 * safe * d ** -3)
    return np.where(inside, value, 0.0)


def _quad(integrand, a, b):
    """Adaptive quadrature that raises when scipy reports a convergence problem"""
    result = integrate.quad(integrand, a, b, epsabs=1e-14, epsrel=1e-12, limit=200, full_output=1)
    if len(result) > 3:
        raise RuntimeError(f'profile quadrature did not converge: {result[3]}')
    return result[0]


def _diagnostic_quad(integrand, a, b):
    """
    Quadrature for the normalisation checks: value and scipy's error estimate

    Integrals that vanish exactly (means of Laplacians and odd functions) have
    no relative accuracy to reach, so only an absolute tolerance is requested
    and the estimate is recorded instead of raising.
    """
    value, error, *_ = integrate.quad(integrand, a, b, epsabs=DIAGNOSTIC_TOLERANCE, epsrel=0, limit=200,
                                      full_output=1)
    return value, error


@dataclass(frozen=True)
class ProfileSet:
    """
    Jet profile functions

    Phi(y) = c_Phi g(|y|^2) on the unit disk, phi = -Laplacian(Phi) and
    psi(x) = c_psi x g(x^2) on (-1, 1), with g(s) = exp(-1/(1-s)).
    """
    c_Phi: float
    c_psi: float
    checks: dict = field(default_factory=dict)

    def Phi(self, y1, y2):
        return self.c_Phi * _bump(y1 ** 2 + y2 ** 2)

    def grad_Phi(self, y1, y2):
        s = y1 ** 2 + y2 ** 2
        inside = s < 1
        d = np.where(inside, 1.0 - s, 1.0)
        factor = np.where(inside, -2 * self.c_Phi * _bump(s) / d ** 2, 0.0)
        return np.array([factor * y1, factor * y2])

    def phi(self, y1, y2):
        return -self.c_Phi * _laplacian_bump(y1 ** 2 + y2 ** 2)

    def psi(self, x):
        return self.c_psi * x * _bump(x ** 2)

    def dpsi(self, x):
        s = x ** 2
        inside = s < 1
        d = np.where(inside, 1.0 - s, 1.0)
        return np.where(inside, self.c_psi * _bump(s) * (1 - 2 * s / d ** 2), 0.0)


def build_profiles():
    """Computes the profile normalisation constants by adaptive quadrature"""
    # Radial integrals over the plane: int F(|y|^2) dy = pi int_0^1 F(s) ds
    laplacian_energy = math.pi * _quad(lambda s: float(_laplacian_bump(np.float64(s))) ** 2, 0, 1)
    c_Phi = 2 * math.pi / math.sqrt(laplacian_energy)

    psi_energy = _quad(lambda x: (x * float(_bump(np.float64(x * x)))) ** 2, -1, 1)
    c_psi = math.sqrt(2 * math.pi / psi_energy)

    profiles = ProfileSet(c_Phi, c_psi)

    def phi_radial(s):
        return float(-c_Phi * _laplacian_bump(np.float64(s)))

    def psi_line(x):
        return float(profiles.psi(np.float64(x)))

    integrals = {
        'phi_mean': (lambda s: math.pi * phi_radial(s), 0, 1),
        'phi_energy': (lambda s: phi_radial(s) ** 2 / (4 * math.pi), 0, 1),
        'psi_mean': (psi_line, -1, 1),
        'psi_energy': (lambda x: psi_line(x) ** 2 / (2 * math.pi), -1, 1)
    }

    checks = profiles.checks
    for name, (integrand, a, b) in integrals.items():
        checks[name], checks[name + '_error'] = _diagnostic_quad(integrand, a, b)
    return profiles


def _as_fraction_vector(direction):
    vector = tuple(Fraction(c) for c in direction)
    if len(vector) != 3:
        raise ValueError(f'direction {direction} does not have three components')
    if sum(c * c for c in vector) != 1:
        raise ValueError(f'direction {direction} is not a rational unit vector')
    return vector


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _dot(a, b):
    return sum(p * q for p, q in zip(a, b))


def _orthogonal_frame(xi):
    """Smallest integer vector a orthogonal to xi with integer length, ordered by (|a|^2, a)"""
    r = range(-FRAME_SEARCH_RANGE, FRAME_SEARCH_RANGE + 1)
    candidates = []
    for a in itertools.product(r, r, r):
        norm2 = a[0] ** 2 + a[1] ** 2 + a[2] ** 2
        if norm2 == 0 or sum(Fraction(ai) * x for ai, x in zip(a, xi)) != 0:
            continue
        root = math.isqrt(norm2)
        if root * root == norm2:
            candidates.append((norm2, a, root))

    if not candidates:
        raise ValueError(f'no rational orthonormal frame found for direction {xi}')

    _, a, root = min(candidates)
    A = tuple(Fraction(ai, root) for ai in a)
    return A, _cross(xi, A)


def _wrap(u):
    """Maps angles into [-pi, pi)"""
    return np.mod(u + np.pi, 2 * np.pi) - np.pi


@dataclass(frozen=True)
class DirectionSet:
    """
    Geometric data for the jets

    directions, frames and n_star are exact rationals. M has columns
    vec(xi (x) xi) in coordinates (11, 22, 33, 12, 13, 23) so that
    c(R) = M_inv vec(R) gives R = sum_xi c_xi(R) xi (x) xi. margins maps
    direction pairs (i, j) to the tube separation margin of the placed shifts
    and overlap is the fraction of pairs whose tubes meet.
    """
    directions: tuple
    frames: tuple
    n_star: int
    M: np.ndarray
    M_inv: np.ndarray
    c_identity: np.ndarray
    dual_norms: np.ndarray
    r_star: float
    shifts: tuple
    overlap: float = 0.0
    margins: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.directions)

    def vector(self, index):
        return np.array([float(c) for c in self.directions[index]])

    def frame(self, index):
        A, B = self.frames[index]
        return np.array([float(c) for c in A]), np.array([float(c) for c in B])

    def integer_vectors(self, index):
        """n_star xi, n_star A, n_star (xi x A) as integer arrays"""
        xi = self.directions[index]
        A, B = self.frames[index]
        return tuple(np.array([int(self.n_star * c) for c in v]) for v in (xi, A, B))

    def coefficients(self, R):
        """c_xi(R) for a symmetric matrix or a (3, 3, ...) array of matrices"""
        R = np.asarray(R, dtype=float)
        vec = np.array([R[i, j] for i, j in SYMMETRIC_INDICES])
        return np.tensordot(self.M_inv, vec, axes=1)

    def gamma(self, R):
        """gamma_xi(R) = sqrt(c_xi(R)), vectorised over trailing axes"""
        R = np.asarray(R, dtype=float)
        identity = np.eye(3).reshape((3, 3) + (1,) * (R.ndim - 2))
        distance = np.sqrt(np.sum((R - identity) ** 2, axis=(0, 1)))
        if np.any(distance > self.r_star * (1 + 1e-12)):
            raise ValueError(f'|R - Id| = {np.max(distance):.4f} exceeds the admissibility radius {self.r_star:.4f}')

        c = self.coefficients(R)
        if np.any(c <= 0):
            raise ValueError(f'geometric coefficient {np.min(c):.3e} is not positive')
        return np.sqrt(c)


def _tube_coordinates(x, K_A, K_B, alpha, r_perp):
    """Scaled transverse coordinates u = y / r_perp and the support mask |u| < 1"""
    shifted = x - np.asarray(alpha).reshape((3,) + (1,) * (np.ndim(x) - 1))
    u1 = _wrap(np.tensordot(K_A, shifted, axes=1)) / r_perp
    u2 = _wrap(np.tensordot(K_B, shifted, axes=1)) / r_perp
    return u1, u2, u1 ** 2 + u2 ** 2 < 1


def _primitive(values):
    """Smallest integer vector parallel to a vector of Fractions"""
    scale = math.lcm(*(v.denominator for v in values))
    integers = [int(v * scale) for v in values]
    divisor = math.gcd(*integers)
    return tuple(i // divisor for i in integers)


def _phase_relation(xi, frame, xi_other, frame_other):
    """
    Primitive integer n with n . (theta_A, theta_B, theta'_A, theta'_B) constant on the torus

    Both tubes' transverse phases are linear in x, so the four phases of a
    point satisfy exactly one integer relation, carried by xi x xi'.
    """
    v = _cross(xi, xi_other)
    A, B = frame
    A_other, B_other = frame_other
    return _primitive((_dot(v, A), _dot(v, B), -_dot(v, A_other), -_dot(v, B_other)))


def _pair_margin(relation, phases, phases_other, r_perp):
    """
    Distance of n . beta from 2 pi Z minus its reach r_perp (|n_12| + |n_34|)

    Non-negative exactly when the two periodised tubes do not meet.
    """
    n = np.asarray(relation, dtype=float)
    offset = abs(float(_wrap(np.dot(n, np.concatenate([phases, phases_other])))))
    return offset - r_perp * (math.hypot(n[0], n[1]) + math.hypot(n[2], n[3]))


def _place_shifts(directions, frames, n_star, params, placement, require_disjoint):
    """
    Greedy search for shifts whose periodised tubes are pairwise disjoint

    Candidates are the placement x placement lattice of the tube period cell.
    Returns the shifts, the margin of every direction pair (negative when the
    tubes meet) and the fraction of pairs that meet. Without require_disjoint
    the candidate with the largest worst-case margin is kept.
    """
    m = n_star * params.lam_r_perp
    period = 2 * np.pi / m
    vectors = [tuple(np.array([float(c) for c in v]) for v in frame) for frame in frames]
    relations = {(i, j): _phase_relation(directions[i], frames[i], directions[j], frames[j])
                 for i, j in itertools.combinations(range(len(directions)), 2)}

    shifts, phases = [], []
    for index, (A, B) in enumerate(vectors):
        best = None
        for i, j in itertools.product(range(placement), range(placement)):
            alpha = period * (i * A + j * B) / placement
            beta = m * np.array([np.dot(A, alpha), np.dot(B, alpha)])
            margin = min((_pair_margin(relations[other, index], phases[other], beta, params.r_perp)
                          for other in range(index)), default=math.inf)
            if best is None or margin > best[0]:
                best = (margin, alpha, beta)
            if margin >= 0:
                break

        margin, alpha, beta = best
        if margin < 0 and require_disjoint:
            raise ValueError(f'no disjoint shift found for direction {tuple(str(c) for c in directions[index])} '
                             f'on a {placement}x{placement} placement lattice (best margin {margin:.3e})')
        shifts.append(tuple(alpha))
        phases.append(beta)

    margins = {pair: _pair_margin(relation, phases[pair[0]], phases[pair[1]], params.r_perp)
               for pair, relation in relations.items()}
    meeting = sum(1 for margin in margins.values() if margin < 0)
    if meeting:
        log.warning('jet tubes meet for %d of %d direction pairs', meeting, len(margins))
    return tuple(shifts), margins, meeting / len(margins)


def support_collisions(directions, params, samples, rng):
    """
    Sampled points of each tube that fall inside another tube, by direction pair

    Points are drawn uniformly on the support of tube i by moving uniform
    points of the torus transversally onto random disk coordinates, so every
    periodic copy of the tube is covered. Exact disjointness gives all zeros.
    """
    m = directions.n_star * params.lam_r_perp
    counts = {}
    for i, j in itertools.permutations(range(len(directions)), 2):
        A, B = directions.frame(i)
        alpha = np.asarray(directions.shifts[i])
        x = rng.uniform(0, 2 * np.pi, (3, samples))
        radius = params.r_perp * np.sqrt(rng.uniform(0, 1, samples))
        angle = rng.uniform(0, 2 * np.pi, samples)
        u1, u2, _ = _tube_coordinates(x, m * A, m * B, alpha, 1.0)
        x = x + (A.reshape(3, 1) * (radius * np.cos(angle) - u1)
                 + B.reshape(3, 1) * (radius * np.sin(angle) - u2)) / m

        A_j, B_j = directions.frame(j)
        _, _, inside = _tube_coordinates(x, m * A_j, m * B_j, directions.shifts[j], params.r_perp)
        counts[(i, j)] = int(np.count_nonzero(inside))
    return counts


def build_direction_set(params=None, directions=None, placement=8, require_disjoint=True):
    """
    Builds the direction set with frames, n_star, basis inverse and admissibility radius

    Shifts are placed for the tube geometry (lambda r_perp, r_perp) of params
    when given, otherwise they are zero. The placement needs no grid.
    """
    directions = tuple(_as_fraction_vector(d) for d in (directions or DEFAULT_DIRECTIONS))
    if len(directions) != 6:
        raise ValueError(f'the geometric decomposition needs exactly 6 directions (got {len(directions)})')

    frames = tuple(_orthogonal_frame(xi) for xi in directions)

    denominators = [c.denominator for xi, (A, B) in zip(directions, frames) for v in (xi, A, B) for c in v]
    n_star = math.lcm(*denominators)

    M = np.array([[float(xi[i] * xi[j]) for i, j in SYMMETRIC_INDICES] for xi in directions]).T
    if np.linalg.matrix_rank(M) < 6:
        raise ValueError('direction tensors xi (x) xi are linearly dependent')
    M_inv = np.linalg.inv(M)

    identity = np.array([1, 1, 1, 0, 0, 0], dtype=float)
    c_identity = M_inv @ identity
    if np.min(c_identity) <= POSITIVITY_TOLERANCE:
        raise ValueError(f'no admissibility radius: c(Id) = {np.round(c_identity, 12).tolist()} '
                         'has non-positive entries')

    diagonal = np.sum(M_inv[:, :3] ** 2, axis=1)
    off_diagonal = np.sum(M_inv[:, 3:] ** 2, axis=1) / 2
    dual_norms = np.sqrt(diagonal + off_diagonal)
    r_star = min(0.5, ADMISSIBILITY_MARGIN * float(np.min(c_identity / dual_norms)))

    overlap, margins = 0.0, {}
    if params is not None:
        shifts, margins, overlap = _place_shifts(directions, frames, n_star, params, placement, require_disjoint)
    else:
        shifts = tuple((0.0, 0.0, 0.0) for _ in directions)

    return DirectionSet(directions, frames, n_star, M, M_inv, c_identity, dual_norms, r_star, shifts, overlap,
                        margins)


def gamma_coefficients(R, directions):
    """Maps each direction (as a tuple of Fractions) to gamma_xi(R) for a single symmetric matrix"""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f'expected a 3x3 matrix (got shape {R.shape})')
    if np.max(np.abs(R - R.T)) > 1e-12:
        raise ValueError('geometric decomposition requires a symmetric matrix')
    gamma = directions.gamma(R)
    return dict(zip(directions.directions, gamma))


def exact_fraction(value):
    """Exact rational for ints and Fractions, nearest small-denominator rational for floats"""
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    return Fraction(value).limit_denominator(10**6)


class JetParameters:
    """
    Parameters (r_perp, r_par, lambda, mu) of one jet family on a grid

    lambda * r_perp must be a positive integer and 0 < r_perp < r_par < 1.
    """
    def __init__(self, r_perp, r_par, lam, mu, grid=None, t=0.0):
        if not 0 < r_perp < r_par < 1:
            raise ValueError(f'r_perp = {r_perp}, r_par = {r_par} violate 0 < r_perp < r_par < 1')
        if not lam > 0 or not mu > 0:
            raise ValueError(f'lambda = {lam} and mu = {mu} must be positive')

        product = exact_fraction(lam) * exact_fraction(r_perp)
        if product.denominator != 1 or product <= 0:
            raise ValueError(f'lambda * r_perp = {float(product)} is not a positive integer')

        self.r_perp = float(r_perp)
        self.r_par = float(r_par)
        self.lam = float(lam)
        self.mu = float(mu)
        self.lam_r_perp = int(product)
        self.grid = grid
        self.t = float(t)

    @classmethod
    def power_preset(cls, lam, grid=None):
        """r_perp = lambda^(-7/8), r_par = lambda^(-1/2), mu = lambda^(5/4) for lambda = n^8"""
        n = round(lam ** 0.125)
        if n < 2 or n ** 8 != lam:
            raise ValueError(f'lambda = {lam} is not the eighth power of an integer n >= 2')
        return cls(Fraction(1, n ** 7), Fraction(1, n ** 4), n ** 8, n ** 10, grid)

    def at(self, t):
        params = JetParameters.__new__(JetParameters)
        params.__dict__.update(self.__dict__)
        params.t = float(t)
        return params

    def with_grid(self, grid):
        params = self.at(self.t)
        params.grid = grid
        return params

    def as_dict(self):
        return {'r_perp': self.r_perp, 'r_par': self.r_par, 'lambda': self.lam, 'mu': self.mu}

    def __repr__(self):
        return f'JetParameters(r_perp={self.r_perp}, r_par={self.r_par}, lambda={self.lam}, mu={self.mu})'


@dataclass
class Jet:
    """Sampled jet for one direction at one time"""
    direction: tuple
    W: PeriodicField
    W_c: PeriodicField
    V: PeriodicField
    V_t: PeriodicField
    psi: np.ndarray
    psi_t: np.ndarray
    phi: np.ndarray
    Phi: np.ndarray
    corrector: np.ndarray
    normalization: float
    aliasing: float
    moment: float


def aliasing_fraction(f):
    """Fraction of the spectral energy carried by modes with |k|_inf > N/3"""
    energy = np.abs(f.coefficients) ** 2
    total = np.sum(energy)
    if total == 0:
        return 0.0
    return float(np.sum(energy[..., f.grid.kmax > f.grid.resolution // 3]) / total)


def synthesize_jet(index, params, profiles, directions, discrete_normalization=False,
                   resolution_factor=RESOLUTION_FACTOR, aliasing_guard=ALIASING_GUARD):
    """
    Samples W, W^(c) and V for direction `index` at time params.t

    W = xi psi phi, V = xi psi Phi / (n_star lambda)^2 and W^(c) = curl curl V - W,
    with psi evaluated at n_star r_perp lambda (x.xi + mu t) and phi, Phi at the
    shifted transverse coordinates. discrete_normalization rescales psi so that
    the grid mean of psi^2 phi^2 is exactly 1.

    Raises ValueError when N < resolution_factor n_star lambda or when the
    aliasing fraction of W exceeds aliasing_guard. aliasing_guard=None only
    measures the fraction.
    """
    grid = params.grid
    if grid is None:
        raise ValueError('jet synthesis requires parameters with a grid')

    required = resolution_factor * directions.n_star * params.lam
    if grid.resolution < required:
        raise ValueError(f'grid resolution {grid.resolution} does not resolve the jet '
                         f'(requires N >= {resolution_factor} n_* lambda = {required:g})')

    n_xi, n_A, n_B = directions.integer_vectors(index)
    m = directions.n_star * params.lam_r_perp
    scale = (directions.n_star * params.lam) ** 2

    xi = directions.vector(index)
    A, B = directions.frame(index)

    z = _wrap(np.tensordot(params.lam_r_perp * n_xi, grid.x, axes=1) + m * params.mu * params.t)
    u1, u2, _ = _tube_coordinates(grid.x, params.lam_r_perp * n_A, params.lam_r_perp * n_B,
                                  directions.shifts[index], params.r_perp)

    s = z / params.r_par
    psi = profiles.psi(s) / np.sqrt(params.r_par)
    dpsi = profiles.dpsi(s) / params.r_par ** 1.5
    phi = profiles.phi(u1, u2) / params.r_perp
    Phi = profiles.Phi(u1, u2) / params.r_perp
    grad_Phi = profiles.grad_Phi(u1, u2) / params.r_perp ** 2

    normalization = 1.0
    moment = float(np.mean(psi ** 2 * phi ** 2))
    if moment == 0:
        raise ValueError(f'jet support of direction {index} is not resolved by {grid}')
    if discrete_normalization:
        normalization = 1.0 / np.sqrt(moment)
        psi = psi * normalization
        dpsi = dpsi * normalization
        moment = 1.0

    psi_t = m * params.mu * dpsi

    xi_field = xi.reshape(3, 1, 1, 1)
    W = PeriodicField.from_values(grid, xi_field * (psi * phi))
    V = PeriodicField.from_values(grid, xi_field * (psi * Phi) / scale)
    V_t = PeriodicField.from_values(grid, xi_field * (psi_t * Phi) / scale)
    W_c = curl_curl(V) - W

    # W^(c) = r_perp^2 psi'(z) (d_1 Phi A + d_2 Phi (xi x A)) in closed form
    corrector = params.r_perp ** 2 * dpsi * (A.reshape(3, 1, 1, 1) * grad_Phi[0] + B.reshape(3, 1, 1, 1) * grad_Phi[1])

    aliasing = aliasing_fraction(W)
    if aliasing_guard is not None and aliasing > aliasing_guard:
        raise ValueError(f'jet {index} is under-resolved by {grid}: aliasing fraction {aliasing:.3e} '
                         f'exceeds the guard {aliasing_guard:.1e}')

    return Jet(directions.directions[index], W, W_c, V, V_t, psi, psi_t, phi, Phi, corrector,
               normalization, aliasing, moment)


def grid_moment(index, params, profiles, directions, resolution):
    """
    Grid mean of psi^2 phi^2 for direction `index` on an N^3 grid without normalisation

    The continuum mean is 1. Points are evaluated MOMENT_SLAB planes of x_1 at
    a time, so resolutions well beyond those of a full field stay affordable.
    """
    n_xi, n_A, n_B = directions.integer_vectors(index)
    m = directions.n_star * params.lam_r_perp
    alpha = np.asarray(directions.shifts[index])
    x = 2 * np.pi * np.arange(resolution) / resolution
    x2, x3 = x.reshape(1, -1, 1), x.reshape(1, 1, -1)

    def phase(x1, K, shift):
        K = params.lam_r_perp * K
        return K[0] * (x1 - shift[0]) + K[1] * (x2 - shift[1]) + K[2] * (x3 - shift[2])

    total = 0.0
    for start in range(0, resolution, MOMENT_SLAB):
        x1 = x[start:start + MOMENT_SLAB].reshape(-1, 1, 1)
        z = _wrap(phase(x1, n_xi, np.zeros(3)) + m * params.mu * params.t)
        u1 = _wrap(phase(x1, n_A, alpha)) / params.r_perp
        u2 = _wrap(phase(x1, n_B, alpha)) / params.r_perp
        psi = profiles.psi(z / params.r_par) / np.sqrt(params.r_par)
        phi = profiles.phi(u1, u2) / params.r_perp
        total += float(np.sum(psi ** 2 * phi ** 2))
    return total / resolution ** 3


def sampled_norms(jet, p):
    """L^p norms over the torus of the sampled W, closed-form W^(c) and V of a synthesized jet"""
    grid = jet.W.grid
    return {
        'W': lebesgue_norm(jet.W, p),
        'W_c': lebesgue_norm(PeriodicField.from_values(grid, jet.corrector), p),
        'V': lebesgue_norm(jet.V, p)
    }


def norm_agreement(params, p, profiles, directions, index=0, resolution_factor=RESOLUTION_FACTOR,
                   aliasing_guard=ALIASING_GUARD):
    """
    Compares the cell norms behind scaling_probe with the norms of a synthesized jet

    Returns (sampled, cell, relative difference) for W, W^(c) and V.
    """
    jet = synthesize_jet(index, params, profiles, directions, resolution_factor=resolution_factor,
                         aliasing_guard=aliasing_guard)
    agreement = {}
    for quantity, sampled in sampled_norms(jet, p).items():
        cell = cell_norm(params, profiles, directions.n_star, p, quantity=quantity)
        agreement[quantity] = (sampled, cell, abs(sampled - cell) / cell)
    return agreement


def corrector_identity_residual(jet):
    """Relative L2 distance between the spectral corrector and its closed form"""
    closed = PeriodicField.from_values(jet.W_c.grid, jet.corrector)
    reference = lebesgue_norm(closed, 2)
    if reference == 0:
        return 0.0
    return lebesgue_norm(jet.W_c - closed, 2) / reference


def jet_moment(jet):
    """Grid mean of W (x) W, to compare with xi (x) xi"""
    values = jet.W.values
    return np.tensordot(values, values, axes=([1, 2, 3], [1, 2, 3])) / jet.W.grid.points


@dataclass
class ScalingFit:
    """Log-log slope of a jet norm against one varying parameter"""
    quantity: str
    parameter: str
    p: float
    n: int
    m: int
    slope: float
    predicted: float
    intercept: float
    residual: float
    table: Table


SWEEP_PARAMETERS = ('r_perp', 'r_par', 'lambda', 'mu')

# Exponents of (r_perp, r_par, lambda, mu) added to the W law for each quantity
QUANTITY_OFFSETS = {
    'W': (0, 0, 0, 0),
    'W_c': (1, -1, 0, 0),
    'V': (0, 0, -2, 0)
}


def predicted_exponents(quantity, p, n, m):
    """Exponents of r_perp^(2/p-1+M) r_par^(1/p-1/2-M) lambda^(N+M) mu^M, with quantity offsets"""
    base = (2 / p - 1 + m, 1 / p - 0.5 - m, n + m, m)
    return tuple(b + o for b, o in zip(base, QUANTITY_OFFSETS[quantity]))


def _periodic_derivative(values, half_width, order, axis):
    if order == 0:
        return values
    count = values.shape[axis]
    k = 2 * np.pi * np.fft.fftfreq(count, d=2 * half_width / count)
    shape = [1] * values.ndim
    shape[axis] = count
    multiplier = (1j * k.reshape(shape)) ** order
    return np.fft.ifft(multiplier * np.fft.fft(values, axis=axis), axis=axis).real


def _transverse_energy(components, half_width, order):
    """|grad^order g|^2 summed over tensor entries for 2D samples (components first)"""
    total = 0
    for g in components:
        for multi_index in itertools.product((0, 1), repeat=order):
            d = g
            for axis in multi_index:
                d = _periodic_derivative(d, half_width, 1, axis)
            total = total + d ** 2
    return total


def cell_norm(params, profiles, n_star, p, n=0, m=0, quantity='W'):
    """
    L^p norm over the torus of grad^n d_t^m of a jet quantity, from one jet cell

    The phases map the torus onto the phase cell measure-preservingly, so the
    norm is an integral over [-r_par, r_par] x [-r_perp, r_perp]^2 using the
    product structure of the jet.
    """
    r_perp, r_par = params.r_perp, params.r_par
    lam_m = n_star * params.lam_r_perp

    z = r_par * (2 * np.arange(CELL_SAMPLES_1D) / CELL_SAMPLES_1D - 1)
    y = r_perp * (2 * np.arange(CELL_SAMPLES_2D) / CELL_SAMPLES_2D - 1)
    y1, y2 = np.meshgrid(y, y, indexing='ij')

    f = profiles.psi(z / r_par) / np.sqrt(r_par)
    if quantity == 'W':
        g = np.array([profiles.phi(y1 / r_perp, y2 / r_perp) / r_perp])
        constant = 1.0
    elif quantity == 'W_c':
        f = _periodic_derivative(f, r_par, 1, 0)
        g = profiles.grad_Phi(y1 / r_perp, y2 / r_perp) / r_perp ** 2
        constant = r_perp ** 2
    elif quantity == 'V':
        g = np.array([profiles.Phi(y1 / r_perp, y2 / r_perp) / r_perp])
        constant = (n_star * params.lam) ** -2
    else:
        raise ValueError(f'unknown jet quantity \'{quantity}\'')

    h = 0
    for a in range(n + 1):
        F = _periodic_derivative(f, r_par, a + m, 0) ** 2
        G = _transverse_energy(g, r_perp, n - a)
        h = h + math.comb(n, a) * F[:, None, None] * G[None, :, :]

    h = h * (constant ** 2) * lam_m ** (2 * n) * (lam_m * params.mu) ** (2 * m)
    cell = (2 * r_par / CELL_SAMPLES_1D) * (2 * r_perp / CELL_SAMPLES_2D) ** 2
    return float((np.sum(h ** (p / 2)) * cell) ** (1 / p))


def scaling_probe(sweep, p, n=0, m=0, quantity='W', profiles=None, n_star=5, workers=1):
    """
    Fits the log-log slope of |grad^n d_t^m Q|_{C_t L^p} against the single varying parameter

    sweep is a list of at least 4 JetParameters that differ in exactly one of
    r_perp, r_par, lambda, mu. The time supremum is trivial because the jets
    are travelling waves.
    """
    if len(sweep) < 4:
        raise ValueError(f'degenerate sweep: {len(sweep)} parameter tuples (need at least 4)')
    if n > 2 or m > 2 or n < 0 or m < 0:
        raise ValueError(f'derivative orders n = {n}, m = {m} must lie in [0, 2]')
    if not p >= 1:
        raise ValueError(f'L^p norm requires p >= 1 (got {p})')

    values = np.array([[s.r_perp, s.r_par, s.lam, s.mu] for s in sweep])
    varying = [i for i in range(4) if np.ptp(values[:, i]) > 0]
    if len(varying) != 1:
        raise ValueError('degenerate sweep: exactly one of r_perp, r_par, lambda, mu must vary '
                         f'(varying: {[SWEEP_PARAMETERS[i] for i in varying]})')

    profiles = profiles or build_profiles()
    with ThreadPoolExecutor(max_workers=workers) as executor:
        norms = list(executor.map(lambda s: cell_norm(s, profiles, n_star, p, n, m, quantity), sweep))

    column = varying[0]
    x = np.log(values[:, column])
    y = np.log(norms)
    (slope, intercept), residuals, *_ = np.polyfit(x, y, 1, full=True)
    residual = float(np.sqrt(residuals[0] / len(x))) if len(residuals) else 0.0

    exponents = predicted_exponents(quantity, p, n, m)
    predicted_norms = np.prod(values ** np.array(exponents), axis=1)
    table = Table([values[:, 0], values[:, 1], values[:, 2], values[:, 3], norms, predicted_norms,
                   np.array(norms) / predicted_norms],
                  names=('r_perp', 'r_par', 'lambda', 'mu', 'measured', 'predicted', 'ratio'))

    return ScalingFit(quantity, SWEEP_PARAMETERS[column], p, n, m, float(slope), exponents[column],
                      float(intercept), residual, table)
