# This file is part of metab. metab is free software: you can
# redistribute it and/or modify it under the terms of the GNU General Public
# License as published by the Free Software Foundation, version 2.
#
# This program is distributed in the hope that it will be useful, but WITHOUT
# ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS
# FOR A PARTICULAR PURPOSE.  See the GNU General Public License for more
# details.
#
# You should have received a copy of the GNU General Public License
# along with this program; if not, write to the Free Software
# Foundation, Inc., 59 Temple Place, Suite 330, Boston, MA  02111-1307  USA
'''
Maximum entropy density for given bin probabilities and means

On a bounded bin [a, b) with mass q and mean y the entropy maximizing
density is q*lam*exp(lam*x)/(exp(lam*b) - exp(lam*a)), where lam maximizes
the concave dual

    J(lam) = y*lam - log((exp(lam*b) - exp(lam*a))/lam).

With c = (a+b)/2 and d = b-a the maximizer is lam = (2/d)*phi_inv(2(y-c)/d)
for phi(x) = coth(x) - 1/x. The unbounded top bin [t_1, inf) gets the
exponential tail lam = -1/(y - t_1).
'''

import json
import math
from collections import namedtuple
from logging import getLogger

import numpy as np
from scipy import special

from metab.tabio import EMPIRICAL, POPULATION

log = getLogger(__name__)

SMOOTHED = 'smoothed'
PROVENANCES = (EMPIRICAL, POPULATION, SMOOTHED)

#: below this |x| phi uses its two-term series
SERIES_SWITCH = 1e-4
#: below this |x| phi and phi' use the full Taylor polynomial
TAYLOR_SWITCH = 0.5
#: bins whose normalized mean offset exceeds this are rejected
BOUNDARY_TOL = 1e-12
PHI_INV_TOL = 1e-12
PHI_INV_MAXITER = 200


class PhiDomainError(ValueError):
    '''Raised by phi_inv for arguments outside (-1, 1)'''
    pass


class InfeasibleBinError(ValueError):
    '''
    Raised if a bin mean is not strictly inside its bin. *bin_index* is
    1-based, the top bin being 1.
    '''
    def __init__(self, message, bin_index=None):
        super(InfeasibleBinError, self).__init__(message)
        self.bin_index = bin_index


def _taylor_coefficients(n_terms):
    '''c_n with coth(x) - 1/x = sum_n c_n x^(2n-1)'''
    B = special.bernoulli(2 * n_terms)
    n = np.arange(1, n_terms + 1)
    return 2.0 ** (2 * n) * B[2 * n] / special.factorial(2 * n, exact=False)

_PHI_COEF = _taylor_coefficients(14)
_DPHI_COEF = _PHI_COEF * (2 * np.arange(1, 15) - 1)


def _horner(coef, z):
    s = 0.0
    for c in coef[::-1]:
        s = s * z + c
    return s


def _phi1(x):
    ax = abs(x)
    if ax < SERIES_SWITCH:
        return x / 3.0 - x ** 3 / 45.0
    if ax < TAYLOR_SWITCH:
        return x * _horner(_PHI_COEF, x * x)
    return 1.0 / math.tanh(x) - 1.0 / x


def _dphi1(x):
    ax = abs(x)
    if ax < TAYLOR_SWITCH:
        return _horner(_DPHI_COEF, x * x)
    # 1/sinh(x)^2 without overflow
    e = math.exp(-2.0 * ax)
    return 1.0 / (ax * ax) - 4.0 * e / math.expm1(-2.0 * ax) ** 2


def phi(x):
    '''
    coth(x) - 1/x, extended to an odd function with phi(0) = 0.
    Accepts scalars and arrays.
    '''
    if np.ndim(x) == 0:
        return _phi1(float(x))
    x = np.asarray(x, dtype=float)
    return np.array([_phi1(v) for v in x.ravel()]).reshape(x.shape)


def phi_prime(x):
    '''Derivative of phi; even, 1/3 at the origin'''
    if np.ndim(x) == 0:
        return _dphi1(float(x))
    x = np.asarray(x, dtype=float)
    return np.array([_dphi1(v) for v in x.ravel()]).reshape(x.shape)


def phi_inv(u, tol=PHI_INV_TOL, maxiter=PHI_INV_MAXITER):
    '''
    Inverse of phi on (-1, 1).

    Brackets the root of phi(x) = |u| in [0, x_hi], doubling x_hi until
    phi(x_hi) > |u|, and polishes with Newton steps that fall back to
    bisection whenever they leave the bracket. Converged when the relative
    residual is at most *tol*.
    '''
    u = float(u)
    if not abs(u) < 1.0:
        raise PhiDomainError("phi_inv is undefined at {!r}".format(u))
    if u == 0.0:
        return 0.0
    target = abs(u)
    lo, hi = 0.0, 1.0
    while _phi1(hi) <= target:
        lo, hi = hi, 2.0 * hi
    if target > 0.5:
        x = 1.0 / (1.0 - target)
    else:
        x = 3.0 * target
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for i in range(maxiter):
        r = _phi1(x) - target
        if abs(r) <= tol * target:
            break
        if r > 0:
            hi = x
        else:
            lo = x
        x_new = x - r / _dphi1(x)
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        x = x_new
    else:
        log.warning("phi_inv({!r}) stopped after {} iterations, residual "
                    "{:.3g}".format(u, maxiter, _phi1(x) - target))
    return math.copysign(x, u)


def _log_sinhc(x):
    '''log(sinh(x)/x), even and finite for all x'''
    ax = abs(x)
    if ax < 1e-8:
        return ax * ax / 6.0
    if ax < 20.0:
        return math.log(math.sinh(ax) / ax)
    return ax - math.log(2.0 * ax) + math.log1p(-math.exp(-2.0 * ax))


def dual_value(lam, lower, upper, y):
    '''
    The dual objective J(lam) of the bin [lower, upper) with mean y.
    For the unbounded bin it is finite for lam < 0 only.
    '''
    if math.isinf(upper):
        if lam >= 0:
            return -math.inf
        return lam * (y - lower) + math.log(-lam)
    d = upper - lower
    c = 0.5 * (lower + upper)
    return (y - c) * lam - math.log(d) - _log_sinhc(0.5 * lam * d)


def solve_lambda(lower, upper, y, bin_index=None):
    '''
    Maximize the dual of the bin [lower, upper) with mean y.

    Works on the rescaled bin s*(lower, y, upper) and maps back with
    lam = s*lam_s and J = J_s + log(s).

    Returns:
        (lam, J) at the maximum

    Raises:
        InfeasibleBinError: y not strictly inside the bin
    '''
    lower, upper, y = float(lower), float(upper), float(y)
    if not (lower < y and y < upper) or math.isnan(y):
        raise InfeasibleBinError(
            "mean {!r} not strictly inside bin {} [{!r}, {!r})".format(
                y, bin_index, lower, upper), bin_index=bin_index)

    if math.isinf(upper):
        s = 1.0 / abs(y) if y != 0 else 1.0 / (y - lower)
        a_s, y_s = s * lower, s * y
        lam_s = -1.0 / (y_s - a_s)
        j_s = dual_value(lam_s, a_s, math.inf, y_s)
        return s * lam_s, j_s + math.log(s)

    s = 1.0 / max(abs(lower), abs(upper), abs(y))
    a_s, b_s, y_s = s * lower, s * upper, s * y
    c, d = 0.5 * (a_s + b_s), b_s - a_s
    u = 2.0 * (y_s - c) / d
    if abs(u) > 1.0 - BOUNDARY_TOL:
        raise InfeasibleBinError(
            "mean {!r} too close to the edge of bin {} [{!r}, {!r})".format(
                y, bin_index, lower, upper), bin_index=bin_index)
    lam_s = 2.0 * phi_inv(u) / d
    j_s = dual_value(lam_s, a_s, b_s, y_s)
    return s * lam_s, j_s + math.log(s)


MEBinTuple = namedtuple('MEBinTuple',
                        ['lower', 'upper', 'q', 'y', 'lam', 'j_value'])


class MEBin(MEBinTuple):
    '''
    One bin [lower, upper) of a fitted density with its mass q, mean y and
    exponential rate lam (0 is the uniform branch). Exponentials are taken
    relative to the bin edge the density decays towards, so nothing
    overflows at income-scale magnitudes.
    '''
    __slots__ = ()

    @property
    def is_top(self):
        return math.isinf(self.upper)

    @property
    def width(self):
        return self.upper - self.lower

    def _inside(self, x):
        '''Density at x, assuming lower <= x <= upper'''
        q, lam, a, b = self.q, self.lam, self.lower, self.upper
        if self.is_top:
            return -q * lam * math.exp(lam * (x - a))
        if lam == 0.0:
            return q / (b - a)
        if lam < 0.0:
            return q * lam * math.exp(lam * (x - a)) / math.expm1(lam * (b - a))
        return q * lam * math.exp(lam * (x - b)) / -math.expm1(-lam * (b - a))

    def pdf(self, x):
        if self.q == 0.0 or not self.lower <= x < self.upper:
            return 0.0
        return self._inside(x)

    def density_at_lower(self):
        '''Right limit of the density at the lower edge'''
        return 0.0 if self.q == 0.0 else self._inside(self.lower)

    def density_at_upper(self):
        '''Left limit of the density at the upper edge (0 for the top bin)'''
        if self.q == 0.0 or self.is_top:
            return 0.0
        return self._inside(self.upper)

    def mass_above(self, x):
        '''Mass of the bin on [x, upper)'''
        q, lam, a, b = self.q, self.lam, self.lower, self.upper
        if q == 0.0 or x >= b:
            return 0.0
        if x <= a:
            return q
        if self.is_top:
            return q * math.exp(lam * (x - a))
        if lam == 0.0:
            return q * (b - x) / (b - a)
        if lam < 0.0:
            return (q * math.exp(lam * (x - a)) * math.expm1(lam * (b - x)) /
                    math.expm1(lam * (b - a)))
        return q * math.expm1(-lam * (b - x)) / math.expm1(-lam * (b - a))

    def mass_below(self, x):
        '''Mass of the bin on [lower, x)'''
        q, lam, a, b = self.q, self.lam, self.lower, self.upper
        if q == 0.0 or x <= a:
            return 0.0
        if x >= b:
            return q
        if self.is_top:
            return -q * math.expm1(lam * (x - a))
        if lam == 0.0:
            return q * (x - a) / (b - a)
        if lam < 0.0:
            return q * math.expm1(lam * (x - a)) / math.expm1(lam * (b - a))
        return (q * math.exp(lam * (x - b)) * math.expm1(-lam * (x - a)) /
                math.expm1(-lam * (b - a)))

    def moment_above(self, x):
        '''Integral of t*f(t) over [x, upper)'''
        mass = self.mass_above(x)
        if mass == 0.0:
            return 0.0
        x = max(x, self.lower)
        if self.is_top:
            return mass * (x - 1.0 / self.lam)
        # mean of the tilted density restricted to [x, upper)
        half = 0.5 * (self.upper - x)
        return mass * (x + half + half * _phi1(self.lam * half))

    def variance(self):
        '''Variance of the bin's conditional distribution'''
        if self.is_top:
            return 1.0 / (self.lam * self.lam)
        half = 0.5 * self.width
        return half * half * _dphi1(self.lam * half)

    def locate(self, w):
        '''The point x of the bin with mass_below(x) = w*q, w in [0, 1]'''
        lam, a, b = self.lam, self.lower, self.upper
        if w <= 0.0:
            return a
        if w >= 1.0:
            return b
        if self.is_top:
            return a + math.log1p(-w) / lam
        if lam == 0.0:
            return a + w * (b - a)
        if lam < 0.0:
            return a + math.log1p(w * math.expm1(lam * (b - a))) / lam
        return b + math.log1p((1.0 - w) * math.expm1(-lam * (b - a))) / lam


class MEDensity(object):
    '''
    Piecewise exponential density: MEBins ordered top bin first and
    covering [lower_bound, inf) without gaps. Treated as immutable.
    '''

    def __init__(self, bins, j_star, provenance):
        self.bins = tuple(bins)
        self.j_star = float(j_star)
        self.provenance = provenance

    @property
    def K(self):
        return len(self.bins)

    @property
    def lower_bound(self):
        return self.bins[-1].lower

    @property
    def thresholds(self):
        return np.array([b.lower for b in self.bins])

    @property
    def total_mass(self):
        return math.fsum(b.q for b in self.bins)

    def find_bin(self, x):
        '''0-based index of the bin containing x, None below the support'''
        for k, b in enumerate(self.bins):
            if x >= b.lower:
                return k
        return None

    def pdf(self, x):
        '''Density at a scalar or at every element of an array'''
        if np.ndim(x) == 0:
            return density_eval(self, float(x))
        x = np.asarray(x, dtype=float)
        return np.array([density_eval(self, v) for v in x.ravel()]).reshape(
            x.shape)

    def jumps(self):
        '''f(t_k+) - f(t_k-) at the interior thresholds t_1 ... t_{K-1}'''
        return np.array([self.bins[k].density_at_lower() -
                         self.bins[k + 1].density_at_upper()
                         for k in range(self.K - 1)])

    def sup_density(self):
        '''Largest value the density takes (attained at a bin edge)'''
        return max(max(b.density_at_lower(), b.density_at_upper())
                   for b in self.bins)

    def __repr__(self):
        return "MEDensity(K={}, j_star={:.10g}, provenance={!r})".format(
            self.K, self.j_star, self.provenance)


def fit_me_density(moments, provenance=None, verbose=True):
    '''
    Fit the maximum entropy density to BinMoments.

    Empty bins get zero density and contribute nothing to J*. Inner loops
    of other solvers pass verbose=False to keep the summary at DEBUG.

    Raises:
        InfeasibleBinError: some mean is not strictly inside its bin
    '''
    bins = []
    j_terms = []
    for k in range(moments.K):
        lower, upper = moments.bounds(k)
        q = float(moments.q[k])
        if q < 0:
            raise InfeasibleBinError("negative mass in bin {}".format(k + 1),
                                     bin_index=k + 1)
        if q == 0.0:
            bins.append(MEBin(lower, upper, 0.0, math.nan, 0.0, math.nan))
            continue
        y = float(moments.y[k])
        lam, j = solve_lambda(lower, upper, y, bin_index=k + 1)
        bins.append(MEBin(lower, upper, q, y, lam, j))
        j_terms.append(q * (j + math.log(q)))
    density = MEDensity(bins, math.fsum(j_terms),
                        provenance or moments.provenance)
    message = "Fitted ME density with K={} bins, J*={:.12g}".format(
        density.K, density.j_star)
    if verbose:
        log.devinfo(message)
        log.debug("Rates: {}".format([b.lam for b in bins]))
    else:
        log.debug(message)
    return density


def density_eval(d, y):
    '''Density of *d* at y; zero below the support'''
    k = d.find_bin(y)
    if k is None:
        return 0.0
    return d.bins[k].pdf(y)


def _num(v):
    return None if v is None or not math.isfinite(v) else v


def density_to_dict(d):
    return {
        'bins': [{'lower': b.lower, 'upper': _num(b.upper), 'q': b.q,
                  'y': _num(b.y), 'lambda': b.lam} for b in d.bins],
        'lower_bound': d.lower_bound,
        'j_star': d.j_star,
        'provenance': d.provenance,
    }


def density_to_json(d):
    '''JSON of an MEDensity; upper = null is the unbounded top bin'''
    return json.dumps(density_to_dict(d), sort_keys=True)


def density_from_dict(data):
    if data.get('provenance') not in PROVENANCES:
        raise ValueError("unknown provenance {!r}".format(
            data.get('provenance')))
    bins = []
    for b in data['bins']:
        upper = math.inf if b['upper'] is None else b['upper']
        y = math.nan if b['y'] is None else b['y']
        if b['q'] == 0:
            j = math.nan
        else:
            j = dual_value(b['lambda'], b['lower'], upper, y)
        bins.append(MEBin(b['lower'], upper, b['q'], y, b['lambda'], j))
    return MEDensity(bins, data['j_star'], data['provenance'])


def density_from_json(text):
    return density_from_dict(json.loads(text))
