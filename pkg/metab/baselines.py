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
Comparison estimators and analytic reference distributions

 * BKKernelEstimate: binned kernel density, a sum of normal CDF
   differences weighted by the bin masses of the bounded bins
 * ParetoInterp: local Pareto interpolation of top shares at the
   nearest tabulated fractile
 * DoublePareto: the double Pareto distribution with its closed-form
   CDF, Lorenz curve and partial expectations
'''

import math
from collections import namedtuple
from logging import getLogger

import numpy as np
from scipy import optimize, special, stats

from metab.dist import CoverageError

log = getLogger(__name__)


def _big_g(z):
    '''Antiderivative of the standard normal CDF, vanishing at -inf'''
    return z * special.ndtr(z) + stats.norm.pdf(z)


def _big_h(z):
    '''Antiderivative of z*Phi(z), vanishing at -inf'''
    return 0.5 * ((z * z - 1.0) * special.ndtr(z) + z * stats.norm.pdf(z))


def grouped_sigma(moments):
    '''
    Standard deviation from grouped data: between-bin spread of the means
    plus a uniform spread d**2/12 within every bounded bin and an
    exponential spread (y_1 - t_1)**2 within the top bin.
    '''
    q = np.asarray(moments.q, dtype=float)
    mask = q > 0
    total = float(np.sum(q))
    m = float(np.sum(q[mask] * np.asarray(moments.y)[mask])) / total
    acc = []
    for k in range(moments.K):
        if q[k] <= 0:
            continue
        lower, upper = moments.bounds(k)
        y = float(moments.y[k])
        within = (y - lower) ** 2 if k == 0 else (upper - lower) ** 2 / 12.0
        acc.append(q[k] * (within + (y - m) ** 2))
    return math.sqrt(math.fsum(acc) / total)


def bk_bandwidth(moments, c, n, sigma=None):
    '''
    Rule-of-thumb bandwidth c*sigma*n**(-1/5). *sigma* defaults to the
    grouped standard deviation of *moments*.
    '''
    if not c > 0:
        raise ValueError("bandwidth constant must be positive, got {!r}".
                         format(c))
    if sigma is None:
        sigma = grouped_sigma(moments)
    if not sigma > 0:
        raise ValueError("degenerate standard deviation {!r}".format(sigma))
    return c * sigma * float(n) ** -0.2


BKTuple = namedtuple('BKTuple', ['moments', 'h'])


class BKKernelEstimate(BKTuple):
    '''
    Binned kernel estimate with bandwidth h over the bounded bins of
    *moments*. The top bin carries no mass.
    '''
    __slots__ = ()

    def __new__(cls, moments, h):
        if not h > 0:
            raise ValueError("bandwidth must be positive, got {!r}".format(h))
        return super(BKKernelEstimate, cls).__new__(cls, moments, float(h))

    def _bins(self):
        '''(lower, upper, q) arrays of the nonempty bounded bins'''
        m = self.moments
        lower = np.asarray(m.thresholds[1:], dtype=float)
        upper = np.asarray(m.thresholds[:-1], dtype=float)
        q = np.asarray(m.q[1:], dtype=float)
        keep = q > 0
        return lower[keep], upper[keep], q[keep]

    @property
    def total_mass(self):
        return float(np.sum(self._bins()[2]))

    def pdf(self, y):
        '''Density at a scalar or an array of points'''
        a, b, q = self._bins()
        y = np.asarray(y, dtype=float)
        z = y[..., None]
        h = self.h
        terms = (q / (b - a)) * (special.ndtr((b - z) / h) -
                                 special.ndtr((a - z) / h))
        out = np.sum(terms, axis=-1)
        return float(out) if out.ndim == 0 else out

    def ccdf(self, y):
        a, b, q = self._bins()
        h = self.h
        return float(np.sum((q / (b - a)) * h *
                            (_big_g((b - y) / h) - _big_g((a - y) / h))))

    def cdf(self, y):
        return self.total_mass - self.ccdf(y)

    def tail_expectation(self, y):
        '''Integral of x*f(x) over [y, inf)'''
        a, b, q = self._bins()
        h = self.h
        ua, ub = (a - y) / h, (b - y) / h
        inner = (b * _big_g(ub) - h * _big_h(ub)) - \
            (a * _big_g(ua) - h * _big_h(ua))
        return float(np.sum((q / (b - a)) * h * inner))

    def mean_mass(self):
        '''Integral of x*f(x) over the real line'''
        a, b, q = self._bins()
        return float(np.sum(q * 0.5 * (a + b)))

    def _bracket(self):
        a, b, _ = self._bins()
        return float(np.min(a)) - 40.0 * self.h, float(np.max(b)) + 40.0 * self.h

    def quantile(self, tau):
        total = self.total_mass
        if not 0.0 < tau < total:
            raise CoverageError("probability {!r} outside (0, {!r})".format(
                tau, total))
        lo, hi = self._bracket()
        return optimize.brentq(lambda y: self.cdf(y) - tau, lo, hi,
                               xtol=1e-14 * max(abs(lo), abs(hi), 1.0),
                               rtol=4 * np.finfo(float).eps)

    def top_share(self, p):
        '''Share of the kernel mass' income held by its top p fractile'''
        if not 0.0 < p <= 1.0:
            raise CoverageError("fractile {!r} not in (0, 1]".format(p))
        if p == 1.0:
            return 1.0
        y = self.quantile((1.0 - p) * self.total_mass)
        return self.tail_expectation(y) / self.mean_mass()


def bk_density(moments, h, y):
    '''Binned kernel density with bandwidth h at y'''
    return BKKernelEstimate(moments, h).pdf(y)


ParetoInterpTuple = namedtuple('ParetoInterpTuple',
                               ['p', 't', 's', 'b', 'alpha', 'population',
                                'total', 'coverage'])


class ParetoInterp(ParetoInterpTuple):
    '''
    Local Pareto coefficients of the usable rows of a table: top
    fractiles p_k, thresholds t_k, top averages s_k, inverted
    coefficients b_k = s_k/t_k > 1 and exponents alpha_k = b_k/(b_k - 1).
    *population* and *total* are the count and income shares refer to.
    '''
    __slots__ = ()

    @classmethod
    def from_summary(cls, summary, totals=None):
        '''
        Build from a TabulatedSummary; with ExternalTotals the fractiles
        and shares are taken relative to the external population and
        income.
        '''
        population = float(totals.population) if totals else float(summary.n)
        total = float(totals.total) if totals else float(summary.cum_sums[-1])
        coverage = float(summary.cum_counts[-1]) / population
        rows = []
        for t, n_k, s_k in zip(summary.thresholds, summary.cum_counts,
                               summary.cum_sums):
            if not (n_k > 0 and t > 0):
                continue
            avg = s_k / n_k
            b = avg / t
            if b <= 1.0:
                continue
            rows.append((n_k / population, t, avg, b, b / (b - 1.0)))
        if not rows:
            raise ValueError("no usable row for Pareto interpolation")
        p, t, s, b, alpha = (np.array(c) for c in zip(*rows))
        log.debug("Pareto coefficients: {}".format(b))
        return cls(p, t, s, b, alpha, population, total, coverage)

    def nearest(self, p):
        '''
        Index of the tabulated fractile nearest to p and whether the
        choice was a tie (broken towards the larger fractile).
        '''
        dist = np.abs(self.p - p)
        best = float(np.min(dist))
        candidates = np.flatnonzero(np.isclose(dist, best, rtol=1e-12,
                                               atol=1e-15))
        k = int(candidates[np.argmax(self.p[candidates])])
        tie = len(candidates) > 1
        if tie:
            log.warning("Pareto interpolation: fractile {} equidistant to "
                        "{}; using {}".format(p, list(self.p[candidates]),
                                              self.p[k]))
        return k, tie

    def _check(self, p):
        if not 0.0 < p <= 1.0:
            raise CoverageError("fractile {!r} not in (0, 1]".format(p))
        if p > self.coverage * (1.0 + 1e-12):
            raise CoverageError("fractile {!r} beyond the tabulated coverage "
                                "{!r}".format(p, self.coverage))

    def threshold_at(self, p):
        '''Threshold t(p) above which the top p fractile lies'''
        self._check(p)
        k, _ = self.nearest(p)
        return self.t[k] * (self.p[k] / p) ** (1.0 / self.alpha[k])

    def top_income(self, p):
        '''S(p), income of the top p fractile, and the tie flag'''
        self._check(p)
        k, tie = self.nearest(p)
        a = self.alpha[k]
        per_capita = self.s[k] * self.p[k] ** (1.0 / a) * p ** (1.0 - 1.0 / a)
        return self.population * per_capita, tie


def piketty_top_share(interp, p):
    '''Pareto interpolated income share S(p)/S(1) of the top p fractile'''
    income, _ = interp.top_income(p)
    return income / interp.total


DoubleParetoParams = namedtuple('DoubleParetoParams', ['alpha', 'beta', 'M'])


def _check_params(params):
    alpha, beta, M = params
    if not alpha > 1:
        raise ValueError("double Pareto needs alpha > 1, got {!r}".format(alpha))
    if not (beta > 0 and M > 0):
        raise ValueError("double Pareto needs beta, M > 0, got {!r}".format(
            params))


def unit_mean_scale(alpha, beta):
    '''The scale M giving the double Pareto distribution mean 1'''
    return (beta + 1.0) * (alpha - 1.0) / (alpha * beta)


def dpareto_mean(params):
    _check_params(params)
    alpha, beta, M = params
    return M * alpha * beta / ((alpha - 1.0) * (beta + 1.0))


def dpareto_pdf(params, y):
    _check_params(params)
    alpha, beta, M = params
    y = np.asarray(y, dtype=float)
    r = np.maximum(y, 0.0) / M
    c = alpha * beta / ((alpha + beta) * M)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.where(r <= 1.0, c * r ** (beta - 1.0), c * r ** (-alpha - 1.0))
    out = np.where(y > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def dpareto_cdf(params, y):
    _check_params(params)
    alpha, beta, M = params
    y = np.asarray(y, dtype=float)
    r = np.maximum(y, 0.0) / M
    with np.errstate(divide='ignore'):
        out = np.where(r <= 1.0, alpha / (alpha + beta) * r ** beta,
                       1.0 - beta / (alpha + beta) * r ** -alpha)
    return float(out) if out.ndim == 0 else out


def dpareto_sf(params, y):
    _check_params(params)
    alpha, beta, M = params
    y = np.asarray(y, dtype=float)
    r = np.maximum(y, 0.0) / M
    with np.errstate(divide='ignore'):
        out = np.where(r <= 1.0, 1.0 - alpha / (alpha + beta) * r ** beta,
                       beta / (alpha + beta) * r ** -alpha)
    return float(out) if out.ndim == 0 else out


def dpareto_ppf(params, u):
    _check_params(params)
    alpha, beta, M = params
    u = np.asarray(u, dtype=float)
    split = alpha / (alpha + beta)
    with np.errstate(divide='ignore'):
        out = np.where(u <= split,
                       M * (u / split) ** (1.0 / beta),
                       M * ((1.0 - u) * (alpha + beta) / beta) ** (-1.0 / alpha))
    return float(out) if out.ndim == 0 else out


def dpareto_lorenz(params, x):
    '''Lorenz curve, split at x = alpha/(alpha + beta)'''
    _check_params(params)
    alpha, beta, _ = params
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    split = alpha / (alpha + beta)
    low = (alpha - 1.0) / (alpha + beta) * (x / split) ** (1.0 + 1.0 / beta)
    high = 1.0 - (beta + 1.0) / (alpha + beta) * \
        ((1.0 - x) * (alpha + beta) / beta) ** (1.0 - 1.0 / alpha)
    out = np.where(x <= split, low, high)
    return float(out) if out.ndim == 0 else out


def dpareto_top_share(params, p):
    '''Income share of the top p fractile, 1 - L(1 - p)'''
    _check_params(params)
    alpha, beta, _ = params
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    split = beta / (alpha + beta)
    high = (beta + 1.0) / (alpha + beta) * \
        (p / split) ** (1.0 - 1.0 / alpha)
    out = np.where(p <= split, high, 1.0 - dpareto_lorenz(params, 1.0 - p))
    return float(out) if out.ndim == 0 else out


def dpareto_sample(params, u1, u2):
    '''
    M * u1**(-1/alpha) * u2**(1/beta) for uniforms in the open unit
    interval; works elementwise on arrays.
    '''
    _check_params(params)
    alpha, beta, M = params
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if np.any((u1 <= 0) | (u1 >= 1) | (u2 <= 0) | (u2 >= 1)):
        raise ValueError("uniforms must lie in the open interval (0, 1)")
    out = M * u1 ** (-1.0 / alpha) * u2 ** (1.0 / beta)
    return float(out) if out.ndim == 0 else out


class DoublePareto(object):
    '''
    Frozen double Pareto distribution in the style of scipy.stats, usable
    by population_moments and the simulation models.
    '''

    def __init__(self, alpha, beta, M=None):
        if M is None:
            M = unit_mean_scale(alpha, beta)
        self.params = DoubleParetoParams(float(alpha), float(beta), float(M))
        _check_params(self.params)

    def __repr__(self):
        return "DoublePareto(alpha={}, beta={}, M={})".format(*self.params)

    def pdf(self, y):
        return dpareto_pdf(self.params, y)

    def cdf(self, y):
        return dpareto_cdf(self.params, y)

    def sf(self, y):
        return dpareto_sf(self.params, y)

    def ppf(self, u):
        return dpareto_ppf(self.params, u)

    def isf(self, p):
        '''The y with sf(y) = p, accurate for small p'''
        alpha, beta, M = self.params
        p = np.asarray(p, dtype=float)
        split = beta / (alpha + beta)
        with np.errstate(divide='ignore'):
            out = np.where(p <= split,
                           M * (p / split) ** (-1.0 / alpha),
                           M * ((1.0 - p) * (alpha + beta) / alpha) **
                           (1.0 / beta))
        return float(out) if out.ndim == 0 else out

    def mean(self):
        return dpareto_mean(self.params)

    def _lower_moment(self, y):
        '''Integral of x*f(x) over [0, y] for 0 <= y <= M'''
        alpha, beta, M = self.params
        return alpha * beta * M / ((alpha + beta) * (beta + 1.0)) * \
            (y / M) ** (beta + 1.0)

    def _upper_moment(self, y):
        '''Integral of x*f(x) over [y, inf) for y >= M'''
        alpha, beta, M = self.params
        if math.isinf(y):
            return 0.0
        return alpha * beta * M / ((alpha + beta) * (alpha - 1.0)) * \
            (y / M) ** (1.0 - alpha)

    def partial_expectation(self, a, b):
        '''Integral of x*f(x) over [a, b)'''
        M = self.params.M
        a = max(float(a), 0.0)
        b = float(b)
        if b <= a:
            return 0.0
        if b <= M:
            return self._lower_moment(b) - self._lower_moment(a)
        if a >= M:
            return self._upper_moment(a) - self._upper_moment(b)
        return (self._lower_moment(M) - self._lower_moment(a) +
                self._upper_moment(M) - self._upper_moment(b))

    def top_share(self, p):
        return dpareto_top_share(self.params, p)

    def rvs(self, size, random_state):
        '''Draws from two open-interval uniform streams of a Generator'''
        u1 = open_uniform(random_state, size)
        u2 = open_uniform(random_state, size)
        return dpareto_sample(self.params, u1, u2)


def open_uniform(rng, size):
    '''Uniforms on the open interval (0, 1) with 53 random bits'''
    return (rng.integers(0, 2 ** 53, size=size, dtype=np.int64) + 0.5) / 2.0 ** 53
