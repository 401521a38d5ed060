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
Distribution functionals of fitted densities

All functions take an MEDensity and evaluate the closed forms of its bins.
Probabilities are relative to the fit's normalization, so a table that
covers only part of the population has total mass below one; top shares
are then taken against the covered mass unless ExternalTotals are given.
'''

import math
from collections import namedtuple
from logging import getLogger

import numpy as np
import pandas as pd

log = getLogger(__name__)

GAUSS_NODES = 64
#: geometric pieces the unbounded top segment is split into for gini
TOP_PIECES = 24


class CoverageError(ValueError):
    '''Raised for a probability outside the mass covered by the fit'''
    pass


#: A point (x, L(x)) of the Lorenz curve
LorenzPoint = namedtuple('LorenzPoint', ['x', 'L'])

#: Population and total income the shares are relative to; *n* is the
#: count the fitted masses are normalized by
ExternalTotals = namedtuple('ExternalTotals', ['population', 'total', 'n'])


def ccdf(d, y):
    '''Mass of the fit above y'''
    return math.fsum(b.mass_above(y) for b in d.bins)


def cdf(d, y):
    '''Mass of the fit below y'''
    return math.fsum(b.mass_below(y) for b in d.bins)


def tail_expectation(d, y):
    '''Integral of x*f(x) over [y, inf)'''
    return math.fsum(b.moment_above(y) for b in d.bins)


def mean(d):
    '''Mean of the normalized fit'''
    return tail_expectation(d, d.lower_bound) / d.total_mass


def variance(d):
    '''Variance of the normalized fit'''
    total = d.total_mass
    second = math.fsum(b.q * (b.variance() + b.y * b.y)
                       for b in d.bins if b.q > 0) / total
    m = mean(d)
    return max(second - m * m, 0.0)


def quantile(d, tau):
    '''
    The smallest y with cdf(y) >= tau, found bin by bin from the bottom and
    inverted within the bin in closed form.

    Raises:
        CoverageError: tau not in (0, total mass)
    '''
    total = d.total_mass
    if not 0.0 < tau < total:
        raise CoverageError("probability {!r} outside (0, {!r})".format(
            tau, total))
    cum = 0.0
    for b in reversed(d.bins):
        if b.q == 0.0:
            continue
        if cum + b.q >= tau or b.is_top:
            return b.locate(min((tau - cum) / b.q, 1.0))
        cum += b.q
    return d.bins[0].lower


def _top_threshold(d, mass):
    '''The y above which the fit holds *mass*'''
    total = d.total_mass
    if mass >= total:
        return d.lower_bound
    return quantile(d, total - mass)


def top_share(d, p, totals=None):
    '''
    Income share of the top p fractile.

    Without *totals* p is a fraction of the covered mass and the share is
    relative to the fitted total. With ExternalTotals p is a fraction of
    the external population and the share is relative to the external
    total income.
    '''
    if not 0.0 < p <= 1.0:
        raise CoverageError("fractile {!r} not in (0, 1]".format(p))
    if totals is None:
        mass = p * d.total_mass
        if p == 1.0:
            return 1.0
        y = _top_threshold(d, mass)
        return tail_expectation(d, y) / tail_expectation(d, d.lower_bound)
    mass = p * totals.population / totals.n
    if mass > d.total_mass * (1.0 + 1e-12):
        raise CoverageError("top {!r} of the population exceeds the "
                            "tabulated mass".format(p))
    y = _top_threshold(d, mass)
    return tail_expectation(d, y) * totals.n / totals.total


def lorenz_curve(d, grid, totals=None):
    '''LorenzPoints L(x) = 1 - top_share(1 - x) on the fractile grid'''
    points = []
    for x in grid:
        x = float(x)
        if not 0.0 <= x <= 1.0:
            raise CoverageError("fractile {!r} not in [0, 1]".format(x))
        if x == 0.0:
            points.append(LorenzPoint(0.0, 0.0))
        elif x == 1.0 and totals is None:
            points.append(LorenzPoint(1.0, 1.0))
        else:
            points.append(LorenzPoint(x, 1.0 - top_share(d, 1.0 - x, totals)))
    return points


def _lorenz_value(d, x, m_total):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return 1.0 - tail_expectation(d, quantile(d, 1.0 - x)) / m_total


def gini(d):
    '''
    Gini coefficient 1 - 2*int L(x) dx, with Gauss-Legendre quadrature on
    each fractile segment of a bin. The top segment is split
    geometrically towards x = 1.
    '''
    if abs(d.total_mass - 1.0) > 1e-9:
        raise CoverageError("gini needs a fit of total mass 1, got {!r}".
                            format(d.total_mass))
    m_total = tail_expectation(d, d.lower_bound)
    if not m_total > 0:
        raise ValueError("gini needs a positive mean")
    edges = sorted(set([0.0, 1.0] + [cdf(d, b.lower) for b in d.bins]))
    edges = [e for e in edges if 0.0 <= e <= 1.0]
    top_start = cdf(d, d.bins[0].lower)
    if d.bins[0].q > 0 and top_start < 1.0:
        edges = [e for e in edges if e <= top_start]
        gap = 1.0 - top_start
        edges += [1.0 - gap * 0.5 ** j for j in range(1, TOP_PIECES)] + [1.0]
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_NODES)
    area = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        half = 0.5 * (hi - lo)
        xs = lo + half * (nodes + 1.0)
        area.append(half * math.fsum(
            w * _lorenz_value(d, x, m_total) for x, w in zip(xs, weights)))
    return 1.0 - 2.0 * math.fsum(area)


def pdf_grid(d, ys):
    '''DataFrame with columns y, pdf, cdf'''
    ys = np.asarray(ys, dtype=float)
    return pd.DataFrame({'y': ys,
                         'pdf': [d.pdf(y) for y in ys],
                         'cdf': [cdf(d, y) for y in ys]},
                        columns=['y', 'pdf', 'cdf'])


def log_pdf_grid(d, log_ys):
    '''Density of log income f(e^x)e^x at x = log_ys'''
    xs = np.asarray(log_ys, dtype=float)
    ys = np.exp(xs)
    return pd.DataFrame({'log_y': xs,
                         'pdf': [d.pdf(y) * y for y in ys]},
                        columns=['log_y', 'pdf'])


def default_grid(d, points=200):
    '''Evenly spaced values between the 0.1% and 99.9% quantiles'''
    total = d.total_mass
    lo = quantile(d, 0.001 * total)
    hi = quantile(d, 0.999 * total)
    return np.linspace(lo, hi, int(points))


def shares_frame(d, fractiles, totals=None):
    '''DataFrame with columns p, top_share'''
    return pd.DataFrame({'p': [float(p) for p in fractiles],
                         'top_share': [top_share(d, float(p), totals)
                                       for p in fractiles]},
                        columns=['p', 'top_share'])


def lorenz_frame(d, grid, totals=None):
    '''DataFrame with columns x, L'''
    points = lorenz_curve(d, grid, totals)
    return pd.DataFrame(points, columns=list(LorenzPoint._fields))
