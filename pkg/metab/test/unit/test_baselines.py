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


import math
import unittest

import numpy as np
from scipy import integrate, stats

from metab.dist import CoverageError, ExternalTotals, top_share
from metab.mecore import fit_me_density
from metab.tabio import BinMoments, make_summary, to_bin_moments
from metab.baselines import (grouped_sigma, bk_bandwidth, BKKernelEstimate,
                             bk_density, ParetoInterp, piketty_top_share,
                             DoubleParetoParams, DoublePareto,
                             unit_mean_scale, dpareto_cdf, dpareto_lorenz,
                             dpareto_top_share, dpareto_sample, open_uniform)
from metab.simlab import rng_for


def pareto_summary(alpha=2.0, n=1e6):
    '''Exact table of a Pareto(alpha) population with scale 1'''
    t = np.array([100.0, 30.0, 10.0, 3.0, 1.0])
    counts = n * t ** -alpha
    sums = n * alpha / (alpha - 1.0) * t ** (1.0 - alpha)
    return make_summary(t, counts, sums, n)


class TestBinnedKernel(unittest.TestCase):
    '''Binned kernel estimates'''

    def setUp(self):
        self.moments = BinMoments(np.array([10.0, 4.0, 1.0, 0.0]),
                                  np.array([0.1, 0.3, 0.4, 0.2]),
                                  np.array([14.0, 6.0, 2.0, 0.6]),
                                  'empirical')
        self.est = BKKernelEstimate(self.moments, 0.7)

    def testSingleBin(self):
        m = BinMoments(np.array([1.0, 0.0]), np.array([0.0, 1.0]),
                       np.array([np.nan, 0.5]), 'empirical')
        self.assertAlmostEqual(bk_density(m, 1.0, 0.5), 0.382925, places=6)

    def testMass(self):
        '''The top bin is left out'''
        mass = integrate.quad(self.est.pdf, -20.0, 30.0, epsabs=1e-12,
                              limit=200)[0]
        self.assertAlmostEqual(mass, 0.9, delta=1e-8)
        self.assertAlmostEqual(self.est.total_mass, 0.9, places=15)

    def testClosedForms(self):
        for y in (-1.0, 0.5, 3.0, 7.5, 12.0):
            ccdf = integrate.quad(self.est.pdf, y, 30.0, epsabs=1e-13,
                                  limit=200)[0]
            self.assertAlmostEqual(self.est.ccdf(y), ccdf, delta=1e-9)
            self.assertAlmostEqual(self.est.cdf(y) + self.est.ccdf(y), 0.9,
                                   places=14)
            te = integrate.quad(lambda x: x * self.est.pdf(x), y, 30.0,
                                epsabs=1e-13, limit=200)[0]
            self.assertAlmostEqual(self.est.tail_expectation(y), te,
                                   delta=1e-8)
        self.assertAlmostEqual(self.est.tail_expectation(-50.0),
                               self.est.mean_mass(), places=10)

    def testMassIdentity(self):
        '''The estimate integrates to the mass of the bounded bins'''
        for i in range(100):
            rng = rng_for(11, 1, i)
            K = int(rng.integers(3, 15))
            widths = rng.exponential(1.0, K - 1) + 1e-2
            t = np.append(np.cumsum(widths[::-1])[::-1], 0.0)
            q = rng.dirichlet(np.ones(K))
            y = np.append(t[0] + 1.0, t[1:] + 0.5 * (t[:-1] - t[1:]))
            est = BKKernelEstimate(BinMoments(t, q, y, 'empirical'),
                                   rng.uniform(0.05, 1.0) * t[0])
            lo, hi = -12.0 * est.h, t[0] + 12.0 * est.h
            mass = integrate.quad(est.pdf, lo, hi, points=t, epsabs=1e-12,
                                  epsrel=1e-12, limit=500)[0]
            self.assertAlmostEqual(mass, float(np.sum(q[1:])), delta=1e-8)

    def testQuantile(self):
        for tau in (0.01, 0.3, 0.89):
            y = self.est.quantile(tau)
            self.assertAlmostEqual(self.est.cdf(y), tau, places=12)
        self.assertRaises(CoverageError, self.est.quantile, 0.9)
        self.assertEqual(self.est.top_share(1.0), 1.0)
        self.assertTrue(0.0 < self.est.top_share(0.1) < 1.0)

    def testBandwidth(self):
        m = BinMoments(np.array([10.0, 0.0]), np.array([0.5, 0.5]),
                       np.array([12.0, 5.0]), 'empirical')
        sigma2 = 0.5 * (4.0 + 3.5 ** 2) + 0.5 * (100.0 / 12 + 3.5 ** 2)
        self.assertAlmostEqual(grouped_sigma(m), math.sqrt(sigma2),
                               places=12)
        self.assertAlmostEqual(bk_bandwidth(m, 0.5, 32), 0.25 *
                               math.sqrt(sigma2), places=12)
        self.assertRaises(ValueError, bk_bandwidth, m, 0.0, 10)
        self.assertRaises(ValueError, BKKernelEstimate, m, -1.0)


class TestParetoInterp(unittest.TestCase):
    '''Pareto interpolation of top shares'''

    def testFormula(self):
        interp = ParetoInterp(np.array([0.01]), np.array([1.0]),
                              np.array([2.0]), np.array([2.0]),
                              np.array([2.0]), 1.0, 1.0, 1.0)
        income, tie = interp.top_income(0.005)
        self.assertAlmostEqual(income, 2 * 0.01 ** 0.5 * 0.005 ** 0.5,
                               places=12)
        self.assertFalse(tie)
        self.assertAlmostEqual(interp.threshold_at(0.0025), 2.0, places=12)

    def testExactPareto(self):
        '''Pure Pareto tables are interpolated exactly'''
        interp = ParetoInterp.from_summary(pareto_summary())
        np.testing.assert_allclose(interp.alpha, 2.0)
        for p in (0.01, 0.02, 0.3):
            self.assertAlmostEqual(piketty_top_share(interp, p), p ** 0.5,
                                   places=12)
        d = fit_me_density(to_bin_moments(pareto_summary()))
        me = top_share(d, 0.01)
        self.assertLess(abs(me / piketty_top_share(interp, 0.01) - 1), 0.01)

    def testTie(self):
        interp = ParetoInterp(np.array([0.01, 0.03]), np.array([10.0, 4.0]),
                              np.array([20.0, 8.0]), np.array([2.0, 2.0]),
                              np.array([2.0, 2.0]), 1.0, 1.0, 1.0)
        with self.assertLogs('metab.baselines', 'WARNING'):
            k, tie = interp.nearest(0.02)
        self.assertEqual(k, 1)
        self.assertTrue(tie)

    def testCoverage(self):
        summary = pareto_summary()
        totals = ExternalTotals(2e6, 4e6, summary.n)
        interp = ParetoInterp.from_summary(summary, totals)
        self.assertEqual(interp.coverage, 0.5)
        self.assertAlmostEqual(piketty_top_share(interp, 0.005), 0.5 *
                               0.01 ** 0.5, places=12)
        self.assertRaises(CoverageError, interp.top_income, 0.6)
        self.assertRaises(CoverageError, interp.top_income, 0.0)


class TestDoublePareto(unittest.TestCase):
    '''Closed forms of the double Pareto distribution'''

    PARAMS = [(2.3, 1.1), (1.5, 0.5), (3.0, 2.0), (1.2, 4.0), (5.0, 0.8)]

    def testJunction(self):
        params = DoubleParetoParams(2.3, 1.1, 1.0)
        self.assertAlmostEqual(dpareto_cdf(params, 1.0), 2.3 / 3.4, places=15)
        self.assertAlmostEqual(dpareto_cdf(params, 1.0), 0.676471, places=6)
        self.assertAlmostEqual(dpareto_lorenz((1.5, 0.5, 1.0), 0.75), 0.25,
                               places=15)

    def testUnitMean(self):
        for alpha, beta in self.PARAMS:
            d = DoublePareto(alpha, beta)
            self.assertAlmostEqual(d.mean(), 1.0, places=14)
            self.assertEqual(d.params.M, unit_mean_scale(alpha, beta))
            self.assertAlmostEqual(d.partial_expectation(0, np.inf), 1.0,
                                   places=14)
        self.assertRaises(ValueError, DoublePareto, 1.0, 1.0)

    def testLorenz(self):
        '''Lorenz curve against numerical integration of the density'''
        for alpha, beta in self.PARAMS:
            d = DoublePareto(alpha, beta)
            M = d.params.M
            for x in np.linspace(0.01, 0.99, 20):
                y = float(d.ppf(x))
                pieces = [(0.0, min(y, M)), (M, y)] if y > M else [(0.0, y)]
                value = sum(integrate.quad(lambda t: t * d.pdf(t), a, b,
                                           epsabs=1e-14, epsrel=1e-12)[0]
                            for a, b in pieces)
                self.assertAlmostEqual(dpareto_lorenz(d.params, x),
                                       value / d.mean(), delta=1e-8)
                self.assertAlmostEqual(d.top_share(1.0 - x) +
                                       dpareto_lorenz(d.params, x), 1.0,
                                       places=12)

    def testInverse(self):
        d = DoublePareto(2.3, 1.1)
        for y in (0.05, 0.5, d.params.M, 3.0, 100.0):
            self.assertAlmostEqual(d.isf(d.sf(y)) / y, 1.0, places=10)
            self.assertAlmostEqual(d.ppf(d.cdf(y)) / y, 1.0, places=10)
        self.assertAlmostEqual(dpareto_top_share(d.params, 1.0), 1.0)

    def testPopulationMoments(self):
        '''Closed partial expectations against quadrature split at the kink'''
        d = DoublePareto(2.3, 1.1)
        M = d.params.M
        for a, b in ((0.1, 0.4), (0.4, 2.0), (2.0, 10.0), (10.0, np.inf)):
            cuts = [a] + [M] * (a < M < b) + [b]
            value = sum(integrate.quad(lambda t: t * d.pdf(t), lo, hi,
                                       epsrel=1e-12)[0]
                        for lo, hi in zip(cuts, cuts[1:]))
            self.assertAlmostEqual(d.partial_expectation(a, b), value,
                                   delta=1e-10)

    def testKolmogorovSmirnov(self):
        '''The sampler draws from the double Pareto law'''
        for alpha, beta in ((2.3, 1.1), (1.5, 0.5)):
            d = DoublePareto(alpha, beta)
            draws = d.rvs(1000000, rng_for(11, 2, int(10 * alpha)))
            result = stats.kstest(draws, lambda y: dpareto_cdf(d.params, y))
            self.assertLessEqual(result.statistic, 0.002)

    def testSampling(self):
        params = DoubleParetoParams(2.3, 1.1, unit_mean_scale(2.3, 1.1))
        rng = np.random.default_rng(20191231)
        draws = DoublePareto(*params).rvs(1000000, rng)
        self.assertLess(abs(np.mean(draws) - 1.0), 0.02)
        self.assertLess(abs(np.mean(draws >= params.M) - 1.1 / 3.4), 0.002)
        u = open_uniform(rng, 100000)
        self.assertTrue(np.all((u > 0) & (u < 1)))
        self.assertRaises(ValueError, dpareto_sample, params, 0.0, 0.5)
        self.assertAlmostEqual(dpareto_sample(params, 1 - 1e-16, 1 - 1e-16),
                               params.M, places=12)
