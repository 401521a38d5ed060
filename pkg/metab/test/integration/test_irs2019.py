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


import unittest

import numpy as np

from metab.tabio import load_irs2019, to_bin_moments
from metab.mecore import fit_me_density
from metab.smoothing import ThresholdBox, smooth_thresholds
from metab.dist import (cdf, gini, mean, quantile, shares_frame,
                        tail_expectation, top_share)
from metab.baselines import ParetoInterp, piketty_top_share

FRACTILES = [0.0001, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0]


class TestIRS2019(unittest.TestCase):
    '''Fit, smooth and share estimates on the 2019 IRS table'''

    @classmethod
    def setUpClass(cls):
        cls.summary = load_irs2019()
        cls.moments = to_bin_moments(cls.summary)
        cls.density = fit_me_density(cls.moments)
        cls.smoothed = smooth_thresholds(cls.moments,
                                         cls.summary.lower_bound)

    def assertReproduces(self, d):
        '''Returns and income of every bin match the table'''
        n = self.summary.n
        counts = [b.mass_above(b.lower) * n for b in d.bins]
        sums = [b.moment_above(b.lower) * n for b in d.bins]
        np.testing.assert_allclose(np.cumsum(counts), self.summary.cum_counts,
                                   rtol=1e-12)
        np.testing.assert_allclose(np.cumsum(sums), self.summary.cum_sums,
                                   rtol=1e-9)

    def testColumnSums(self):
        self.assertEqual(self.summary.cum_counts[-1], 155669305)
        self.assertEqual(self.summary.cum_sums[-1], 12203938209000.0)
        self.assertAlmostEqual(mean(self.density) * self.summary.n /
                               12203938209000.0, 1.0, places=10)

    def testFit(self):
        d = self.density
        self.assertReproduces(d)
        self.assertAlmostEqual(d.total_mass, 1.0, places=12)
        self.assertTrue(np.all(np.isfinite(d.pdf(d.thresholds))))
        # grouped data with a realistic tail gives jumps to smooth away
        self.assertGreater(np.max(np.abs(d.jumps())), 0.0)

    def testSmoothed(self):
        fit = self.smoothed
        d = fit.density
        self.assertReproduces(d)
        self.assertLessEqual(fit.max_jump(), 1e-8 * d.sup_density())
        self.assertEqual(fit.t_star[-1], self.summary.lower_bound)
        box = ThresholdBox.from_moments(self.moments, self.summary.lower_bound)
        self.assertTrue(box.contains(fit.t_star[:-1]))
        self.assertLess(d.j_star, self.density.j_star)

    def testShares(self):
        for d in (self.density, self.smoothed.density):
            frame = shares_frame(d, FRACTILES)
            shares = frame['top_share'].values
            self.assertTrue(np.all(np.diff(shares) > 0))
            self.assertEqual(shares[-1], 1.0)
            # shares exceed the population fractiles
            self.assertTrue(np.all(shares[:-1] > FRACTILES[:-1]))
            self.assertTrue(0.0 < gini(d) < 1.0)
        # the top bin holds 0.0134% of returns; below that the share is
        # determined by the table alone
        p = self.moments.q[0]
        exact = self.summary.cum_sums[0] / self.summary.cum_sums[-1]
        self.assertAlmostEqual(top_share(self.density, p), exact, places=9)

    def testQuantiles(self):
        d = self.density
        for tau in (0.1, 0.5, 0.9, 0.999):
            self.assertAlmostEqual(cdf(d, quantile(d, tau)), tau, delta=1e-12)
        self.assertAlmostEqual(tail_expectation(d, d.lower_bound),
                               mean(d), places=6)

    def testPiketty(self):
        '''Pareto interpolation roughly agrees with the fit at the top'''
        interp = ParetoInterp.from_summary(self.summary)
        for p in (0.001, 0.01):
            me = top_share(self.density, p)
            pk = piketty_top_share(interp, p)
            self.assertLess(abs(me / pk - 1.0), 0.1)
