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


import json
import math
import unittest
from unittest import mock

import numpy as np
from scipy import stats

from metab.tabio import BinMoments, population_moments
from metab.mecore import fit_me_density
from metab.logger import log
from metab.simlab import rng_for
from metab.smoothing import (ThresholdBox, EmptyBoxError, ConvergenceError,
                             jstar, jstar_gradient, jstar_hessian,
                             hessian_coefficients, hessian_minors,
                             smooth_thresholds, smoothed_to_json)


def lognormal_moments(scale=1.0):
    '''Lognormal population moments; the fit jumps at every threshold'''
    dist = stats.lognorm(1.0, scale=scale)
    return population_moments(
        dist, scale * np.array([4.0, 2.0, 1.0, 0.5, 0.25, 0.0]))


class TestThresholdBox(unittest.TestCase):
    '''Admissible region of the interior thresholds'''

    def testBox(self):
        m = lognormal_moments()
        box = ThresholdBox.from_moments(m, 0.0)
        np.testing.assert_array_equal(box.lower, m.y[1:])
        np.testing.assert_array_equal(box.upper, m.y[:-1])
        self.assertTrue(box.contains(m.thresholds[:-1]))
        self.assertFalse(box.contains(box.upper))
        t = box.clip(box.upper)
        self.assertTrue(box.contains(t))
        self.assertEqual(box.full_thresholds(t)[-1], 0.0)

    def testMaxStep(self):
        box = ThresholdBox(np.array([0.0]), np.array([1.0]), -1.0)
        self.assertEqual(box.max_step(np.array([0.5]), np.array([0.1])), 1.0)
        alpha = box.max_step(np.array([0.5]), np.array([1.0]))
        self.assertAlmostEqual(alpha, 0.5 - 1e-9, places=15)
        alpha = box.max_step(np.array([0.5]), np.array([-2.0]))
        self.assertAlmostEqual(alpha, 0.25 - 0.5e-9, places=15)

    def testEmpty(self):
        m = lognormal_moments()
        y = m.y.copy()
        y[2] = y[1]
        bad = [
            (m._replace(y=y), 0.0),
            (m, float(m.y[-1])),
            (BinMoments(np.array([1.0]), np.array([1.0]), np.array([2.0]),
                        'population'), 0.0),
            (m._replace(q=np.where(np.arange(m.K) == 2, 0.0, m.q)), 0.0),
        ]
        for moments, t_fix in bad:
            self.assertRaises(EmptyBoxError, ThresholdBox.from_moments,
                              moments, t_fix)
            self.assertRaises(EmptyBoxError, smooth_thresholds, moments,
                              t_fix)


class TestDerivatives(unittest.TestCase):
    '''Gradient and Hessian of J* against finite differences'''

    def setUp(self):
        self.moments = lognormal_moments()
        self.t = np.array(self.moments.thresholds, dtype=float)
        self.width = self.moments.y[:-1] - self.moments.y[1:]

    def fit(self, t):
        return fit_me_density(self.moments.with_thresholds(t))

    def testGradient(self):
        g = jstar_gradient(self.fit(self.t))
        self.assertEqual(len(g), self.moments.K - 1)
        for k in range(len(g)):
            h = 1e-6 * self.width[k]
            up, down = self.t.copy(), self.t.copy()
            up[k] += h
            down[k] -= h
            fd = (jstar(self.moments, up) - jstar(self.moments, down)) / (2 * h)
            self.assertAlmostEqual(fd, g[k], delta=1e-4 * max(abs(g[k]), 1e-2))

    def testHessian(self):
        H = jstar_hessian(self.fit(self.t), exact=True)
        scale = np.max(np.abs(H))
        for k in range(len(H)):
            h = 1e-5 * self.width[k]
            up, down = self.t.copy(), self.t.copy()
            up[k] += h
            down[k] -= h
            fd = (jstar_gradient(self.fit(up)) -
                  jstar_gradient(self.fit(down))) / (2 * h)
            np.testing.assert_allclose(fd, H[:, k], rtol=0, atol=1e-4 * scale)
        self.assertTrue(np.all(np.linalg.eigvalsh(H) > 0))

    def testBanded(self):
        d = self.fit(self.t)
        ab = jstar_hessian(d, exact=True, banded=True)
        H = jstar_hessian(d, exact=True)
        np.testing.assert_allclose(ab[1], np.diag(H))
        np.testing.assert_allclose(ab[0, 1:], np.diag(H, 1))

    def testMinors(self):
        '''The recurrence gives the leading minors of the fixed Hessian'''
        d = self.fit(self.t)
        c = hessian_coefficients(d)
        self.assertEqual(c[0], 0.0)
        H = jstar_hessian(d)
        minors = hessian_minors(c)
        self.assertEqual(len(minors), len(H))
        for n in range(1, len(H) + 1):
            self.assertAlmostEqual(np.linalg.det(H[:n, :n]) / minors[n - 1],
                                   1.0, places=9)
        np.testing.assert_allclose(hessian_minors([1.0, 2.0, 3.0]),
                                   [3.0, 11.0])

    def testUniformLimit(self):
        '''A uniform bin has c = q/d**2'''
        m = BinMoments(np.array([3.0, 1.0, 0.0]), np.array([0.2, 0.5, 0.3]),
                       np.array([4.0, 2.0, 0.5]), 'empirical')
        d = fit_me_density(m)
        self.assertEqual(d.bins[1].lam, 0.0)
        self.assertAlmostEqual(hessian_coefficients(d)[1], 0.5 / 4.0,
                               places=15)


class TestSmoothThresholds(unittest.TestCase):
    '''Threshold smoothing'''

    def testContinuous(self):
        m = lognormal_moments()
        fit = smooth_thresholds(m, 0.0)
        d = fit.density
        self.assertLessEqual(fit.max_jump(), 1e-8 * d.sup_density())
        self.assertLessEqual(fit.grad_inf_norm, fit.grad_tol)
        self.assertEqual(fit.t_star[-1], 0.0)
        self.assertEqual(d.provenance, 'smoothed')
        box = ThresholdBox.from_moments(m, 0.0)
        self.assertTrue(box.contains(fit.t_star[:-1]))
        # the bin moments are unchanged
        for k, b in enumerate(d.bins):
            self.assertAlmostEqual(b.q, m.q[k], places=15)
            self.assertAlmostEqual(b.moment_above(b.lower) / b.q, m.y[k],
                                   places=9)
        self.assertLess(d.j_star, fit_me_density(m).j_star)
        trajectory = fit.j_star_trajectory
        self.assertTrue(all(b <= a + 1e-12
                            for a, b in zip(trajectory, trajectory[1:])))
        self.assertAlmostEqual(trajectory[-1], d.j_star, places=8)

    def testExponentialStays(self):
        '''Exponential populations are already continuous'''
        m = population_moments(stats.expon(), [2.0, 1.0, 0.5, 0.0])
        fit = smooth_thresholds(m, 0.0)
        np.testing.assert_allclose(fit.t_star, m.thresholds, atol=1e-6)
        ys = np.linspace(0, 5, 101)
        np.testing.assert_allclose(fit.density.pdf(ys), np.exp(-ys),
                                   atol=1e-7)
        self.assertLess(fit.max_jump(), 1e-8)

    def testScaleEquivariance(self):
        '''Smoothing commutes with a change of currency unit'''
        small = smooth_thresholds(lognormal_moments(), 0.0)
        large = smooth_thresholds(lognormal_moments(1e4), 0.0)
        np.testing.assert_allclose(large.t_star, 1e4 * small.t_star,
                                   rtol=1e-7)
        self.assertAlmostEqual(large.density.j_star,
                               small.density.j_star - math.log(1e4), places=7)

    def testFixedBottom(self):
        m = lognormal_moments()
        fit = smooth_thresholds(m, -1.0)
        self.assertEqual(fit.t_star[-1], -1.0)
        self.assertEqual(fit.density.lower_bound, -1.0)

    def testConvergenceError(self):
        with mock.patch('metab.smoothing.MAX_ITER', 0):
            with self.assertRaises(ConvergenceError) as cm:
                smooth_thresholds(lognormal_moments(), 0.0)
        diagnostics = cm.exception.diagnostics
        self.assertEqual(diagnostics['iterations'], 0)
        self.assertEqual(len(diagnostics['t']), 6)

    def testJson(self):
        fit = smooth_thresholds(lognormal_moments(), 0.0)
        data = json.loads(smoothed_to_json(fit))
        self.assertEqual(data['t_star'], list(fit.t_star))
        self.assertEqual(data['iterations'], fit.iterations)
        self.assertEqual(data['provenance'], 'smoothed')
        self.assertEqual(len(data['bins']), 6)


def random_lognormal_moments(rng):
    '''Lognormal moments on K-1 random percentile thresholds plus zero'''
    K = int(rng.integers(3, 20))
    dist = stats.lognorm(1.0, scale=rng.uniform(0.5, 5.0))
    p = np.sort(rng.choice(np.arange(1, 99), K - 1, replace=False)) / 100.0
    return population_moments(dist, np.append(dist.isf(p), 0.0))


class TestRandomTables(unittest.TestCase):
    '''Smoothing on randomized lognormal tables'''

    def testStrictTolerance(self):
        '''Every table reaches the strict gradient tolerance'''
        for i in range(100):
            m = random_lognormal_moments(rng_for(5, 1, i))
            with self.assertLogs('metab', level='WARNING') as cm:
                log.warning("smoothing table {}".format(i))
                fit = smooth_thresholds(m, 0.0)
            self.assertFalse([l for l in cm.output if 'relaxed' in l], i)
            self.assertLessEqual(fit.grad_inf_norm, fit.grad_tol, i)
            sup = fit.density.sup_density()
            self.assertLessEqual(fit.max_jump(), 1e-8 * sup, i)

    def testConvexAlongSegment(self):
        '''J* at a midpoint stays below the chord'''
        for i in range(20):
            m = random_lognormal_moments(rng_for(5, 2, i))
            a = np.asarray(m.thresholds, dtype=float)
            b = smooth_thresholds(m, 0.0).t_star
            ends = [jstar(m, a), jstar(m, b)]
            for w in (0.25, 0.5, 0.75):
                mid = jstar(m, (1 - w) * a + w * b)
                chord = (1 - w) * ends[0] + w * ends[1]
                self.assertLessEqual(mid, chord + 1e-10 * max(1.0, abs(chord)))

    def testFlatMeetsTail(self):
        '''A uniform bottom bin meeting an exponential top bin is continuous'''
        m = BinMoments(np.array([1.0, 0.0]), np.array([0.5, 0.5]),
                       np.array([2.0, 0.5]), 'population')
        d = fit_me_density(m)
        self.assertAlmostEqual(float(jstar_gradient(d)[0]), 0.0, places=10)
        fit = smooth_thresholds(m, 0.0)
        self.assertAlmostEqual(fit.t_star[0], 1.0, places=8)
        self.assertAlmostEqual(fit.density.pdf(0.5), 0.5, places=9)
        self.assertAlmostEqual(fit.density.pdf(1.5), 0.5 * math.exp(-0.5),
                               places=10)
