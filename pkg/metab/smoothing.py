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
Threshold smoothing of maximum entropy densities

The total dual value J*(t) of a fit is strictly convex in the interior
thresholds t_1 > ... > t_{K-1}, and its minimizer is the unique threshold
vector at which the fitted density is continuous. smooth_thresholds finds
it with damped Newton steps on the tridiagonal Hessian.
'''

import json
import math
from collections import namedtuple
from logging import getLogger

import numpy as np
from scipy import linalg

from metab.mecore import (InfeasibleBinError, SMOOTHED, density_to_dict,
                          fit_me_density)

log = getLogger(__name__)

GRAD_TOL = 1e-10
RELAXED_TOL = 1e-6
MAX_ITER = 500
#: distance iterates keep from the edges of their box, relative to its width
MARGIN = 1e-9
ARMIJO = 1e-4
MAX_HALVINGS = 60
#: relative precision to which J* can be compared between iterates
ROUNDOFF = 64 * np.finfo(float).eps


class EmptyBoxError(ValueError):
    '''Raised if no admissible interior thresholds exist'''
    pass


class ConvergenceError(RuntimeError):
    '''
    Raised if smoothing stops above the relaxed tolerance. *diagnostics*
    holds the last iterate, its gradient norm and the iteration count.
    '''

    def __init__(self, message, diagnostics=None):
        super(ConvergenceError, self).__init__(message)
        self.diagnostics = diagnostics or {}


ThresholdBoxTuple = namedtuple('ThresholdBoxTuple', ['lower', 'upper', 't_fix'])


class ThresholdBox(ThresholdBoxTuple):
    '''
    Admissible interior thresholds: t_k lies in (y_{k+1}, y_k) for
    k = 1 ... K-1, t_K is held at t_fix.
    '''
    __slots__ = ()

    @classmethod
    def from_moments(cls, moments, t_fix):
        y = np.asarray(moments.y, dtype=float)
        q = np.asarray(moments.q, dtype=float)
        if moments.K < 2:
            raise EmptyBoxError("smoothing needs at least two bins")
        if np.any(~(q > 0)) or np.any(~np.isfinite(y)):
            raise EmptyBoxError("every bin needs positive mass and a mean")
        if np.any(np.diff(y) >= 0):
            raise EmptyBoxError("bin means must be strictly decreasing")
        if not t_fix < y[-1]:
            raise EmptyBoxError("fixed bottom threshold {!r} not below the "
                                "bottom bin mean {!r}".format(t_fix, y[-1]))
        return cls(y[1:].copy(), y[:-1].copy(), float(t_fix))

    @property
    def margin(self):
        return MARGIN * (self.upper - self.lower)

    def contains(self, t):
        return bool(np.all(self.lower < t) and np.all(t < self.upper))

    def clip(self, t):
        '''Move t at least one margin inside the box'''
        return np.clip(t, self.lower + self.margin, self.upper - self.margin)

    def max_step(self, t, p):
        '''Largest alpha <= 1 keeping t + alpha*p within the margins'''
        alpha = 1.0
        lo, hi = self.lower + self.margin, self.upper - self.margin
        with np.errstate(divide='ignore', invalid='ignore'):
            up = np.where(p > 0, (hi - t) / p, np.inf)
            down = np.where(p < 0, (lo - t) / p, np.inf)
        alpha = min(alpha, float(np.min(up)), float(np.min(down)))
        return max(alpha, 0.0)

    def full_thresholds(self, t):
        return np.append(np.asarray(t, dtype=float), self.t_fix)


SmoothedFitTuple = namedtuple('SmoothedFitTuple',
                              ['t_star', 'density', 'grad_inf_norm', 'grad_tol',
                               'iterations', 'j_star_trajectory'])


class SmoothedFit(SmoothedFitTuple):
    '''
    Result of smooth_thresholds. *t_star* holds all K thresholds (the last
    one fixed); *grad_inf_norm* and *grad_tol* are measured on the
    standardized problem, see smooth_thresholds.
    '''
    __slots__ = ()

    def max_jump(self):
        '''Largest density jump at an interior threshold'''
        jumps = self.density.jumps()
        return float(np.max(np.abs(jumps))) if len(jumps) else 0.0


def jstar(moments, thresholds):
    '''J* of the fit of *moments* on the K thresholds *thresholds*'''
    return fit_me_density(moments.with_thresholds(thresholds),
                          verbose=False).j_star


def refit(moments, thresholds, provenance=SMOOTHED):
    return fit_me_density(moments.with_thresholds(thresholds), provenance)


def jstar_gradient(density):
    '''
    Partial derivatives of J* with respect to t_1 ... t_{K-1}, given the
    fit at the current thresholds. By the envelope theorem they equal the
    density jumps f(t_k+) - f(t_k-).
    '''
    return density.jumps()


def _edge_rates(b):
    '''Normalized densities at the lower and upper edge of a bin'''
    return b.density_at_lower() / b.q, b.density_at_upper() / b.q


def hessian_coefficients(density):
    '''
    c_k = q_k * p_a * p_b for every bin, p_a and p_b being the normalized
    edge densities; tends to q_k/d_k**2 as lam_k goes to 0 and is 0 for
    the top bin.
    '''
    c = np.zeros(density.K)
    for k, b in enumerate(density.bins):
        if b.is_top or b.q == 0.0:
            continue
        p_a, p_b = _edge_rates(b)
        c[k] = b.q * p_a * p_b
    return c


def jstar_hessian(density, exact=False, banded=False):
    '''
    Tridiagonal Hessian of J* in t_1 ... t_{K-1}.

    By default the multipliers are held fixed: diagonal c_k + c_{k+1} and
    off-diagonal -c_{k+1}. With *exact* the response of each multiplier to
    its edges is added, which gives the Hessian of J* itself (the top bin
    then contributes q_1/(y_1 - t_1)**2).

    With *banded* the result is the upper band form (2, K-1) used by
    scipy.linalg.solveh_banded, else a dense matrix.
    '''
    n = density.K - 1
    diag = np.zeros(n)
    off = np.zeros(max(n - 1, 0))
    for j, b in enumerate(density.bins):
        if b.q == 0.0:
            continue
        if b.is_top:
            if exact:
                diag[0] += b.q / (b.y - b.lower) ** 2
            continue
        p_a, p_b = _edge_rates(b)
        c = p_a * p_b
        daa = dbb = c
        dab = -c
        if exact:
            v = b.variance()
            w_a = -p_a * (b.y - b.lower)
            w_b = -p_b * (b.upper - b.y)
            daa += w_a * w_a / v
            dbb += w_b * w_b / v
            dab += w_a * w_b / v
        # lower edge is t_free[j], upper edge is t_free[j-1]
        if j < n:
            diag[j] += b.q * daa
        diag[j - 1] += b.q * dbb
        if j < n:
            off[j - 1] += b.q * dab
    if banded:
        ab = np.zeros((2, n))
        ab[0, 1:] = off
        ab[1, :] = diag
        return ab
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def hessian_minors(c):
    '''
    Leading principal minors D_1 ... D_{K-1} of the fixed-multiplier
    Hessian built from c_1 ... c_K, by the recurrence
    D_n = c_{n+1} D_{n-1} + c_1 ... c_n with D_0 = 1.
    '''
    c = np.asarray(c, dtype=float)
    minors = []
    prev, prod = 1.0, 1.0
    for n in range(1, len(c)):
        prod *= c[n - 1]
        prev = c[n] * prev + prod
        minors.append(prev)
    return np.array(minors)


def _standardize(moments, t_fix):
    '''Moments on z = (t - t_fix)/scale with scale = y_1 - t_fix'''
    scale = float(moments.y[0]) - t_fix
    thresholds = (np.asarray(moments.thresholds, dtype=float) - t_fix) / scale
    thresholds[-1] = 0.0
    y = (np.asarray(moments.y, dtype=float) - t_fix) / scale
    return type(moments)(thresholds, moments.q, y, moments.provenance), scale


def _try_fit(moments, box, t):
    try:
        return fit_me_density(moments.with_thresholds(box.full_thresholds(t)),
                              verbose=False)
    except InfeasibleBinError:
        return None


def _acceptable(density, trial, g_norm, alpha, slope, j_slack):
    '''
    Sufficient decrease of J* (Armijo). Once the predicted decrease is below
    the roundoff of J*, a step that keeps J* flat is accepted if it shrinks
    the largest density jump instead.
    '''
    if trial.j_star <= density.j_star + ARMIJO * alpha * slope:
        return True
    if -alpha * slope > j_slack or trial.j_star > density.j_star + j_slack:
        return False
    trial_norm = float(np.max(np.abs(jstar_gradient(trial))))
    return trial_norm <= (1.0 - ARMIJO * alpha) * g_norm


def smooth_thresholds(moments, t_K_fix):
    '''
    Minimize J* over the interior thresholds of *moments* with t_K held at
    *t_K_fix* and return a SmoothedFit with the refitted density.

    The problem is solved on standardized coordinates
    z = (t - t_K_fix)/(y_1 - t_K_fix), which leave the minimizer unchanged.
    Iteration stops when the largest density jump in these coordinates is
    below 1e-10*max(1, sup f); a stop from the iteration cap or from a
    stalled line search is accepted under 1e-6*max(1, sup f) with a
    warning.

    Raises:
        EmptyBoxError: means not strictly decreasing or t_K_fix >= y_K
        ConvergenceError: relaxed tolerance not reached
    '''
    t_K_fix = float(t_K_fix)
    ThresholdBox.from_moments(moments, t_K_fix)
    z_moments, scale = _standardize(moments, t_K_fix)
    box = ThresholdBox.from_moments(z_moments, 0.0)
    shift = moments.total_mass * math.log(scale)

    t = box.clip(np.asarray(z_moments.thresholds[:-1], dtype=float))
    density = _try_fit(z_moments, box, t)
    if density is None:
        raise InfeasibleBinError("initial thresholds are not feasible")
    trajectory = [density.j_star - shift]
    iterations = 0
    stalled = False

    while True:
        g = jstar_gradient(density)
        g_norm = float(np.max(np.abs(g)))
        tol_scale = max(1.0, density.sup_density())
        log.debug("Smoothing iteration {}: J*={:.15g}, |grad|={:.3g}".format(
            iterations, trajectory[-1], g_norm))
        if g_norm <= GRAD_TOL * tol_scale or iterations >= MAX_ITER:
            break

        p = None
        ab = jstar_hessian(density, exact=True, banded=True)
        try:
            p = linalg.solveh_banded(ab, -g)
        except linalg.LinAlgError:
            log.debug("Hessian not positive definite, taking gradient step")
        if p is None or not np.all(np.isfinite(p)) or np.dot(g, p) >= 0:
            p = -g / max(1.0, float(np.max(np.abs(ab[1]))))

        slope = float(np.dot(g, p))
        alpha = box.max_step(t, p)
        j_slack = ROUNDOFF * max(1.0, abs(density.j_star))
        accepted = None
        for _ in range(MAX_HALVINGS):
            t_new = t + alpha * p
            if box.contains(t_new):
                trial = _try_fit(z_moments, box, t_new)
                if trial is not None and _acceptable(density, trial, g_norm,
                                                     alpha, slope, j_slack):
                    accepted = t_new, trial
                    break
            alpha *= 0.5
        iterations += 1
        if accepted is None:
            log.debug("Line search stalled after {} iterations".format(
                iterations))
            stalled = True
            break
        t, density = accepted
        trajectory.append(density.j_star - shift)

    grad_tol = GRAD_TOL * tol_scale
    if g_norm > grad_tol:
        relaxed = RELAXED_TOL * tol_scale
        diagnostics = {'t': (box.full_thresholds(t) * scale + t_K_fix).tolist(),
                       'grad_inf_norm': g_norm, 'iterations': iterations,
                       'stalled': stalled}
        if g_norm > relaxed:
            log.critical("Threshold smoothing did not converge: |grad|={:.3g}"
                         " after {} iterations".format(g_norm, iterations))
            raise ConvergenceError(
                "threshold smoothing stopped at |grad|={:.3g} > {:.3g}".format(
                    g_norm, relaxed), diagnostics)
        log.warning("Threshold smoothing met only the relaxed tolerance: "
                    "|grad|={:.3g}".format(g_norm))

    t_star = box.full_thresholds(t) * scale + t_K_fix
    t_star[-1] = t_K_fix
    smoothed = refit(moments, t_star)
    log.devinfo("Smoothed thresholds in {} iterations, J* {:.12g} -> {:.12g}".
                format(iterations, trajectory[0], smoothed.j_star))
    return SmoothedFit(t_star, smoothed, g_norm, grad_tol, iterations,
                       trajectory)


def smoothed_to_dict(fit):
    data = density_to_dict(fit.density)
    data.update({
        't_star': [float(t) for t in fit.t_star],
        'grad_inf_norm': fit.grad_inf_norm,
        'iterations': fit.iterations,
        'j_star_trajectory': list(fit.j_star_trajectory),
    })
    return data


def smoothed_to_json(fit):
    '''MEDensity JSON extended by the optimization record'''
    return json.dumps(smoothed_to_dict(fit), sort_keys=True)
