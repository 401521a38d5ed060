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
Monte-Carlo experiments: sample from a unit-mean income model, tabulate,
estimate and score the estimates against the population.

Every replication draws from its own random stream, derived from the
master seed and the replication's position in the experiment, so results
do not depend on the number of worker processes.
'''

import json
import math
import time
from collections import namedtuple
from functools import lru_cache
from logging import getLogger

import numpy as np
import pandas as pd
from scipy import integrate, special, stats

from metab import __version__
from metab.baselines import (BKKernelEstimate, DoublePareto, ParetoInterp,
                             bk_bandwidth, dpareto_top_share,
                             piketty_top_share)
from metab.dist import top_share
from metab.mecore import InfeasibleBinError, fit_me_density
from metab.tabio import TableError, make_summary, to_bin_moments
from metab.util import BatchJobPool, worker_count

log = getLogger(__name__)

SHARES, DENSITY, COMPARISON = 0, 1, 2
MEAN_TOL = 1e-6
SPOT_CHECK_TOL = 1e-10

_PARAMS = {
    'lognormal': ('sigma',),
    'gamma': ('a',),
    'weibull': ('k',),
    'double_pareto': ('alpha', 'beta'),
    'exponential': (),
}


ModelSpecTuple = namedtuple('ModelSpecTuple', ['family', 'params'])


class ModelSpec(ModelSpecTuple):
    '''
    Income model with unit population mean. *params* is a tuple of
    (name, value) pairs, so a ModelSpec can key caches.
    '''
    __slots__ = ()

    @classmethod
    def from_dict(cls, conf):
        family = conf.get('family')
        if family not in _PARAMS:
            raise ValueError("unknown model family {!r}".format(family))
        try:
            params = tuple((name, float(conf[name])) for name in _PARAMS[family])
        except KeyError as e:
            raise ValueError("model {} needs parameter {}".format(family, e))
        model = cls(family, params)
        model.check_mean()
        return model

    def param(self, name):
        return dict(self.params)[name]

    @property
    def label(self):
        if not self.params:
            return self.family
        return "{}({})".format(self.family, ", ".join(
            "{}={:g}".format(k, v) for k, v in self.params))

    def distribution(self):
        '''Frozen distribution with pdf/cdf/sf/ppf/isf and rvs'''
        f = self.family
        if f == 'lognormal':
            s = self.param('sigma')
            return stats.lognorm(s=s, scale=math.exp(-0.5 * s * s))
        if f == 'gamma':
            a = self.param('a')
            return stats.gamma(a, scale=1.0 / a)
        if f == 'weibull':
            k = self.param('k')
            return stats.weibull_min(c=k, scale=1.0 / special.gamma(1.0 + 1.0 / k))
        if f == 'exponential':
            return stats.expon()
        return DoublePareto(self.param('alpha'), self.param('beta'))

    def check_mean(self):
        '''Check the population mean is 1 by quadrature'''
        d = self.distribution()
        if isinstance(d, DoublePareto):
            m = d.partial_expectation(0.0, math.inf)
        else:
            median = float(d.ppf(0.5))
            m = sum(integrate.quad(lambda x: x * d.pdf(x), lo, hi,
                                   limit=200, epsabs=0.0, epsrel=1e-10)[0]
                    for lo, hi in ((0.0, median), (median, math.inf)))
        if abs(m - 1.0) > MEAN_TOL:
            raise ValueError("model {} has mean {!r}, not 1".format(self.label,
                                                                  m))
        return m

    def isf(self, p):
        '''The top p quantile of the population'''
        return float(self.distribution().isf(p))

    def log_pdf(self, log_ys):
        '''Density of log income at log_ys'''
        ys = np.exp(np.asarray(log_ys, dtype=float))
        return np.asarray(self.distribution().pdf(ys)) * ys


@lru_cache(maxsize=1024)
def true_top_share(model, p):
    '''Population income share of the top p fractile of a unit-mean model'''
    if p >= 1.0:
        return 1.0
    f = model.family
    exponential = f == 'exponential' or (f == 'gamma' and model.param('a') == 1) \
        or (f == 'weibull' and model.param('k') == 1)
    if exponential:
        return p - p * math.log(p)
    if f == 'double_pareto':
        return float(dpareto_top_share(model.distribution().params, p))
    if f == 'lognormal':
        s = model.param('sigma')
        return float(special.ndtr(s - special.ndtri(1.0 - p)))
    y = model.isf(p)
    if f == 'gamma':
        # size-biased law of Gamma(a, 1/a) is Gamma(a + 1, 1/a)
        a = model.param('a')
        return float(stats.gamma(a + 1.0, scale=1.0 / a).sf(y))
    k = model.param('k')
    scale = 1.0 / special.gamma(1.0 + 1.0 / k)
    return float(special.gammaincc(1.0 + 1.0 / k, (y / scale) ** k))


def rng_for(seed, *key):
    '''Independent Generator for the replication identified by *key*'''
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=key))


def sample(model, n, rng):
    '''n draws from *model*'''
    n = int(n)
    if n < 1:
        raise ValueError("sample size must be positive")
    return model.distribution().rvs(size=n, random_state=rng)


def population_thresholds(model, fractiles, lower_bound=0.0):
    '''Population top-p quantiles, descending; p = 1 maps to lower_bound'''
    return np.array([lower_bound if p >= 1.0 else model.isf(p)
                     for p in fractiles])


def tabulate(values, fractiles=None, thresholds=None, lower_bound=0.0):
    '''
    Tabulate a sample into a TabulatedSummary.

    Either *thresholds* (descending, the last one being the lower end) are
    given, or they are the top p quantiles of the sample for the
    increasing *fractiles*, the last of which must be 1 and maps to
    *lower_bound*. Empty bins are kept with zero counts.
    '''
    values = np.asarray(values, dtype=float)
    n = len(values)
    if thresholds is None:
        if fractiles is None:
            raise ValueError("tabulate needs fractiles or thresholds")
        fractiles = np.asarray(fractiles, dtype=float)
        if fractiles[-1] != 1.0 or np.any(np.diff(fractiles) <= 0):
            raise ValueError("fractiles must increase to 1")
        tops = np.minimum(np.ceil(n * fractiles[:-1] - 1e-9).astype(int), n)
        tops = np.maximum(tops, 1)
        kth = n - tops
        part = np.partition(values, np.unique(kth))
        thresholds = np.append(part[kth], lower_bound)
    thresholds = np.asarray(thresholds, dtype=float)
    ascending = thresholds[::-1]
    if np.any(values < ascending[0]):
        raise TableError("sample values below the lower threshold")
    # bin 0 is the bottom bin [t_K, t_{K-1})
    index = np.searchsorted(ascending, values, side='right') - 1
    K = len(thresholds)
    counts = np.bincount(index, minlength=K)[::-1].astype(float)
    sums = np.bincount(index, weights=values, minlength=K)[::-1]
    return make_summary(thresholds, np.cumsum(counts), np.cumsum(sums), n,
                        validate=False)


def _method_labels(methods, bk_c):
    labels = []
    for m in methods:
        if m == 'bk':
            labels.extend('bk(c={:g})'.format(c) for c in bk_c)
        else:
            labels.append(m)
    return labels


def _moments_reproduced(density, moments):
    '''Closed-form bin integrals reproduce every q_k and q_k*y_k'''
    for b, q, y in zip(density.bins, moments.q, moments.y):
        if q == 0:
            continue
        mass = b.mass_above(b.lower)
        first = b.moment_above(b.lower)
        if abs(mass - q) > SPOT_CHECK_TOL * q or \
                abs(first - q * y) > SPOT_CHECK_TOL * abs(q * y):
            return False
    return True


def _estimate_shares(summary, method, c, p0_list, n):
    moments = to_bin_moments(summary)
    if method == 'me':
        d = fit_me_density(moments, verbose=False)
        return [top_share(d, p) for p in p0_list], d, moments
    if method == 'bk':
        est = BKKernelEstimate(moments, bk_bandwidth(moments, c, n))
        return [est.top_share(p) for p in p0_list], None, moments
    interp = ParetoInterp.from_summary(summary)
    return [piketty_top_share(interp, p) for p in p0_list], None, moments


def share_replication(model, n, thresholds, seed, key, methods, bk_c,
                      p0_list, spot_check):
    '''
    One replication of the top-share experiment. Returns a dict from
    method label to share estimates (None on failure) and the spot check
    outcome (None if not checked).
    '''
    rng = rng_for(seed, *key)
    summary = tabulate(sample(model, n, rng), thresholds=thresholds)
    out = {}
    checked = None
    for method in methods:
        cs = bk_c if method == 'bk' else [None]
        for c in cs:
            label = _method_labels([method], [c])[0]
            try:
                shares, d, moments = _estimate_shares(summary, method, c,
                                                      p0_list, n)
                if d is not None and spot_check:
                    checked = _moments_reproduced(d, moments)
            except (InfeasibleBinError, TableError, ValueError) as e:
                log.warning("Replication {} of {} failed for {}: {}".format(
                    key, model.label, label, e))
                shares = None
            out[label] = shares
    return out, checked


SimReportTuple = namedtuple('SimReportTuple',
                            ['cells', 'replications', 'seed', 'config',
                             'spot_checks', 'spot_check_failures',
                             'wall_time'])


class SimReport(SimReportTuple):
    '''
    Relative bias and RMSE per (model, method, n, p0) cell. *cells* is a
    list of dicts; *wall_time* is informational and never serialized.
    '''
    __slots__ = ()

    COLUMNS = ['model', 'method', 'n', 'p0', 'bias', 'rmse', 'failures']

    def to_frame(self):
        return pd.DataFrame(self.cells, columns=self.COLUMNS)

    def to_table(self, stat='bias'):
        '''Rows (model, method, n), columns p0'''
        return self.to_frame().pivot_table(
            index=['model', 'method', 'n'], columns='p0', values=stat,
            sort=False)

    def to_dict(self):
        return {'version': __version__,
                'seed': self.seed,
                'replications': self.replications,
                'config': self.config,
                'spot_checks': self.spot_checks,
                'spot_check_failures': self.spot_check_failures,
                'cells': self.cells}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False,
                          default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(repr(o))


def _num(x):
    return None if x is None or not math.isfinite(x) else x


def _score(estimates, truth):
    '''(bias, rmse) of estimate/truth - 1 over the successful replications'''
    rel = [e / truth - 1.0 for e in estimates]
    if not rel:
        return math.nan, math.nan
    bias = math.fsum(rel) / len(rel)
    rmse = math.sqrt(math.fsum(r * r for r in rel) / len(rel))
    return bias, rmse


def _pool(jobs, progress):
    return BatchJobPool(worker_count(jobs), progress=progress)


def run_experiment(config, jobs=None, progress=None):
    '''
    Top-share experiment: for every model and sample size run the
    configured replications on the population thresholds of the share
    fractile grid, estimate the top shares of p0_list with every method
    and score them against the population shares.
    '''
    started = time.time()
    models = [ModelSpec.from_dict(m) for m in config['models']]
    methods = list(config['methods'])
    bk_c = [float(c) for c in config['bk_c']]
    p0_list = [float(p) for p in config['p0_list']]
    M = int(config['replications'])
    seed = int(config['seed'])
    every = max(1, int(round(1.0 / config['spot_check_rate']))) \
        if config['spot_check_rate'] > 0 else 0

    pool = _pool(jobs, progress and "Top shares")
    index = []
    for i, model in enumerate(models):
        thresholds = population_thresholds(model, config['fractiles'])
        for j, n in enumerate(config['n_list']):
            for m in range(M):
                spot = bool(every) and m % every == 0
                job = pool.add(share_replication,
                               (model, n, thresholds, seed, (SHARES, i, j, m),
                                methods, bk_c, p0_list, spot))
                index.append((job, model, n))
    log.info("Running {} top-share replications".format(len(index)))
    results = pool.join()

    collected = {}
    spot_checks = spot_failures = 0
    for job, model, n in index:
        out, checked = results[job]
        if checked is not None:
            spot_checks += 1
            spot_failures += not checked
        for label, shares in out.items():
            collected.setdefault((model, label, n), []).append(shares)

    cells = []
    for (model, label, n), runs in collected.items():
        ok = [r for r in runs if r is not None]
        failures = len(runs) - len(ok)
        if failures:
            log.warning("{} of {} replications failed for {} {} n={}".format(
                failures, len(runs), model.label, label, n))
        for col, p0 in enumerate(p0_list):
            bias, rmse = _score([r[col] for r in ok], true_top_share(model, p0))
            cells.append({'model': model.label, 'method': label, 'n': int(n),
                          'p0': p0, 'bias': _num(bias), 'rmse': _num(rmse),
                          'failures': failures})
    if spot_failures:
        log.warning("{} of {} spot checks failed to reproduce the moments".
                    format(spot_failures, spot_checks))
    wall = time.time() - started
    log.info("Top-share experiment finished in {:.1f}s".format(wall))
    return SimReport(cells, M, seed, config.as_dict(), spot_checks,
                     spot_failures, wall)


def density_replication(model, n, thresholds, seed, key, methods, bk_c,
                        eval_points):
    '''
    One replication of the density experiment: estimated over true
    density at *eval_points* per method label, None on failure.
    '''
    rng = rng_for(seed, *key)
    summary = tabulate(sample(model, n, rng), thresholds=thresholds)
    truth = np.asarray(model.distribution().pdf(eval_points), dtype=float)
    moments = to_bin_moments(summary)
    out = {}
    for method in methods:
        if method == 'piketty':
            continue
        cs = bk_c if method == 'bk' else [None]
        for c in cs:
            label = _method_labels([method], [c])[0]
            try:
                if method == 'me':
                    est = fit_me_density(moments, verbose=False).pdf(eval_points)
                else:
                    est = BKKernelEstimate(
                        moments, bk_bandwidth(moments, c, n)).pdf(eval_points)
                out[label] = (np.asarray(est) / truth).tolist()
            except (InfeasibleBinError, ValueError) as e:
                log.warning("Density replication {} failed for {}: {}".format(
                    key, label, e))
                out[label] = None
    return out


def density_rmse_experiment(config, jobs=None, progress=None):
    '''
    Relative RMSE of the density estimators at the population quantiles
    eval_quantiles, as a DataFrame with columns model, method, n,
    quantile, y, rmse, failures.
    '''
    models = [ModelSpec.from_dict(m) for m in config['density_models']]
    methods = ['me', 'bk']
    bk_c = [float(c) for c in config['bk_c']]
    quantiles = [float(q) for q in config['eval_quantiles']]
    M = int(config['density_replications'])
    seed = int(config['seed'])

    pool = _pool(jobs, progress and "Density RMSE")
    index = []
    for i, model in enumerate(models):
        thresholds = population_thresholds(model, config['fractiles'])
        points = np.array([model.isf(1.0 - q) for q in quantiles])
        for j, n in enumerate(config['density_n_list']):
            for m in range(M):
                job = pool.add(density_replication,
                               (model, n, thresholds, seed,
                                (DENSITY, i, j, m), methods, bk_c, points))
                index.append((job, model, n, points))
    log.info("Running {} density replications".format(len(index)))
    results = pool.join()

    collected = {}
    for job, model, n, points in index:
        for label, ratios in results[job].items():
            collected.setdefault((model, label, n), (points, []))[1].append(
                ratios)
    rows = []
    for (model, label, n), (points, runs) in collected.items():
        ok = [r for r in runs if r is not None]
        for col, q in enumerate(quantiles):
            rel = [r[col] - 1.0 for r in ok]
            rmse = math.sqrt(math.fsum(x * x for x in rel) / len(rel)) \
                if rel else math.nan
            rows.append({'model': model.label, 'method': label, 'n': int(n),
                         'quantile': q, 'y': float(points[col]),
                         'rmse': rmse, 'failures': len(runs) - len(ok)})
    return pd.DataFrame(rows, columns=['model', 'method', 'n', 'quantile', 'y',
                                       'rmse', 'failures'])


def density_comparison(config, points=400):
    '''
    One large draw per density model tabulated on its own top quantiles
    (density_fractiles), with the true and the fitted density of log
    income on a grid between the 0.1% and 99.9% population quantiles.
    '''
    seed = int(config['seed'])
    n = int(config['compare_n'])
    frames = []
    for i, conf in enumerate(config['density_models']):
        model = ModelSpec.from_dict(conf)
        rng = rng_for(seed, COMPARISON, i)
        summary = tabulate(sample(model, n, rng),
                           fractiles=config['density_fractiles'])
        d = fit_me_density(to_bin_moments(summary))
        lo, hi = model.isf(0.999), model.isf(0.001)
        xs = np.linspace(math.log(lo), math.log(hi), int(points))
        ys = np.exp(xs)
        frames.append(pd.DataFrame({
            'model': model.label,
            'log_y': xs,
            'true': model.log_pdf(xs),
            'me': d.pdf(ys) * ys,
        }, columns=['model', 'log_y', 'true', 'me']))
        log.devinfo("Density comparison for {} done".format(model.label))
    return pd.concat(frames, ignore_index=True)
