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
Tabulated summary data: parsing, validation and bin moments

A table lists thresholds t_1 > t_2 > ... > t_K together with the number of
units n_k at or above t_k and their total value S_{n_k}. Bin k covers
[t_k, t_{k-1}) with t_0 = infinity, so the bottom threshold t_K is the
lower end of the support.
'''

import io
import json
import math
import os
from collections import namedtuple
from logging import getLogger

import numpy as np
import pandas as pd
from scipy import integrate

from metab.configuration import FormatDescriptor

log = getLogger(__name__)

EMPIRICAL = 'empirical'
POPULATION = 'population'

#: relative accuracy requested from and demanded of the moment quadrature
QUAD_RTOL = 1e-12
QUAD_CHECK_RTOL = 1e-8


class TableError(ValueError):
    '''
    Raised if a table is malformed or violates the bin invariants.
    *bin_index* is the 1-based index of the offending bin (top bin is 1).
    '''
    def __init__(self, message, bin_index=None):
        super(TableError, self).__init__(message)
        self.bin_index = bin_index


class QuadratureError(RuntimeError):
    '''Raised if adaptive quadrature does not reach its tolerance'''
    pass


TabulatedSummaryTuple = namedtuple('TabulatedSummaryTuple',
        ['thresholds', 'cum_counts', 'cum_sums', 'n', 'lower_bound'])


class TabulatedSummary(TabulatedSummaryTuple):
    '''
    Validated table in cumulative form, top bin first.

    thresholds, cum_counts and cum_sums are float arrays of length K,
    n is the population the counts refer to and lower_bound equals t_K.
    '''
    __slots__ = ()

    @property
    def K(self):
        return len(self.thresholds)

    @property
    def group_counts(self):
        return np.diff(self.cum_counts, prepend=0.0)

    @property
    def group_sums(self):
        return np.diff(self.cum_sums, prepend=0.0)

    @property
    def group_means(self):
        counts = self.group_counts
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(counts > 0, self.group_sums / counts, np.nan)


BinMomentsTuple = namedtuple('BinMomentsTuple',
                             ['thresholds', 'q', 'y', 'provenance'])


class BinMoments(BinMomentsTuple):
    '''
    Per-bin probabilities q_k and conditional means y_k (NaN for empty
    bins) on the thresholds t_1 > ... > t_K, top bin first.
    '''
    __slots__ = ()

    @property
    def K(self):
        return len(self.thresholds)

    @property
    def lower_bound(self):
        return float(self.thresholds[-1])

    @property
    def total_mass(self):
        return float(np.sum(self.q))

    @property
    def mean(self):
        '''Mean over the covered mass, i.e. sum q_k y_k (not normalized)'''
        mask = self.q > 0
        return float(np.sum(self.q[mask] * self.y[mask]))

    def bounds(self, k):
        '''(lower, upper) of the 0-based bin k; upper is inf for k == 0'''
        upper = np.inf if k == 0 else float(self.thresholds[k - 1])
        return float(self.thresholds[k]), upper

    def with_thresholds(self, thresholds):
        '''Same (q, y) on another threshold grid'''
        return BinMoments(np.asarray(thresholds, dtype=float), self.q,
                          self.y, self.provenance)


def make_summary(thresholds, cum_counts, cum_sums, n=None, validate=True):
    '''
    Build a validated TabulatedSummary from cumulative arrays ordered top
    bin first. *n* defaults to the last cumulative count. Simulated
    tables skip the validation with validate=False and fail at the fit.
    '''
    thresholds = np.asarray(thresholds, dtype=float)
    cum_counts = np.asarray(cum_counts, dtype=float)
    cum_sums = np.asarray(cum_sums, dtype=float)
    if not (len(thresholds) == len(cum_counts) == len(cum_sums)):
        raise TableError("threshold, count and sum columns differ in length")
    if len(thresholds) < 2:
        raise TableError("a table needs at least two rows, got {}".
                         format(len(thresholds)))
    if n is None and len(cum_counts):
        n = float(cum_counts[-1])
    summary = TabulatedSummary(thresholds, cum_counts, cum_sums, float(n),
                               float(thresholds[-1]))
    if validate:
        _validate(summary)
    return summary


def _validate(summary):
    t = summary.thresholds
    if not np.all(np.isfinite(t)):
        raise TableError("thresholds must be finite")
    for k in range(1, summary.K):
        if not t[k] < t[k - 1]:
            raise TableError("thresholds not strictly decreasing at bin {}"
                             "".format(k + 1), bin_index=k + 1)
    if not (np.all(np.isfinite(summary.cum_counts)) and
            np.all(np.isfinite(summary.cum_sums))):
        raise TableError("counts and sums must be finite")
    counts = summary.group_counts
    for k in np.nonzero(counts < 0)[0]:
        raise TableError("negative count in bin {}".format(k + 1),
                         bin_index=int(k) + 1)
    if not summary.cum_counts[-1] > 0:
        raise TableError("the table holds no units")
    if summary.n < summary.cum_counts[-1]:
        raise TableError("total population {} is below the tabulated count "
                         "{}".format(summary.n, summary.cum_counts[-1]))
    sums = summary.group_sums
    means = summary.group_means
    for k in range(summary.K):
        if counts[k] == 0:
            if sums[k] != 0:
                raise TableError("bin {} has no units but a nonzero total"
                                 "".format(k + 1), bin_index=k + 1)
            continue
        upper = np.inf if k == 0 else t[k - 1]
        if not t[k] < means[k] < upper:
            raise TableError("group mean {:.10g} of bin {} lies outside "
                             "({:.10g}, {:.10g})".format(
                                 means[k], k + 1, t[k], upper),
                             bin_index=k + 1)


#: cell decorations dropped before number conversion
DECORATIONS = r'[$\u20ac\u00a3\s\u00a0_]'
#: cells read as missing values
MISSING = ('', '-', 'nan', 'NaN', '-inf')


def _to_numbers(cells, locale):
    '''
    Convert a frame of string cells to floats. Returns the cleaned strings
    (NaN where missing) and the numbers (NaN where missing or malformed).
    '''
    thousands, decimal = ('.', ',') if locale == 'eu' else (',', '.')
    cleaned = cells.apply(
        lambda col: col.astype(str)
        .str.replace(DECORATIONS, '', regex=True)
        .str.replace(thousands, '', regex=False)
        .str.replace(decimal, '.', regex=False))
    cleaned = cleaned.mask(cleaned.isin(MISSING))
    return cleaned, cleaned.apply(pd.to_numeric, errors='coerce')


def _strip_comments(text):
    '''Drop the leading block of '#' lines (metadata) from a table'''
    lines = text.splitlines(True)
    i = 0
    while i < len(lines) and (lines[i].startswith('#') or
                              not lines[i].strip()):
        i += 1
    return ''.join(lines[i:])


def _read_text(source):
    if hasattr(source, 'read'):
        data = source.read()
    else:
        with open(source, 'rb') as f:
            data = f.read()
    if isinstance(data, bytes):
        data = data.decode('utf-8-sig')
    return data


def parse_summary(source, descriptor=None):
    '''
    Parse a delimited table with (threshold, group count, group total)
    columns into a validated TabulatedSummary.

    Args:
        source: path, text stream or byte stream
        descriptor: FormatDescriptor (or plain dict of its keys)

    Returns:
        TabulatedSummary in cumulative form, top bin first

    Raises:
        TableError: malformed rows or violated bin invariants
    '''
    if descriptor is None:
        descriptor = FormatDescriptor.from_dict({})
    elif not isinstance(descriptor, FormatDescriptor):
        descriptor = FormatDescriptor.from_dict(descriptor)

    text = _strip_comments(_read_text(source))
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str,
                            skipinitialspace=True, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise TableError("cannot read table: {}".format(e))

    columns = descriptor['columns']
    if columns is None:
        if frame.shape[1] < 3:
            raise TableError("expected at least three columns, found {}".
                             format(frame.shape[1]))
        columns = list(frame.columns[:3])
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise TableError("missing columns: {}".format(", ".join(missing)))

    cells = frame[columns]
    cleaned, numbers = _to_numbers(cells, descriptor['locale'])
    bad = (numbers.isna() & cleaned.notna()).any(axis=1).to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise TableError("malformed row {}: {}".format(
            i + 1, list(cells.iloc[i])))
    values = numbers.to_numpy(dtype=float).reshape(-1, 3)
    if descriptor['order'] == 'ascending':
        values = values[::-1]
    thresholds, counts, totals = values.T.copy()

    for k in range(len(thresholds)):
        if np.isnan(counts[k]) or np.isnan(totals[k]):
            raise TableError("malformed row for bin {}".format(k + 1),
                             bin_index=k + 1)
        if np.isnan(thresholds[k]) and k != len(thresholds) - 1:
            raise TableError("missing threshold for bin {}".format(k + 1),
                             bin_index=k + 1)

    thresholds = thresholds * descriptor['threshold_multiplier']
    counts = counts * descriptor['count_multiplier']
    totals = totals * descriptor['total_multiplier']

    lower_bound = descriptor['lower_bound']
    if np.isnan(thresholds[-1]):
        if lower_bound is None:
            raise TableError("the bottom bin is open; a lower_bound is "
                             "required", bin_index=len(thresholds))
        thresholds[-1] = lower_bound
    elif lower_bound is not None and lower_bound != thresholds[-1]:
        if lower_bound > thresholds[-1]:
            raise TableError("lower_bound {} exceeds the bottom threshold {}"
                             "".format(lower_bound, thresholds[-1]),
                             bin_index=len(thresholds))
        log.devinfo("Extending the bottom bin from {} down to {}".format(
            thresholds[-1], lower_bound))
        thresholds[-1] = lower_bound

    if descriptor['form'] == 'per_group':
        if np.any(counts < 0):
            k = int(np.nonzero(counts < 0)[0][0])
            raise TableError("negative count in bin {}".format(k + 1),
                             bin_index=k + 1)
        counts = np.cumsum(counts)
        totals = np.cumsum(totals)

    n = None if descriptor['renormalize'] else descriptor['total_population']
    summary = make_summary(thresholds, counts, totals, n)
    log.devinfo("Parsed table with K={} bins, n_K={:.0f}, S_K={:.6g}".format(
        summary.K, summary.cum_counts[-1], summary.cum_sums[-1]))
    return summary


def load_summary(filename, descriptor_file=None, overrides=None):
    '''Parse *filename* using the descriptor file and/or override dict'''
    descriptor = FormatDescriptor.load(descriptor_file, overrides)
    return parse_summary(filename, descriptor)


def data_file(name):
    '''Path of a file shipped in metab/data'''
    return os.path.join(os.path.dirname(__file__), 'data', name)


def load_irs2019():
    '''The 2019 IRS table of returns by size of adjusted gross income'''
    return load_summary(data_file('irs2019.csv'), data_file('irs2019.fmt'))


def to_bin_moments(summary):
    '''
    Empirical bin probabilities and conditional means of *summary*.
    Empty bins get q = 0 and an undefined (NaN) mean.
    '''
    counts = summary.group_counts
    q = counts / summary.n
    return BinMoments(np.array(summary.thresholds, dtype=float), q,
                      summary.group_means, EMPIRICAL)


def population_moments(dist, thresholds):
    '''
    Bin probabilities and conditional means of the distribution *dist* on
    the bins induced by *thresholds* (descending, last one = lower end).

    *dist* needs cdf, sf and pdf methods (a frozen scipy.stats
    distribution works). If it also has ``partial_expectation(a, b)`` the
    closed form is used instead of quadrature.
    '''
    thresholds = np.asarray(thresholds, dtype=float)
    if len(thresholds) < 2 or np.any(np.diff(thresholds) >= 0):
        raise TableError("thresholds must be strictly decreasing, K >= 2")
    K = len(thresholds)
    q = np.zeros(K)
    y = np.full(K, np.nan)
    for k in range(K):
        a = thresholds[k]
        b = np.inf if k == 0 else thresholds[k - 1]
        if dist.cdf(a) < 0.5:
            q[k] = dist.cdf(b) - dist.cdf(a)
        else:
            q[k] = dist.sf(a) - dist.sf(b)
        if q[k] <= 0:
            q[k] = 0.0
            continue
        y[k] = _partial_expectation(dist, a, b) / q[k]
    log.debug("Population moments: q={}, y={}".format(q, y))
    return BinMoments(thresholds.copy(), q, y, POPULATION)


def _natural_scale(dist, a, b):
    '''Income unit of *dist*: its mean, else the widest finite bin edge'''
    try:
        m = float(dist.mean())
    except (AttributeError, TypeError, ValueError):
        m = math.nan
    if math.isfinite(m) and m > 0:
        return m
    edges = [abs(e) for e in (a, b) if math.isfinite(e)]
    return max(edges + [1.0])


def _partial_expectation(dist, a, b):
    if hasattr(dist, 'partial_expectation'):
        return dist.partial_expectation(a, b)
    # integrate on u = x/s so that infinite bins are mapped at unit scale
    s = _natural_scale(dist, a, b)
    res = integrate.quad(lambda u: u * dist.pdf(s * u) * s, a / s, b / s,
                         epsabs=0.0, epsrel=QUAD_RTOL, limit=500,
                         full_output=1)
    value, abserr = s * res[0], s * res[1]
    if len(res) > 3:
        if not abserr <= QUAD_CHECK_RTOL * max(abs(value), 1e-300):
            raise QuadratureError("quadrature on [{}, {}) did not converge: "
                                  "{}".format(a, b, res[3]))
        log.debug("quadrature on [{}, {}): {}".format(a, b, res[3]))
    return value


def _floats(values):
    return [None if not np.isfinite(v) else float(v) for v in values]


def summary_to_json(summary):
    '''Canonical JSON of a TabulatedSummary'''
    return json.dumps({
        'thresholds': _floats(summary.thresholds),
        'cum_counts': _floats(summary.cum_counts),
        'cum_sums': _floats(summary.cum_sums),
        'n': float(summary.n),
        'lower_bound': float(summary.lower_bound),
    }, sort_keys=True)


def summary_from_json(text):
    data = json.loads(text)
    return make_summary(data['thresholds'], data['cum_counts'],
                        data['cum_sums'], data['n'])


def moments_to_json(moments):
    '''Canonical JSON of BinMoments; undefined means become null'''
    return json.dumps({
        'thresholds': _floats(moments.thresholds),
        'lower_bound': moments.lower_bound,
        'q': _floats(moments.q),
        'y': _floats(moments.y),
        'provenance': moments.provenance,
    }, sort_keys=True)


def moments_from_json(text):
    data = json.loads(text)
    y = [np.nan if v is None else v for v in data['y']]
    return BinMoments(np.asarray(data['thresholds'], dtype=float),
                      np.asarray(data['q'], dtype=float),
                      np.asarray(y, dtype=float), data['provenance'])


def summary_frame(summary):
    '''The summary as cumulative, descending DataFrame'''
    return pd.DataFrame({'threshold': summary.thresholds,
                         'cum_count': summary.cum_counts,
                         'cum_sum': summary.cum_sums})


def write_summary_csv(summary, stream):
    '''
    Write *summary* as cumulative, descending CSV which parse_summary
    reads back with the default descriptor.
    '''
    summary_frame(summary).to_csv(stream, index=False, float_format='%.17g')
