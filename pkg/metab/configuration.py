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
Configuration objects for metab

Every configuration is an immutable mapping. Files are either YAML or the
plain ``key=value`` sidecar format used next to input tables; both are read
through PyYAML so that values get their natural types.
'''

import yaml
from collections.abc import Mapping
from logging import getLogger

log = getLogger(__name__)


class ConfigurationError(ValueError):
    '''Raised if any part of the configuration is malformed'''
    pass


class Configuration(Mapping):
    '''
    Base class of all metab configurations.

    Subclasses list their keys in KEYS (required) and OPTIONAL_KEYS and
    their defaults in DEFAULTS, and refine _initialize and _check_sanity.
    '''

    NAME = 'metab configuration'
    KEYS = ()
    OPTIONAL_KEYS = ()
    DEFAULTS = {}

    def __init__(self, conf=None):
        self._conf = yaml.safe_load(yaml.safe_dump(dict(self.DEFAULTS)))
        if conf:
            self._conf.update(_normalize_keys(conf))

    @classmethod
    def load(cls, filename=None, overrides=None):
        '''
        Load a configuration from *filename* (if given) and apply the
        non-None entries of the dict *overrides* on top of it.
        '''
        c = cls()
        if filename:
            log.devinfo("Loading {} from '{}'".format(cls.NAME, filename))
            c._conf.update(c._load(filename))
        if overrides:
            c._conf.update(_normalize_keys(
                dict((k, v) for k, v in overrides.items() if v is not None)))
        c._initialize()
        c._check_sanity()
        return c

    @classmethod
    def from_dict(cls, conf):
        '''Build and validate a configuration from a plain dict'''
        c = cls(conf)
        c._initialize()
        c._check_sanity()
        return c

    def _load(self, filename):
        '''Helper function that checks loading errors and logs them'''
        try:
            with open(filename) as f:
                text = f.read()
        except IOError:
            log.exception("Could not open configuration file '{}'".
                          format(filename))
            raise
        try:
            if _is_key_value(filename, text):
                conf = _parse_key_value(text)
            else:
                conf = yaml.safe_load(text)
        except yaml.YAMLError:
            log.exception("Could not parse configuration file '{}'".
                          format(filename))
            raise
        if conf is None:
            return {}
        if not isinstance(conf, dict):
            log.critical("Configuration file '{}' is not a mapping".
                         format(filename))
            raise ConfigurationError('Malformed configuration file.')
        return _normalize_keys(conf)

    def _initialize(self):
        '''Infer missing values in the configuration'''
        pass

    def _check_sanity(self):
        '''
        Check that the configuration makes sense.
        :raise ConfigurationError
        '''
        for key in self.KEYS:
            if key not in self or self[key] is None:
                log.critical("Required key '{}' missing in {}!".
                             format(key, self.NAME))
                raise ConfigurationError(
                    "Missing configuration key '{}'.".format(key))
        known = set(self.KEYS + self.OPTIONAL_KEYS)
        for key in self:
            if key not in known:
                log.warning("Unknown key '{}' in {}.".format(key, self.NAME))

    def _fail(self, message):
        log.critical(message)
        raise ConfigurationError(message)

    def _positive(self, key, allow_none=False):
        value = self._conf.get(key)
        if value is None and allow_none:
            return
        try:
            value = float(value)
        except (TypeError, ValueError):
            self._fail("Key '{}' must be a number, got {!r}".
                       format(key, self._conf.get(key)))
        if not value > 0:
            self._fail("Key '{}' must be positive, got {}".format(key, value))
        self._conf[key] = value

    def _choice(self, key, choices):
        if self._conf.get(key) not in choices:
            self._fail("Key '{}' must be one of {}, got {!r}".
                       format(key, ", ".join(choices), self._conf.get(key)))

    def as_dict(self):
        '''Return a deep copy as plain dict (for JSON embedding)'''
        return yaml.safe_load(yaml.safe_dump(self._conf))

    def write(self, filename):
        '''Dump the resolved configuration as YAML into *filename*'''
        with open(filename, 'w') as f:
            f.write(str(self))
            f.write("\n")

    # Function for the Configuration object to function as a dict
    def __getitem__(self, key):
        return self._conf[key]

    def __len__(self):
        return len(self._conf)

    def __iter__(self):
        return iter(self._conf)

    def __str__(self):
        '''
        Return a pretty YAML string for display, logging and embedding
        '''
        return "--- # {}\n{}".format(
            self.NAME,
            yaml.safe_dump(self.as_dict(), default_flow_style=None,
                           sort_keys=True).rstrip())


def _normalize_keys(conf):
    '''Command line style keys (lower-bound) become lower_bound'''
    return dict((str(k).replace('-', '_'), v) for k, v in conf.items())


def _is_key_value(filename, text):
    if filename.endswith(('.yaml', '.yml')):
        return False
    lines = [l.strip() for l in text.splitlines()]
    lines = [l for l in lines if l and not l.startswith('#')]
    return bool(lines) and all('=' in l for l in lines)


def _parse_key_value(text):
    '''Parse ``key=value`` lines; values are typed by YAML rules'''
    conf = {}
    for line in text.splitlines():
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, value = line.split('=', 1)
        key = key.strip()
        if not key:
            raise ConfigurationError("Empty key in line '{}'".format(line))
        value = value.strip()
        conf[key] = yaml.safe_load(value) if value else None
    return conf


class FormatDescriptor(Configuration):
    '''
    How an input table is laid out: cumulative or per-group rows, row
    order, unit multipliers, number locale and the bottom-bin lower bound.
    '''

    NAME = 'format descriptor'
    OPTIONAL_KEYS = ('form', 'order', 'total_multiplier', 'count_multiplier',
                     'threshold_multiplier', 'lower_bound', 'renormalize',
                     'locale', 'total_population', 'columns')
    DEFAULTS = {
        'form': 'cumulative',
        'order': 'descending',
        'total_multiplier': 1.0,
        'count_multiplier': 1.0,
        'threshold_multiplier': 1.0,
        'lower_bound': None,
        'renormalize': False,
        'locale': 'us',
        'total_population': None,
        'columns': None,
    }

    FORMS = ('cumulative', 'per_group')
    ORDERS = ('descending', 'ascending')
    LOCALES = ('us', 'eu')

    def _initialize(self):
        for key in ('form', 'order', 'locale'):
            if isinstance(self._conf.get(key), str):
                self._conf[key] = self._conf[key].strip().lower().replace(
                    '-', '_')
        if isinstance(self._conf.get('renormalize'), str):
            self._conf['renormalize'] = \
                self._conf['renormalize'].strip().lower() in ('true', 'yes', '1')

    def _check_sanity(self):
        super(FormatDescriptor, self)._check_sanity()
        self._choice('form', self.FORMS)
        self._choice('order', self.ORDERS)
        self._choice('locale', self.LOCALES)
        for key in ('total_multiplier', 'count_multiplier',
                    'threshold_multiplier'):
            self._positive(key)
        self._positive('total_population', allow_none=True)
        if self['lower_bound'] is not None:
            try:
                self._conf['lower_bound'] = float(self['lower_bound'])
            except (TypeError, ValueError):
                self._fail("lower_bound must be a number, got {!r}".
                           format(self['lower_bound']))
        if not isinstance(self['renormalize'], bool):
            self._fail("renormalize must be true or false")
        columns = self['columns']
        if columns is not None:
            if isinstance(columns, str):
                columns = [c.strip() for c in columns.split(',')]
                self._conf['columns'] = columns
            if len(columns) != 3:
                self._fail("columns must name threshold, count and total "
                           "columns, got {!r}".format(columns))


#: fractile grid of the top-share experiment (top 0.1%, 1%, 5%, ..., 100%)
SHARE_FRACTILES = [0.001, 0.01] + [round(0.05 * i, 2) for i in range(1, 21)]
#: fractile grid of the single-draw density comparison
DENSITY_FRACTILES = ([0.001, 0.005, 0.01, 0.05] +
                     [round(0.05 * i, 2) for i in range(2, 19)] +
                     [0.95, 0.99, 0.995, 0.999, 1.0])
#: top fractiles at which shares are scored
SCORE_FRACTILES = [0.001, 0.01, 0.05] + [round(0.1 * i, 1) for i in range(1, 10)]


class ExperimentConfig(Configuration):
    '''
    Parameters of the Monte-Carlo experiments. The defaults are the
    desk-scale top-share table for the double Pareto model; ``full: true``
    switches to the full replication count and sample sizes.
    '''

    NAME = 'experiment configuration'
    OPTIONAL_KEYS = ('models', 'methods', 'n_list', 'p0_list',
                     'replications', 'seed', 'bk_c', 'fractiles',
                     'eval_quantiles', 'density_models', 'density_n_list',
                     'density_replications', 'density_fractiles',
                     'compare_n', 'full', 'spot_check_rate')
    DEFAULTS = {
        'models': [{'family': 'double_pareto', 'alpha': 2.3, 'beta': 1.1}],
        'methods': ['me', 'piketty'],
        'n_list': [10000, 100000, 1000000],
        'p0_list': SCORE_FRACTILES,
        'replications': 200,
        'seed': 20191231,
        'bk_c': [0.1, 0.5, 1.0, 1.5],
        'fractiles': SHARE_FRACTILES,
        'eval_quantiles': [round(0.05 * i, 2) for i in range(1, 20)],
        'density_models': [{'family': 'lognormal', 'sigma': 1.5},
                           {'family': 'gamma', 'a': 0.5},
                           {'family': 'weibull', 'k': 0.7},
                           {'family': 'double_pareto', 'alpha': 1.5,
                            'beta': 0.5}],
        'density_n_list': [10000, 100000, 1000000],
        'density_replications': 100,
        'density_fractiles': DENSITY_FRACTILES,
        'compare_n': 10000000,
        'full': False,
        'spot_check_rate': 0.01,
    }

    METHODS = ('me', 'bk', 'piketty')
    FAMILIES = ('lognormal', 'gamma', 'weibull', 'double_pareto',
                'exponential')

    def _initialize(self):
        if self['full']:
            self._conf['replications'] = 1000
            self._conf['density_replications'] = 1000
            self._conf['n_list'] = [10000, 100000, 1000000, 10000000]
        for key in ('n_list', 'density_n_list'):
            self._conf[key] = [int(float(n)) for n in self._conf[key]]
        self._conf['compare_n'] = int(float(self._conf['compare_n']))
        self._conf['methods'] = [m.lower() for m in self._conf['methods']]

    def _check_sanity(self):
        super(ExperimentConfig, self)._check_sanity()
        for method in self['methods']:
            if method not in self.METHODS:
                self._fail("Unsupported method '{}'".format(method))
        for key in ('models', 'density_models'):
            for model in self[key]:
                if not isinstance(model, dict) or \
                        model.get('family') not in self.FAMILIES:
                    self._fail("Malformed model entry {!r}".format(model))
        for key in ('n_list', 'density_n_list'):
            if not self[key] or min(self[key]) < 1:
                self._fail("{} must list positive sample sizes".format(key))
        for key in ('p0_list', 'fractiles', 'eval_quantiles',
                    'density_fractiles'):
            values = self[key]
            if not values or any(not 0 < float(p) <= 1 for p in values):
                self._fail("{} must lie in (0, 1]".format(key))
        for key in ('fractiles', 'density_fractiles'):
            if list(self[key]) != sorted(self[key]) or self[key][-1] != 1:
                self._fail("{} must be increasing and end at 1".format(key))
        if int(self['replications']) < 1 or \
                int(self['density_replications']) < 1:
            self._fail("replication counts must be positive")
        if any(float(c) <= 0 for c in self['bk_c']):
            self._fail("bk_c constants must be positive")
        seed = self['seed']
        if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            self._fail("seed must be a 64-bit unsigned integer")
