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
Command-line interface driver for the metab package

Provides the sub-commands fit, shares, simulate, moments and test. Every
output file starts with metadata (version, resolved configuration, seed)
and is written atomically; errors end the program with a fixed exit code
and a JSON line on stderr.
'''

import argparse
import json
import os
import sys
import unittest
from collections import namedtuple

import numpy as np
import pandas as pd

from metab import __version__
from metab.baselines import BKKernelEstimate, ParetoInterp, bk_bandwidth
from metab.configuration import (ConfigurationError, ExperimentConfig,
                                 FormatDescriptor, SHARE_FRACTILES)
from metab.dist import (CoverageError, ExternalTotals, default_grid, gini,
                        log_pdf_grid, lorenz_frame, mean, pdf_grid,
                        shares_frame)
from metab.logger import set_log_level, start_logfile, log
from metab.mecore import InfeasibleBinError, density_to_dict, fit_me_density
from metab.smoothing import (ConvergenceError, EmptyBoxError,
                             smooth_thresholds, smoothed_to_dict)
from metab.tabio import TableError, parse_summary, to_bin_moments
from metab.util import atomic_write, install_signal_handlers, worker_count

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_CONVERGENCE = 4

#: exception classes and the exit codes they map to, most specific first
EXIT_CODES = (
    (InfeasibleBinError, EXIT_INFEASIBLE),
    (ConvergenceError, EXIT_CONVERGENCE),
    (TableError, EXIT_INPUT),
    (ConfigurationError, EXIT_INPUT),
    (EmptyBoxError, EXIT_INPUT),
    (CoverageError, EXIT_INPUT),
    (OSError, EXIT_INPUT),
)

CommandConfig = namedtuple('CommandConfig', [
    'command', 'input', 'output_dir', 'format', 'overrides', 'smooth',
    'tk_fix', 'grid_points', 'grid_log', 'fractiles', 'method', 'bk_c',
    'totals', 'experiment', 'seed', 'full', 'density_rmse',
    'density_compare', 'no_shares', 'jobs'])


def _float_list(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma separated list of "
                                         "numbers, got '{}'".format(text))


def get_parser():
    parser = argparse.ArgumentParser(prog='metab',
                description='Maximum entropy densities from tabulated data')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    parser.add_argument('-l', '--loglevel', help='Choose the logging level',
                choices=['debug', 'devinfo', 'info', 'warning', 'error'],
                default='info')
    parser.add_argument('-f', '--logfile', help='Save all debug logging into the'
                ' given log file')
    parser.add_argument('-j', '--jobs', type=int, default=None,
                help='Number of processes to use (default: METAB_THREADS or '
                'all cores)')
    parser.add_argument('--seed', type=int, default=None,
                help='Master random seed')

    table = argparse.ArgumentParser(add_help=False)
    table.add_argument('-i', '--input', required=True,
                       help='Table file (threshold, count, total columns)')
    table.add_argument('--format', help='Format descriptor file (key=value '
                       'lines or YAML)')
    table.add_argument('--lower-bound', type=float,
                       help='Lower end of the bottom bin')
    table.add_argument('--renormalize', action='store_true', default=None,
                       help='Normalize the bin masses to sum to one')
    table.add_argument('--total-population', type=float,
                       help='External number of units the counts refer to')
    table.add_argument('-o', '--output-dir', default='.',
                       help='Directory to write results into')

    smoothing = argparse.ArgumentParser(add_help=False)
    smoothing.add_argument('--smooth', action='store_true',
                           help='Also fit with thresholds re-optimized for '
                           'a continuous density')
    smoothing.add_argument('--tk-fix', type=float,
                           help='Bottom threshold held fixed while smoothing '
                           '(default: the table\'s bottom threshold)')

    sub_parser = parser.add_subparsers(dest='command', help='select action')
    sub_parser.required = True

    fit_parser = sub_parser.add_parser('fit', parents=[table, smoothing],
                                       help='Fit the maximum entropy density')
    fit_parser.set_defaults(func=cmd_fit)
    fit_parser.add_argument('--grid-points', type=int, default=200,
                            help='Number of points of the pdf/cdf grid')
    fit_parser.add_argument('--grid-log', action='store_true',
                            help='Also emit the density of log income')

    shares_parser = sub_parser.add_parser('shares', parents=[table, smoothing],
                                          help='Top income shares, Lorenz '
                                          'curve and Gini coefficient')
    shares_parser.set_defaults(func=cmd_shares)
    shares_parser.add_argument('--method', choices=['me', 'bk', 'piketty'],
                               default='me', help='Estimator to use')
    shares_parser.add_argument('--fractiles', type=_float_list,
                               default=list(SHARE_FRACTILES),
                               help='Comma separated top fractiles')
    shares_parser.add_argument('--bk-c', type=_float_list, default=[1.0],
                               help='Bandwidth constant of the kernel '
                               'estimator (first value is used)')
    shares_parser.add_argument('--total-income', type=float,
                               help='External total income shares refer to '
                               '(needs --total-population)')

    sim_parser = sub_parser.add_parser('simulate',
                                       help='Run the Monte-Carlo experiments')
    sim_parser.set_defaults(func=cmd_simulate)
    sim_parser.add_argument('-c', '--experiment',
                            help='Experiment configuration (YAML)')
    sim_parser.add_argument('-o', '--output-dir', default='.',
                            help='Directory to write results into')
    sim_parser.add_argument('--full', action='store_true', default=None,
                            help='Full replication count and sample sizes')
    sim_parser.add_argument('--method', action='append',
                            choices=['me', 'bk', 'piketty'],
                            help='Estimator to score (repeatable)')
    sim_parser.add_argument('--bk-c', type=_float_list,
                            help='Bandwidth constants of the kernel estimator')
    sim_parser.add_argument('--density-rmse', action='store_true',
                            help='Also run the density RMSE experiment')
    sim_parser.add_argument('--density-compare', action='store_true',
                            help='Also emit the single-draw density '
                            'comparison')
    sim_parser.add_argument('--no-shares', action='store_true',
                            help='Skip the top-share experiment')

    moments_parser = sub_parser.add_parser('moments', parents=[table],
                                           help='Dump the bin moments')
    moments_parser.set_defaults(func=cmd_moments)

    test_parser = sub_parser.add_parser('test', help='Run tests')
    test_parser.set_defaults(func=cmd_test)
    test_parser.add_argument('-p', '--pattern', default="*",
                help='run only tests matching the given pattern')
    test_parser.add_argument('-u', '--unit', action='store_true',
                help='run only unit tests')
    return parser


def command_config(args):
    '''
    Resolve and check the parsed arguments before anything is computed.
    :raise ConfigurationError
    '''
    get = lambda name, default=None: getattr(args, name, default)
    overrides = {'lower_bound': get('lower_bound'),
                 'renormalize': get('renormalize'),
                 'total_population': get('total_population')}
    if get('tk_fix') is not None and not get('smooth'):
        raise ConfigurationError("--tk-fix requires --smooth")
    if get('total_income') is not None and get('total_population') is None:
        raise ConfigurationError("--total-income requires --total-population")
    if get('renormalize') and get('total_population') is not None:
        raise ConfigurationError("--renormalize and --total-population "
                                 "exclude each other")
    if get('grid_points') is not None and get('grid_points') < 2:
        raise ConfigurationError("--grid-points must be at least 2")
    for p in get('fractiles') or []:
        if not 0 < p <= 1:
            raise ConfigurationError("fractile {} not in (0, 1]".format(p))
    if get('bk_c') is not None and any(c <= 0 for c in get('bk_c')):
        raise ConfigurationError("--bk-c constants must be positive")
    if get('no_shares') and not (get('density_rmse') or
                                 get('density_compare')):
        raise ConfigurationError("--no-shares leaves nothing to simulate")
    totals = None
    if get('total_income') is not None:
        totals = (get('total_population'), get('total_income'))
    return CommandConfig(
        command=args.command, input=get('input'),
        output_dir=get('output_dir', '.'), format=get('format'),
        overrides=overrides, smooth=bool(get('smooth')),
        tk_fix=get('tk_fix'), grid_points=get('grid_points'),
        grid_log=bool(get('grid_log')), fractiles=get('fractiles'),
        method=get('method'), bk_c=get('bk_c'), totals=totals,
        experiment=get('experiment'), seed=get('seed'), full=get('full'),
        density_rmse=bool(get('density_rmse')),
        density_compare=bool(get('density_compare')),
        no_shares=bool(get('no_shares')), jobs=get('jobs'))


def _metadata(conf, resolved=None, seed=None):
    if seed is None:
        seed = conf.seed
    data = dict(conf._asdict())
    data.pop('command')
    if resolved is not None:
        data['resolved'] = resolved
    return {'version': __version__, 'command': conf.command,
            'config': data, 'seed': seed}


def _output_path(conf, name):
    if not os.path.isdir(conf.output_dir):
        os.makedirs(conf.output_dir)
    return os.path.join(conf.output_dir, name)


def write_csv(filename, frame, metadata):
    '''CSV with leading '#' metadata lines, written atomically'''
    with atomic_write(filename) as f:
        f.write("# metab {}\n".format(metadata['version']))
        f.write("# command: {}\n".format(metadata['command']))
        f.write("# config: {}\n".format(json.dumps(metadata['config'],
                                                   sort_keys=True)))
        f.write("# seed: {}\n".format(json.dumps(metadata['seed'])))
        frame.to_csv(f, index=False, float_format='%.17g')
    log.devinfo("Wrote '{}'".format(filename))


def write_json(filename, data, metadata):
    data = dict(data)
    data['metadata'] = metadata
    with atomic_write(filename) as f:
        json.dump(data, f, sort_keys=True, indent=1)
        f.write("\n")
    log.devinfo("Wrote '{}'".format(filename))


def _load(conf):
    '''The summary table and the resolved format descriptor'''
    descriptor = FormatDescriptor.load(conf.format, conf.overrides)
    summary = parse_summary(conf.input, descriptor)
    log.info("Loaded table '{}' with K={} bins and n={:g}".format(
        conf.input, summary.K, summary.n))
    return summary, descriptor


def _fit(conf, summary):
    '''The ME fit and, with --smooth, the smoothed fit'''
    moments = to_bin_moments(summary)
    density = fit_me_density(moments)
    smoothed = None
    if conf.smooth:
        tk_fix = summary.lower_bound if conf.tk_fix is None else conf.tk_fix
        smoothed = smooth_thresholds(moments, tk_fix)
        log.info("Smoothed fit: {} iterations, largest jump {:.3g}".format(
            smoothed.iterations, smoothed.max_jump()))
    return moments, density, smoothed


def _grid_frames(conf, d, prefix, meta):
    ys = default_grid(d, conf.grid_points)
    write_csv(_output_path(conf, prefix + 'pdf.csv'), pdf_grid(d, ys), meta)
    if conf.grid_log:
        positive = ys[ys > 0]
        xs = np.linspace(np.log(positive[0]), np.log(positive[-1]),
                         conf.grid_points)
        write_csv(_output_path(conf, prefix + 'log_pdf.csv'),
                  log_pdf_grid(d, xs), meta)


def cmd_fit(conf):
    '''Dispatch the ``fit`` command.'''
    summary, descriptor = _load(conf)
    moments, density, smoothed = _fit(conf, summary)
    meta = _metadata(conf, descriptor.as_dict())
    write_json(_output_path(conf, 'density.json'), density_to_dict(density),
               meta)
    _grid_frames(conf, density, '', meta)
    if smoothed is not None:
        write_json(_output_path(conf, 'smoothed.json'),
                   smoothed_to_dict(smoothed), meta)
        _grid_frames(conf, smoothed.density, 'smoothed_', meta)
    return EXIT_OK


def cmd_shares(conf):
    '''Dispatch the ``shares`` command.'''
    summary, descriptor = _load(conf)
    meta = _metadata(conf, descriptor.as_dict())
    totals = None
    if conf.totals:
        totals = ExternalTotals(conf.totals[0], conf.totals[1], summary.n)
    fractiles = conf.fractiles
    result = {'method': conf.method}
    if conf.method == 'piketty':
        interp = ParetoInterp.from_summary(summary, totals)
        rows = []
        for p in fractiles:
            income, tie = interp.top_income(p)
            rows.append({'p': p, 'top_share': income / interp.total,
                         'tie': tie})
        shares = pd.DataFrame(rows, columns=['p', 'top_share', 'tie'])
    elif conf.method == 'bk':
        moments = to_bin_moments(summary)
        h = bk_bandwidth(moments, conf.bk_c[0], summary.n)
        est = BKKernelEstimate(moments, h)
        shares = pd.DataFrame({'p': fractiles,
                               'top_share': [est.top_share(p)
                                             for p in fractiles]},
                              columns=['p', 'top_share'])
        result['bandwidth'] = h
    else:
        _, density, smoothed = _fit(conf, summary)
        d = smoothed.density if smoothed is not None else density
        shares = shares_frame(d, fractiles, totals)
        grid = [i / 100.0 for i in range(101)]
        write_csv(_output_path(conf, 'lorenz.csv'),
                  lorenz_frame(d, grid, totals), meta)
        result['mean'] = mean(d)
        if abs(d.total_mass - 1.0) <= 1e-9:
            result['gini'] = gini(d)
        else:
            log.warning("Table covers mass {:.6g}; Gini not computed".format(
                d.total_mass))
        result['smoothed'] = smoothed is not None
    write_csv(_output_path(conf, 'shares.csv'), shares, meta)
    write_json(_output_path(conf, 'summary.json'), result, meta)
    for p, s in zip(shares['p'], shares['top_share']):
        log.info("Top {:g}: {:.6f}".format(p, s))
    return EXIT_OK


def cmd_moments(conf):
    '''Dispatch the ``moments`` command.'''
    summary, descriptor = _load(conf)
    moments = to_bin_moments(summary)
    meta = _metadata(conf, descriptor.as_dict())
    frame = pd.DataFrame({'threshold': moments.thresholds, 'q': moments.q,
                          'y': moments.y}, columns=['threshold', 'q', 'y'])
    write_csv(_output_path(conf, 'moments.csv'), frame, meta)
    write_json(_output_path(conf, 'moments.json'), {
        'thresholds': [float(t) for t in moments.thresholds],
        'lower_bound': moments.lower_bound,
        'q': [float(q) for q in moments.q],
        'y': [None if not np.isfinite(y) else float(y) for y in moments.y],
        'provenance': moments.provenance}, meta)
    return EXIT_OK


def cmd_simulate(conf):
    '''Dispatch the ``simulate`` command.'''
    from metab import simlab
    overrides = {'seed': conf.seed, 'full': conf.full,
                 'methods': conf.method, 'bk_c': conf.bk_c}
    experiment = ExperimentConfig.load(conf.experiment, overrides)
    log.info("Experiment configuration:\n{}".format(experiment))
    jobs = worker_count(conf.jobs)
    meta = _metadata(conf, experiment.as_dict(), experiment['seed'])
    progress = sys.stderr.isatty()

    if not conf.no_shares:
        report = simlab.run_experiment(experiment, jobs, progress)
        frame = report.to_frame()
        write_csv(_output_path(conf, 'simulation.csv'), frame, meta)
        for stat in ('bias', 'rmse'):
            table = report.to_table(stat).reset_index()
            table.columns = [str(c) for c in table.columns]
            write_csv(_output_path(conf, 'simulation_{}.csv'.format(stat)),
                      table, meta)
        write_json(_output_path(conf, 'simulation.json'), report.to_dict(),
                   meta)
    if conf.density_rmse:
        frame = simlab.density_rmse_experiment(experiment, jobs, progress)
        write_csv(_output_path(conf, 'density_rmse.csv'), frame, meta)
    if conf.density_compare:
        frame = simlab.density_comparison(experiment)
        write_csv(_output_path(conf, 'density_compare.csv'), frame, meta)
    return EXIT_OK


def cmd_test(args):
    '''Sub-command handler for the ``test`` command.'''
    unit_only = args.unit
    pattern = args.pattern
    test_path = os.path.join(os.path.dirname(__file__), 'test')

    print('\n===== running unittests =====\n')
    tests = unittest.TestLoader().discover(os.path.join(test_path, 'unit'),
        pattern='test_{}.py'.format(pattern), top_level_dir=test_path)
    unit_result = unittest.TextTestRunner(verbosity=1).run(tests)
    unit_success = not (unit_result.failures or unit_result.errors)
    if unit_only:
        if unit_success:
            print('\n===== unit tests succeeded :) =====')
        else:
            print('\n===== unit tests failed :( =====')
        return 0 if unit_success else 1

    print('\n===== running integration tests =====\n')
    tests = unittest.TestLoader().discover(os.path.join(test_path, 'integration'),
        pattern='test_{}.py'.format(pattern), top_level_dir=test_path)
    int_result = unittest.TextTestRunner(verbosity=1).run(tests)
    int_success = not (int_result.failures or int_result.errors)

    if unit_success and int_success:
        print('\n===== All integration and unit tests succeeded :) =====')
    else:
        print('\n===== Some unit or integration tests failed :( =====')
        for kind, result in (('unit', unit_result),
                             ('integration', int_result)):
            for fail in result.failures + result.errors:
                print("Failed {} test: {}".format(kind, fail[0]))
                print("        Result: {}\n\n".format(fail[1]))
    return 0 if unit_success and int_success else 1


def exit_code_for(error):
    '''Exit code of an exception raised by a sub-command, None if unknown'''
    for cls, code in EXIT_CODES:
        if isinstance(error, cls):
            return code
    return None


def error_json(error, code):
    return json.dumps({'error': error.__class__.__name__,
                       'message': str(error),
                       'exit_code': code,
                       'bin_index': getattr(error, 'bin_index', None)},
                      sort_keys=True)


def run(argv):
    parser = get_parser()
    # Note: The first argument of argv is the name of the command
    args = parser.parse_args(argv[1:])
    set_log_level(args.loglevel)
    if args.logfile:
        start_logfile(args.logfile, 'debug')
    if args.command == 'test':
        return args.func(args)
    try:
        conf = command_config(args)
        return args.func(conf)
    except Exception as e:
        code = exit_code_for(e)
        if code is None:
            raise
        log.error("{}: {}".format(e.__class__.__name__, e))
        sys.stderr.write(error_json(e, code) + "\n")
        return code


def main():
    install_signal_handlers()
    return run(sys.argv)
