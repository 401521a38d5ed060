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

import argparse
import json
import unittest

from metab.test import hide_output
from metab.cli import (get_parser, command_config, exit_code_for, error_json,
                       EXIT_INPUT, EXIT_INFEASIBLE, EXIT_CONVERGENCE)
from metab.configuration import ConfigurationError
from metab.mecore import InfeasibleBinError
from metab.smoothing import ConvergenceError, EmptyBoxError
from metab.tabio import TableError


class TestCLI(unittest.TestCase):
    '''Test that the command line returns a sensible help'''

    def testCLI(self):
        '''Check that the parser deals with common commands'''
        parser = get_parser()
        self.assertIsInstance(parser, argparse.ArgumentParser)
        with hide_output():
            self.assertRaises(SystemExit, parser.parse_args, ["--help"])
            self.assertRaises(SystemExit, parser.parse_args, [])
            self.assertRaises(SystemExit, parser.parse_args, ["fit"])
        parser.parse_args(["--loglevel", "info", "test"])
        args = parser.parse_args(["-j", "2", "fit", "-i", "t.csv", "--smooth",
                                  "--tk-fix", "0", "--grid-log"])
        self.assertEqual(args.jobs, 2)
        self.assertTrue(args.smooth)
        self.assertEqual(args.tk_fix, 0.0)

    def testLists(self):
        '''Comma separated fractiles and bandwidth constants'''
        args = get_parser().parse_args(["shares", "-i", "t.csv", "--fractiles",
                                        "0.01,0.1,1", "--bk-c", "0.5"])
        self.assertEqual(args.fractiles, [0.01, 0.1, 1.0])
        self.assertEqual(args.bk_c, [0.5])
        with hide_output():
            self.assertRaises(SystemExit, get_parser().parse_args,
                              ["shares", "-i", "t.csv", "--fractiles", "a,b"])

    def testExclusiveFlags(self):
        '''Inconsistent flag combinations fail before any computation'''
        parser = get_parser()
        for argv in (["fit", "-i", "t.csv", "--tk-fix", "0"],
                     ["shares", "-i", "t.csv", "--total-income", "10"],
                     ["shares", "-i", "t.csv", "--renormalize",
                      "--total-population", "10"],
                     ["shares", "-i", "t.csv", "--fractiles", "0.5,2"],
                     ["simulate", "--no-shares"]):
            args = parser.parse_args(argv)
            self.assertRaises(ConfigurationError, command_config, args)

    def testCommandConfig(self):
        args = get_parser().parse_args(["--seed", "7", "simulate", "--full",
                                        "--method", "me", "--method", "bk"])
        conf = command_config(args)
        self.assertEqual(conf.seed, 7)
        self.assertTrue(conf.full)
        self.assertEqual(conf.method, ['me', 'bk'])

    def testExitCodes(self):
        '''Exceptions map to the documented exit codes'''
        self.assertEqual(exit_code_for(TableError("x")), EXIT_INPUT)
        self.assertEqual(exit_code_for(ConfigurationError("x")), EXIT_INPUT)
        self.assertEqual(exit_code_for(EmptyBoxError("x")), EXIT_INPUT)
        self.assertEqual(exit_code_for(InfeasibleBinError("x", 3)),
                         EXIT_INFEASIBLE)
        self.assertEqual(exit_code_for(ConvergenceError("x")),
                         EXIT_CONVERGENCE)
        self.assertIsNone(exit_code_for(KeyError("x")))

    def testErrorJson(self):
        data = json.loads(error_json(InfeasibleBinError("bad bin", 4), 3))
        self.assertEqual(data, {'error': 'InfeasibleBinError',
                                'message': 'bad bin', 'exit_code': 3,
                                'bin_index': 4})
