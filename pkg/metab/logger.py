## This file is part of metab. metab is free software: you can
## redistribute it and/or modify it under the terms of the GNU General Public
## License as published by the Free Software Foundation, version 2.
##
## This program is distributed in the hope that it will be useful, but WITHOUT
## ANY WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS
## FOR A PARTICULAR PURPOSE.  See the GNU General Public License for more
## details.
##
## You should have received a copy of the GNU General Public License
## along with this program; if not, write to the Free Software
## Foundation, Inc., 59 Temple Place, Suite 330, Boston, MA  02111-1307  USA
'''
Root logger of the metab package.

Importing this module sets up the logger 'metab' with a console handler on
stderr, so that the CSV and JSON results written to stdout stay clean. When
stderr is a terminal the level names are coloured.

Besides the usual levels there is DEVINFO (15), used for per-fit summaries
that are too chatty for INFO but far less noisy than the per-iteration
DEBUG output of the solvers.
'''
import logging
import os
from copy import copy

DEVINFO_LEVEL = 15
logging.DEVINFO = DEVINFO_LEVEL
logging.addLevelName(DEVINFO_LEVEL, "DEVINFO")

LOG_LEVELS = ('debug', 'devinfo', 'info', 'warning', 'error')


def set_log_level(level_string):
    '''
    Change the level of the console handler to *level_string*, one of
    LOG_LEVELS.
    '''
    console_handler.setLevel(_loglevel_from_string(level_string))


def start_logfile(filename, level_string):
    '''
    Mirror all messages at or above *level_string* into *filename*.
    '''
    stream = open(filename, 'w')
    logfile_handler = _get_log_handler(stream)
    logfile_handler.setLevel(_loglevel_from_string(level_string))
    log.addHandler(logfile_handler)
    logfile_handlers[filename] = logfile_handler
    log.devinfo("Opened logfile '{}' with log level '{}'"
                "".format(filename, level_string))


def stop_logfile(filename):
    '''Stop logging to the log file *filename*'''
    handler = logfile_handlers.pop(filename)
    handler.flush()
    log.removeHandler(handler)
    handler.close()
    log.devinfo("Stopped logging into logfile '{}'".format(filename))

# ANSI sequences for coloured output
RESET_SEQ = "\033[0m"
COLOR_SEQ = "\033[1;%dm"
BOLD_SEQ = "\033[1m"

RED, GREEN, YELLOW, BLUE, WHITE = 1, 2, 3, 4, 7

COLORS = {
    'DEBUG': BLUE,
    'DEVINFO': WHITE,
    'INFO': GREEN,
    'WARNING': YELLOW,
    'ERROR': RED,
    'CRITICAL': RED,
}

logfile_handlers = {}


def _insert_seqs(message):
    '''Replace the $RESET and $BOLD pseudo-variables by ANSI sequences.'''
    return message.replace("$RESET", RESET_SEQ).replace("$BOLD", BOLD_SEQ)


def _remove_seqs(message):
    '''Strip the $RESET and $BOLD pseudo-variables from a message.'''
    return message.replace("$RESET", "").replace("$BOLD", "")


class _ColoredFormatter(logging.Formatter):
    '''Formatter that colours the level name of each record.'''
    def format(self, record):
        levelname = record.levelname
        if levelname in COLORS:
            color_seq = COLOR_SEQ % (30 + COLORS[levelname])
            # other handlers must still see the plain level name
            record = copy(record)
            record.levelname = color_seq + levelname + RESET_SEQ
        return logging.Formatter.format(self, record)


def _loglevel_from_string(level_string):
    '''Converts a log level name from e.g. the command line into a number'''
    if level_string.lower() not in LOG_LEVELS:
        raise ValueError("Unknown log level '{}'".format(level_string))
    return getattr(logging, level_string.upper())


def _get_log_handler(stream=None):
    '''
    Return a handler writing to *stream* (stderr by default). Colour is only
    used if the stream is a TTY, since stderr may have been redirected.
    '''
    handler = logging.StreamHandler(stream=stream)
    FORMAT = ("%(asctime)s [$BOLD%(name)s$RESET] %(processName)s "
              "%(levelname)s: %(message)s")
    datefmt = '%Y-%m-%d %H:%M:%S'

    if hasattr(handler.stream, "fileno"):
        try:
            is_tty = os.isatty(handler.stream.fileno())
        except (OSError, ValueError):
            # e.g. io.StringIO or a replaced sys.stderr
            is_tty = False
    else:
        is_tty = False
    if is_tty:
        handler.setFormatter(_ColoredFormatter(_insert_seqs(FORMAT),
                                               datefmt=datefmt))
    else:
        handler.setFormatter(logging.Formatter(_remove_seqs(FORMAT),
                                               datefmt=datefmt))
    return handler

# The console level is overwritten by the command line parsing
console_handler = _get_log_handler()
console_handler.setLevel(logging.INFO)


class DevInfoLogger(logging.getLoggerClass()):
    def devinfo(self, msg, *args, **kwargs):
        if self.isEnabledFor(DEVINFO_LEVEL):
            self._log(DEVINFO_LEVEL, msg, args, **kwargs)

logging.setLoggerClass(DevInfoLogger)
log = logging.getLogger("metab")
log.addHandler(console_handler)
# pass everything on; the handlers apply their own levels
log.setLevel(1)
log.propagate = False
