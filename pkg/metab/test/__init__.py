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

from contextlib import contextmanager
import sys


class _Redirector(object):
    def write(self, *args):
        pass

    def flush(self):
        pass

    def isatty(self):
        return False


@contextmanager
def hide_stderr():
    '''
    Context manager to temporarily hide stderr
    '''
    old_stderr = sys.stderr
    sys.stderr = _Redirector()
    try:
        yield
    finally:
        sys.stderr = old_stderr


@contextmanager
def hide_output():
    '''
    Context manager to temporarily hide stderr and stdout
    '''
    old_stderr = sys.stderr
    old_stdout = sys.stdout
    sys.stderr = _Redirector()
    sys.stdout = _Redirector()
    try:
        yield
    finally:
        sys.stderr = old_stderr
        sys.stdout = old_stdout
