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
Process pool for replications, atomic output files and signal handling
'''

from logging import getLogger; log = getLogger(__name__)
import os
import signal
import sys
import traceback
from collections import OrderedDict, namedtuple
from contextlib import contextmanager
from multiprocessing import Process, Queue
from queue import Empty
from tempfile import NamedTemporaryFile
from threading import enumerate as threading_enumerate
from time import sleep

from progressbar import ProgressBar, Percentage, Bar, ETA

THREADS_ENV = 'METAB_THREADS'

# Represents a job submitted to the batch pool.
BatchJobTuple = namedtuple('BatchJobTuple', ['id', 'func', 'args', 'kwargs'])


class BatchJob(BatchJobTuple):
    def __init__(self, *args, **kwargs):
        super(BatchJob, self).__init__()
        self.done = False
        self.submitted = False


class BatchJobPool(object):
    '''
    Pool of N worker processes computing independent jobs.

    All functions, args and kwargs must be pickleable, i.e. functions have
    to be defined at top level of a module. Jobs are added with
    ``pool.add(func, args, kwargs)``, which returns a job id; ``pool.join()``
    waits for all of them and returns their results as an ordered dict
    keyed by job id. The order of the results never depends on the
    scheduling, so reductions over them are deterministic.

    With a single core the jobs run inline when join() is called.
    If a job raises, join() terminates the workers and raises that
    exception (or a generic Exception carrying its traceback text).
    '''

    def __init__(self, n_cores, progress=None):
        self.n_cores = max(1, int(n_cores))
        self.progress = progress
        self.next_id = 1
        self.jobs = OrderedDict()
        self.results = {}

        self.work_queue, self.done_queues, self.workers = Queue(), [], []
        if self.n_cores > 1:
            for i in range(self.n_cores):
                dq = Queue()
                w = Process(target=batchjob_worker_function,
                            args=(self.work_queue, dq))
                self.done_queues.append(dq)
                self.workers.append(w)
                w.daemon = True
                w.start()

    def add(self, func, args, kwargs=None):
        '''
        Add a job that computes func(*args, **kwargs) and return its id.
        '''
        job_id = self.next_id
        self.next_id += 1
        self.jobs[job_id] = BatchJob(job_id, func, tuple(args),
                                     dict(kwargs or {}))
        return job_id

    def _progressbar(self):
        if not self.progress:
            return None
        widgets = ['{}: '.format(self.progress), Percentage(), ' ', Bar(),
                   ' ', ETA()]
        return ProgressBar(widgets=widgets, max_value=len(self.jobs)).start()

    def join(self):
        '''
        Run all jobs, wait for them to finish and return the results.
        '''
        pbar = self._progressbar()
        try:
            if self.n_cores == 1:
                self._run_inline(pbar)
            else:
                self._run_parallel(pbar)
        finally:
            if pbar:
                pbar.finish()
            self._terminate()
        return OrderedDict((i, self.results[i]) for i in self.jobs)

    def _run_inline(self, pbar):
        for n, job in enumerate(self.jobs.values(), 1):
            log.debug("Starting job id {}".format(job.id))
            self.results[job.id] = job.func(*job.args, **job.kwargs)
            job.done = True
            if pbar:
                pbar.update(n)

    def _run_parallel(self, pbar):
        for job in self.jobs.values():
            self.work_queue.put(job)
            job.submitted = True
        n_done = 0
        while n_done < len(self.jobs):
            got_result = False
            for dq in self.done_queues:
                try:
                    res = dq.get(block=False)
                except Empty:
                    continue
                got_result = True
                if isinstance(res, Exception):
                    log.fatal("Uncaught exception in worker process:")
                    raise res
                job_id, value = res
                log.debug("Job {} has finished!".format(job_id))
                self.results[job_id] = value
                self.jobs[job_id].done = True
                n_done += 1
                if pbar:
                    pbar.update(n_done)
            if not got_result:
                for w in self.workers:
                    if not w.is_alive():
                        raise Exception("A worker died unexpectedly!")
                sleep(0.005)

    def _terminate(self):
        if not self.workers:
            return
        log.devinfo("Terminating workers...")
        for w in self.workers:
            w.terminate()
        for w in self.workers:
            w.join()
        self.workers = []
        log.devinfo("Workers terminated.")


def batchjob_worker_function(work_queue, done_queue):
    '''
    Worker function executed in a separate process.
    Pulls jobs off the work queue and puts (job id, result) onto the done
    queue. An exception is put on the done queue instead of a result, which
    makes the main process raise it.
    '''
    signal.signal(signal.SIGINT, handle_sigint_silent)
    while True:
        try:
            job = work_queue.get(block=True)
        except (ValueError, EOFError, OSError):
            # the main process went away before we did
            return
        try:
            done_queue.put((job.id, job.func(*job.args, **job.kwargs)))
        except Exception as e:
            log.debug("Failed job id {}".format(job.id))
            done_queue.put(Exception(e.__class__.__name__ + ": " +
                                     str(e) + "\n" + traceback.format_exc()))


def worker_count(jobs=None):
    '''
    Number of worker processes to use: *jobs* if given, else the value of
    the METAB_THREADS environment variable, else the number of CPUs. The
    environment variable always acts as a cap.
    '''
    cap = os.environ.get(THREADS_ENV)
    try:
        cap = int(cap) if cap else None
    except ValueError:
        log.warning("Ignoring malformed {}={!r}".format(THREADS_ENV, cap))
        cap = None
    n = int(jobs) if jobs else (cap or os.cpu_count() or 1)
    if cap:
        n = min(n, cap)
    return max(1, n)


@contextmanager
def atomic_write(filename, mode='w'):
    '''
    Context manager yielding a file object whose contents replace
    *filename* only if the block completes without an exception.
    '''
    directory = os.path.dirname(os.path.abspath(filename))
    tmp = NamedTemporaryFile(mode=mode, dir=directory, delete=False,
                             prefix='.' + os.path.basename(filename) + '.')
    try:
        yield tmp
        tmp.flush()
        os.fsync(tmp.fileno())
        tmp.close()
        os.replace(tmp.name, filename)
    except BaseException:
        tmp.close()
        os.unlink(tmp.name)
        raise


def get_stack_dump():
    '''Return the stacks of all threads as a list of lines'''
    id2name = dict([(th.ident, th.name) for th in threading_enumerate()])
    code = ["Stack dump:"]
    for threadId, stack in sys._current_frames().items():
        code.append("")
        code.append("# Thread: %s(%d)" % (id2name.get(threadId, ""), threadId))
        for filename, lineno, name, line in traceback.extract_stack(stack):
            code.append('File: "%s", line %d, in %s' % (filename, lineno, name))
            if line:
                code.append("  %s" % (line.strip()))
    return code


def handle_sigint(signum, frame):
    '''Log a stack dump and leave on CTRL+C'''
    log.error("CTRL-C pressed!")
    for line in get_stack_dump():
        log.debug(line)
    sys.exit(130)


def handle_sigint_silent(signum, frame):
    '''Silently quit on CTRL+C; used by worker processes'''
    os._exit(1)


def install_signal_handlers():
    signal.signal(signal.SIGINT, handle_sigint)
