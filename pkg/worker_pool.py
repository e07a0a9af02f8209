import logging
import queue
import threading
import time

logger = logging.getLogger(__name__)


class TaskWorker(threading.Thread):
    """
    A threaded worker that pulls (index, payload) tasks from a shared queue,
    runs the pool's handler on them and posts (index, outcome) to the results queue.
    """

    def __init__(self, worker_id, handler, task_queue: queue.Queue, results_queue: queue.Queue,
                 status_callback=None):
        super().__init__()
        self.name = f"Worker-{worker_id}"
        self.worker_id = worker_id
        self.handler = handler
        self.task_counter = 0
        self.task_queue = task_queue
        self.results_queue = results_queue
        self.status_callback = status_callback
        self._shutdown = threading.Event()
        self.daemon = True  # Ensures the worker stops when the main program exits

    def run(self):
        logger.debug(f"[{self.name}] ▶️ Worker thread started.")
        while not self._shutdown.is_set():
            try:
                task = self.task_queue.get(timeout=1)
            except queue.Empty:
                continue

            index, payload = task
            try:
                result = self.handler(payload, self.worker_id)
                self.results_queue.put((index, True, result))
                if self.status_callback:
                    self.status_callback("progress", {"worker": self.name, "task": index})
            except Exception as e:
                logger.exception(f"[{self.name}] ❌ Exception during task {index}.")
                self.results_queue.put((index, False, e))
                if self.status_callback:
                    self.status_callback("error", {"worker": self.name, "task": index, "error": str(e)})
            finally:
                self.task_queue.task_done()

            self.task_counter += 1

        logger.debug(f"[{self.name}] 🛑 Worker thread exiting.")

    def shutdown(self):
        self._shutdown.set()


class WorkerPool:
    """
    Pool of TaskWorker threads. Results come back in task-submission order,
    never arrival order, so parallel stages stay deterministic.

    Usage:
        with WorkerPool(handler, num_workers=4) as pool:
            for payload in payloads:
                pool.add_task(payload)
            outcomes = pool.wait_for_completion()
    """

    def __init__(self, handler, num_workers=4, status_callback=None, auto_start=True):
        self.handler = handler
        self.task_queue = queue.Queue()
        self.results_queue = queue.Queue()
        self.status_callback = status_callback
        self.num_workers = max(1, int(num_workers))
        self.workers = []
        self._lock = threading.Lock()
        self._started = False

        # Progress metrics
        self.total_tasks = 0
        self.start_time = None

        if auto_start:
            self.start_workers()

    def start_workers(self):
        with self._lock:
            if self._started:
                logger.warning("⚠️ Workers already started.")
                return
            self.workers = [
                TaskWorker(i, self.handler, self.task_queue, self.results_queue, self.status_callback)
                for i in range(self.num_workers)
            ]
            for worker in self.workers:
                worker.start()
            self._started = True
            logger.debug(f"🚀 {self.num_workers} workers started.")

    def add_task(self, payload):
        if not self._started:
            raise RuntimeError("Workers not started. Call start_workers() first.")
        self.task_queue.put((self.total_tasks, payload))
        self.total_tasks += 1
        if not self.start_time:
            self.start_time = time.time()

    def wait_for_completion(self):
        """
        Block until every queued task is done.

        :return: list of (ok, result_or_exception) in submission order.
        """
        if not self._started:
            raise RuntimeError("Workers not started. Call start_workers() first.")
        self.task_queue.join()
        collected = {}
        while not self.results_queue.empty():
            index, ok, result = self.results_queue.get()
            collected[index] = (ok, result)
        elapsed = time.time() - self.start_time if self.start_time else 0.0
        logger.debug(f"✅ {len(collected)} tasks processed in {elapsed:.2f}s.")
        return [collected[i] for i in sorted(collected)]

    def shutdown(self):
        if not self._started:
            return
        for worker in self.workers:
            worker.shutdown()
        for worker in self.workers:
            worker.join(timeout=5)
            if worker.is_alive():
                logger.warning(f"⚠️ Worker {worker.name} did not shut down gracefully.")
        with self._lock:
            self.workers = []
            self._started = False

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.shutdown()
        return False


def run_in_pool(handler, payloads, num_workers=4):
    """
    Convenience wrapper: run handler(payload, worker_id) over payloads and return
    the results in payload order; the first failure is re-raised after all tasks finish.
    """
    payloads = list(payloads)
    if not payloads:
        return []
    with WorkerPool(handler, num_workers=min(num_workers, len(payloads))) as pool:
        for payload in payloads:
            pool.add_task(payload)
        outcomes = pool.wait_for_completion()
    for ok, result in outcomes:
        if not ok:
            raise result
    return [result for _, result in outcomes]
