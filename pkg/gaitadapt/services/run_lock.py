"""Single-writer lock file for run directories."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from types import TracebackType

from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_delay, wait_fixed

from gaitadapt.config.settings import get_config
from gaitadapt.errors.exceptions import RunLockedError

logger = logging.getLogger(__name__)

LOCK_NAME = ".lock"


class _LockHeld(Exception):
    pass


class RunLock:
    """
    Exclusive `.lock` file holding the writer's PID.

    Acquisition is retried every `lock_poll_seconds` until
    `lock_timeout_seconds` have passed, then RunLockedError is raised.
    """

    def __init__(
        self,
        run_dir: Path,
        timeout: float | None = None,
        poll: float | None = None,
    ) -> None:
        config = get_config()
        self.path = run_dir / LOCK_NAME
        self.timeout = config.lock_timeout_seconds if timeout is None else timeout
        self.poll = config.lock_poll_seconds if poll is None else poll
        self._held = False

    def _break_if_stale(self) -> bool:
        """Remove a lock whose holder process no longer exists."""
        try:
            pid = int(self.path.read_text().strip())
        except (FileNotFoundError, ValueError):
            # Missing, or the holder has not written its PID yet
            return False
        if pid <= 0:
            return False
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            logger.warning(f"Breaking stale lock {self.path} left by dead process {pid}")
            self.path.unlink(missing_ok=True)
            return True
        except PermissionError:
            pass
        return False

    def _try_acquire(self) -> None:
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as e:
            if self._break_if_stale():
                return self._try_acquire()
            raise _LockHeld(str(self.path)) from e
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))

    def acquire(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        retrying = Retrying(
            stop=stop_after_delay(self.timeout),
            wait=wait_fixed(self.poll),
            retry=retry_if_exception_type(_LockHeld),
        )
        try:
            retrying(self._try_acquire)
        except RetryError as e:
            holder = self.path.read_text().strip() if self.path.exists() else "unknown"
            raise RunLockedError(
                f"Run directory {self.path.parent} is locked by process {holder}"
            ) from e
        self._held = True
        logger.debug(f"Acquired {self.path}")

    def release(self) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False
            logger.debug(f"Released {self.path}")

    def __enter__(self) -> RunLock:
        self.acquire()
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.release()
