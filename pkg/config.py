import os
import threading
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from contextlib import contextmanager
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

from dotenv import load_dotenv

from errors import ConfigError
from logging_config import setup_logging

logger = setup_logging(__name__)

SETTINGS_PATH = Path(__file__).parent / "settings.toml"
ENV_PREFIX = "CSEV_"
OUTPUT_MODES = ("human", "machine")


class RWLock:
    """Read-Write lock implementation.

    Allows multiple concurrent readers OR one exclusive writer.
    A waiting writer blocks new readers so appends are not starved by audits.
    """
    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer_active = False
        self._writers_waiting = 0

    def acquire_read(self):
        """Acquire a read lock. Multiple readers can hold the lock simultaneously."""
        with self._cond:
            while self._writer_active or self._writers_waiting:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        """Release a read lock."""
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        """Acquire a write lock. Exclusive access - blocks all readers and writers."""
        with self._cond:
            self._writers_waiting += 1
            try:
                while self._writer_active or self._readers > 0:
                    self._cond.wait()
            finally:
                self._writers_waiting -= 1
            self._writer_active = True

    def release_write(self):
        """Release a write lock."""
        with self._cond:
            self._writer_active = False
            self._cond.notify_all()

    @contextmanager
    def read_lock(self):
        """Context manager for read lock."""
        self.acquire_read()
        try:
            yield
        finally:
            self.release_read()

    @contextmanager
    def write_lock(self):
        """Context manager for write lock."""
        self.acquire_write()
        try:
            yield
        finally:
            self.release_write()


# One lock per resolved file path, shared by every handle opened on that file
_path_locks: dict[str, RWLock] = {}
_registry_lock = threading.Lock()


def get_path_lock(path) -> RWLock:
    """Get or create the read-write lock guarding a file."""
    key = str(Path(path).resolve())
    with _registry_lock:
        lock = _path_locks.get(key)
        if lock is None:
            lock = RWLock()
            _path_locks[key] = lock
        return lock


@contextmanager
def local_access(path, write: bool = False):
    """Guard access to an evidence log, index or anchor file.

    Args:
        path: File being accessed.
        write: If True, acquire exclusive write lock. If False, acquire shared read lock.
               Multiple readers can access simultaneously, but writes are exclusive.

    Only serializes threads of this process; separate writer processes must be
    coordinated by the caller.
    """
    lock = get_path_lock(path)
    if write:
        with lock.write_lock():
            logger.debug(f"local_access() write lock acquired for {path}")
            yield
    else:
        with lock.read_lock():
            logger.debug(f"local_access() read lock acquired for {path}")
            yield


@lru_cache(maxsize=8)
def load_settings(path: str | None = None) -> dict[str, Any]:
    """Load settings.toml. A missing file yields an empty mapping so built-in defaults apply."""
    settings_path = Path(path) if path else SETTINGS_PATH
    try:
        with open(settings_path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        logger.warning(f"settings.toml not found at {settings_path}; using built-in defaults")
        return {}
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid settings file {settings_path}: {e}") from e


def evidence_settings(settings: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Field count, suite and role registry defaults used by `setup`."""
    settings = load_settings() if settings is None else settings
    section = settings.get("evidence", {})
    return {
        "field_count": int(section.get("field_count", 8)),
        "suite_id": str(section.get("suite_id", "v1")),
        "field_roles": list(section.get("field_roles", [])),
    }


def _env(name: str) -> str | None:
    value = os.getenv(f"{ENV_PREFIX}{name}")
    return value if value else None


@dataclass(frozen=True)
class CliConfig:
    """Resolved file locations and options for one CLI invocation."""
    params_path: Path = Path("params.csev")
    key_path: Path = Path("signer.key")
    log_path: Path = Path("evidence.csel")
    event_store_path: Path = Path("events")
    anchor_path: Path = Path("anchors.csan")
    threads: int | None = None
    output_mode: str = "human"
    executor: str = "process"

    @property
    def public_key_path(self) -> Path:
        return self.key_path.with_name(self.key_path.name + ".pub")

    @property
    def machine(self) -> bool:
        return self.output_mode == "machine"

    @classmethod
    def resolve(cls, overrides: Mapping[str, Any] | None = None,
                settings: Mapping[str, Any] | None = None) -> "CliConfig":
        """Merge defaults: flag > CSEV_* environment > settings.toml > built-in.

        `overrides` holds flag values; None means "not given on the command line".
        """
        load_dotenv()
        settings = load_settings() if settings is None else settings
        overrides = dict(overrides or {})
        paths = settings.get("paths", {})
        verify = settings.get("verify", {})
        base = cls()

        def pick(key: str, env_name: str, from_settings: Any, default: Any) -> Any:
            if overrides.get(key) is not None:
                return overrides[key]
            env_value = _env(env_name)
            if env_value is not None:
                return env_value
            if from_settings is not None:
                return from_settings
            return default

        threads = pick("threads", "THREADS", verify.get("threads"), base.threads)
        try:
            threads = int(threads) if threads not in (None, "", 0, "0") else None
        except (TypeError, ValueError) as e:
            raise ConfigError(f"threads must be an integer, got {threads!r}") from e
        if threads is not None and threads < 1:
            raise ConfigError(f"threads must be >= 1, got {threads}")

        output_mode = pick("output_mode", "OUTPUT", None, base.output_mode)
        if output_mode not in OUTPUT_MODES:
            raise ConfigError(f"output mode must be one of {OUTPUT_MODES}, got {output_mode!r}")

        executor = str(verify.get("executor", base.executor))
        if executor not in ("process", "thread"):
            raise ConfigError(f"[verify] executor must be 'process' or 'thread', got {executor!r}")

        config = replace(
            base,
            params_path=Path(pick("params_path", "PARAMS", paths.get("params"), base.params_path)),
            key_path=Path(pick("key_path", "KEY", paths.get("key"), base.key_path)),
            log_path=Path(pick("log_path", "LOG", paths.get("log"), base.log_path)),
            event_store_path=Path(pick("event_store_path", "EVENT_STORE", paths.get("event_store"),
                                       base.event_store_path)),
            anchor_path=Path(pick("anchor_path", "ANCHOR", paths.get("anchor"), base.anchor_path)),
            threads=threads,
            output_mode=output_mode,
            executor=executor,
        )
        logger.debug(f"resolved config: {config}")
        return config


if __name__ == "__main__":
    pass
