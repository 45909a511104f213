# Logging setup, config loading, atomic writes, provenance hashes, thread cap
import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Union

from .constants import THREADS_ENV_VAR

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


def setup_logging(level: Union[str, int] = "INFO") -> None:
    """
    Configure the root logger with a standard format and level.

    :param level: Logging level as a string (e.g., 'DEBUG', 'INFO') or numeric.
    """
    if isinstance(level, str):
        numeric_level = getattr(logging, level.upper(), logging.INFO)
    else:
        numeric_level = level
    logging.basicConfig(
        level=numeric_level, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    )


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Load configuration from JSON, YAML, or TOML file into a dictionary.

    :param path: Path to the config file.
    :return: Configuration dictionary.
    """
    config_path = Path(path)
    ext = config_path.suffix.lower()
    if ext == ".json":
        with open(config_path) as f:
            return json.load(f)
    elif ext in (".yaml", ".yml"):
        try:
            import yaml  # type: ignore
        except ImportError as e:
            raise ImportError("PyYAML is required to load YAML config files") from e
        with open(config_path) as f:
            return yaml.safe_load(f) or {}
    elif ext == ".toml":
        try:
            import toml  # type: ignore
        except ImportError as e:
            raise ImportError(
                "toml package is required to load TOML config files"
            ) from e
        with open(config_path) as f:
            return toml.load(f)
    else:
        raise ValueError(f"Unsupported config file format: {ext}")


def atomic_write_text(path: Union[str, Path], text: str) -> None:
    """
    Write text to ``path`` through a temporary file in the same directory and
    an atomic rename.

    :param path: Destination file.
    :param text: UTF-8 content.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(
        dir=target.parent, prefix=f".{target.name}.", suffix=".tmp"
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def hash_files(paths: Iterable[Union[str, Path]]) -> str:
    """
    SHA-256 over the names and bytes of ``paths`` in sorted name order.

    :param paths: Files to hash.
    :return: Hex digest.
    """
    digest = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        digest.update(p.name.encode("utf-8"))
        digest.update(p.read_bytes())
    return digest.hexdigest()


def hash_config(config: Mapping[str, Any]) -> str:
    """
    SHA-256 of the canonical JSON form of a configuration mapping.

    :param config: JSON-serializable mapping.
    :return: Hex digest.
    """
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def thread_cap() -> int:
    """
    Parallelism cap read from the ``KOOPID_THREADS`` environment variable.

    :return: Positive worker count, 1 when unset or invalid.
    """
    raw = os.environ.get(THREADS_ENV_VAR, "")
    try:
        value = int(raw)
    except ValueError:
        if raw:
            log.warning(f"Ignoring invalid {THREADS_ENV_VAR}={raw!r}")
        return 1
    return max(1, value)
