# cimo/core/utils.py
from __future__ import annotations
import hashlib
import json
import logging
import concurrent.futures as cf
import functools
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import click
from rich.logging import RichHandler

from .constants import (
    CLI_ICONS,
    CONCURRENCY,
    EXIT_CONFIG,
    EXIT_GUARD,
    EXIT_VERIFY_FAILED,
    FORMAT_VERSION,
    MANIFEST_FILENAME,
    PROJECT_VERSION,
)
from .errors import (
    CimoError,
    ConfigError,
    FormatVersionError,
    GuardExceeded,
    VerificationFailure,
)


# ---------- Logging ----------
def setup_logging(verbose: bool = False) -> None:
    """Route the `cimo.*` loggers through a rich console handler."""
    logger = logging.getLogger("cimo")
    if any(isinstance(h, RichHandler) for h in logger.handlers):
        logger.setLevel(logging.DEBUG if verbose else logging.INFO)
        return
    handler = RichHandler(show_path=False, markup=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False


# ---------- Text I/O ----------
def read_text(path: Path) -> str:
    """Safely read text files with UTF-8 or UTF-16 fallback."""
    try:
        return path.read_text(encoding="utf-8").strip()
    except UnicodeDecodeError:
        return path.read_text(encoding="utf-16").strip()


def write_text(path: Path, text: str):
    """Write text to file with UTF-8 encoding, ensuring trailing newline."""
    path.write_text(text.strip() + "\n", encoding="utf-8")


def ensure_dir(path: Path):
    """Ensure that the directory exists (mkdir -p)."""
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------- JSON ----------
def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, fixed separators, so reruns are byte-identical."""
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=True)


def write_json(path: Path, obj: Any) -> Path:
    write_text(path, dumps(obj))
    return path


def read_json(path: Path) -> Any:
    try:
        return json.loads(read_text(path))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path.name}: invalid JSON ({e})") from e


def check_format_version(doc: dict, source: str = "document") -> None:
    """Reject documents written by a newer major format version."""
    raw = doc.get("format_version")
    if raw is None:
        return
    try:
        major = int(str(raw).split(".")[0])
    except ValueError as e:
        raise FormatVersionError(f"{source}: unreadable format_version {raw!r}", "format_version") from e
    ours = int(FORMAT_VERSION.split(".")[0])
    if major > ours:
        raise FormatVersionError(
            f"{source}: format_version {raw} is newer than supported {FORMAT_VERSION}",
            "format_version",
        )


# ---------- Digests ----------
def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_digest(inputs: Iterable[Path], args: dict) -> str:
    """sha256 over every input file's bytes plus the result-affecting arguments."""
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in inputs):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    h.update(dumps({k: str(v) for k, v in args.items()}).encode())
    return h.hexdigest()


# ---------- Run manifest ----------
def _manifest_path(out_dir: Path) -> Path:
    return out_dir / MANIFEST_FILENAME


def load_manifest(out_dir: Path) -> dict:
    """Load a manifest if one exists, else an empty skeleton."""
    path = _manifest_path(out_dir)
    if path.exists():
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except Exception as e:
            logging.getLogger("cimo.utils").warning(f"⚠️ Failed to read manifest: {e}")
    return {"format_version": FORMAT_VERSION}


def save_manifest(
    out_dir: Path,
    command: str,
    digest: str,
    master_seed: int | None,
    outputs: Sequence[Path],
    started: datetime,
) -> Path:
    """Persist the RunManifest for a command next to its outputs."""
    manifest = {
        "format_version": FORMAT_VERSION,
        "command": command,
        "config_digest": digest,
        "master_seed": master_seed,
        "library_version": PROJECT_VERSION,
        "started": started.isoformat(),
        "finished": utcnow().isoformat(),
        "outputs": {str(Path(p).name): file_digest(Path(p)) for p in outputs},
    }
    path = _manifest_path(out_dir)
    path.write_text(dumps(manifest) + "\n", encoding="utf-8")
    return path


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


# ---------- Workers ----------
def parallel_map(fn: Callable[[Any], Any], items: Sequence[Any], threads: int | None = None) -> list:
    """Map `fn` over items on a thread pool; results come back in input order."""
    workers = max(1, threads if threads is not None else CONCURRENCY)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    results: list = [None] * len(items)
    with cf.ThreadPoolExecutor(max_workers=workers) as ex:
        futures = {ex.submit(fn, x): i for i, x in enumerate(items)}
        for fut in cf.as_completed(futures):
            results[futures[fut]] = fut.result()
    return results


# ---------- CLI ----------
def exit_code_for(error: CimoError) -> int:
    if isinstance(error, VerificationFailure):
        return EXIT_VERIFY_FAILED
    if isinstance(error, GuardExceeded):
        return EXIT_GUARD
    return EXIT_CONFIG


def cli_errors(fn: Callable) -> Callable:
    """Turn library errors into a red one-liner and the matching exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CimoError as e:
            click.secho(f"{CLI_ICONS['error']} {e}", fg="red", err=True)
            raise SystemExit(exit_code_for(e)) from e

    return wrapper
