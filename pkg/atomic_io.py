"""
atomic_io.py - Atomic file writes and output-directory locking

Every report, export and sample file goes through here:
- content is written to `<name>.tmp` in the target directory, fsynced, then
  renamed over the destination, so readers never see a half-written file
- `output_lock()` takes an exclusive portalocker lock on
  `<dir>/.gridshift.lock` for the duration of a batch of writes, so two runs
  pointed at the same directory do not interleave their files

Write helpers do not lock on their own; hold `output_lock()` around a batch.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Iterator

import pandas as pd
import portalocker
from loguru import logger

from grid_errors import ParseError, ReportIOError

LOCK_NAME = ".gridshift.lock"


def _ensure_directory(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportIOError(f"cannot create output directory ({e})", directory)


@contextmanager
def output_lock(directory: Path | str) -> Iterator[Path]:
    """Hold an exclusive lock on `directory` while the caller writes into it."""
    directory = Path(directory)
    _ensure_directory(directory)
    lock_path = directory / LOCK_NAME
    try:
        handle = open(lock_path, "a+")
    except OSError as e:
        raise ReportIOError(f"cannot open lock file ({e})", lock_path)
    with handle:
        try:
            portalocker.lock(handle, portalocker.LOCK_EX)
        except portalocker.exceptions.LockException as e:
            raise ReportIOError(f"cannot lock output directory ({e})", directory)
        try:
            yield directory
        finally:
            portalocker.unlock(handle)


def write_bytes_atomic(path: Path | str, payload: bytes) -> Path:
    path = Path(path)
    _ensure_directory(path.parent)
    temp_file = path.with_name(path.name + ".tmp")
    try:
        with open(temp_file, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(temp_file, path)
    except OSError as e:
        logger.error(f"[REPORT] Failed to write {path}: {e}")
        if temp_file.exists():
            try:
                temp_file.unlink()
            except OSError:
                pass
        raise ReportIOError(f"cannot write file ({e})", path)
    logger.debug(f"[REPORT] wrote {path} ({len(payload)} bytes)")
    return path


def write_text_atomic(path: Path | str, text: str) -> Path:
    return write_bytes_atomic(path, text.encode("utf-8"))


def write_frame_atomic(path: Path | str, frame: pd.DataFrame) -> Path:
    """CSV without index; floats keep full repr precision."""
    return write_text_atomic(path, frame.to_csv(index=False, lineterminator="\n"))


def write_json_atomic(path: Path | str, data: dict) -> Path:
    return write_text_atomic(path, json.dumps(data, indent=2) + "\n")


def write_jsonl_atomic(path: Path | str, records: Iterable[dict]) -> Path:
    return write_text_atomic(path, "".join(json.dumps(record) + "\n" for record in records))


def read_jsonl(path: Path | str) -> list:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ReportIOError(f"cannot read file ({e})", path)
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid JSON ({e.msg})", row=number)
    return records
