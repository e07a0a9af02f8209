import json
import logging
import os
import tempfile
from pathlib import Path

from errors import ArtifactIOError, DependencyError

logger = logging.getLogger(__name__)


# -------------------------------
# WRITE HELPERS
# -------------------------------
def atomic_write_bytes(file_path, payload: bytes):
    """
    Write bytes via a temp file in the target directory, fsync, then os.replace.
    Readers never observe a half-written artifact.
    """
    path = Path(file_path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=str(path.parent))
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        logger.error(f"❌ Failed to save file {path}: {e}")
        raise ArtifactIOError(f"cannot write {path}: {e}", path=str(path))
    logger.debug(f"📂 File saved: {path} ({len(payload)} bytes)")
    return path


def atomic_write_text(file_path, content: str):
    return atomic_write_bytes(file_path, content.encode("utf-8"))


def write_json(file_path, record):
    """Canonical JSON (sorted keys, fixed indent) so equal records give equal bytes."""
    return atomic_write_text(file_path, json.dumps(record, indent=2, sort_keys=True) + "\n")


def write_jsonl(file_path, rows):
    lines = [json.dumps(row, sort_keys=True, separators=(",", ":")) for row in rows]
    return atomic_write_text(file_path, "".join(line + "\n" for line in lines))


# -------------------------------
# READ HELPERS
# -------------------------------
def require_file(file_path, what="artifact"):
    """Missing prerequisite artifacts are dependency errors, not I/O errors."""
    path = Path(file_path)
    if not path.is_file():
        raise DependencyError(f"missing {what}: {path}", path=str(path))
    return path


def read_bytes(file_path):
    path = Path(file_path)
    try:
        return path.read_bytes()
    except FileNotFoundError:
        raise DependencyError(f"missing artifact: {path}", path=str(path))
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}", path=str(path))


def read_json(file_path):
    raw = read_bytes(file_path)
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactIOError(f"malformed JSON in {file_path}: {e}", path=str(file_path))


def read_jsonl(file_path):
    raw = read_bytes(file_path)
    rows = []
    for line_no, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ArtifactIOError(f"malformed JSON line {line_no} in {file_path}: {e}",
                                  path=str(file_path), line=line_no)
    return rows
