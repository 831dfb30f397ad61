"""Helper utilities for report files, run manifests, dataset state and output directories."""
import os
import csv
import sys
import json
import hashlib
import logging
import platform
from typing import Any, Dict, Iterable, List, Optional

from ..core.errors import DataError, OutputExistsError

logger = logging.getLogger(__name__)

STATE_FILE = "dataset.json"
MANIFEST_FILE = "manifest.txt"


def write_csv(path: str, rows: List[Dict[str, Any]], fieldnames: Optional[List[str]] = None) -> str:
    """
    Writes rows as CSV with a header line.
    - Columns default to the union of row keys in first-seen order.
    - Floats are written with repr() so values survive a round trip.
    """
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(k for k in row if k not in fieldnames)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in ("numpy", "scipy", "pydantic"):
        module = sys.modules.get(name) or __import__(name)
        versions[name] = getattr(module, "__version__", "unknown")
    return versions


def write_manifest(out_dir: str, command: str, argv: List[str], seed: Optional[int],
                   config_text: str = "", inputs: Iterable[str] = ()) -> str:
    """
    Writes manifest.txt as flat key=value lines:
    command, argv, seed, package versions, one `config.<key>` line per
    config echo line and one `input.<path>` sha256 line per input file.
    """
    lines = [f"command={command}", f"argv={' '.join(argv)}", f"seed={'none' if seed is None else seed}"]
    lines.extend(f"version.{name}={value}" for name, value in package_versions().items())
    for line in config_text.splitlines():
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            lines.append(f"config.{key}={value}")
    for path in sorted(set(inputs)):
        if os.path.isfile(path):
            lines.append(f"input.{path}=sha256:{file_digest(path)}")
    manifest_path = os.path.join(out_dir, MANIFEST_FILE)
    os.makedirs(out_dir, exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"Manifest written to {manifest_path}")
    return manifest_path


def read_manifest(path: str) -> Dict[str, str]:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if "=" in line:
                key, value = line.rstrip("\n").split("=", 1)
                values[key] = value
    return values


def ensure_output_dir(out_dir: str, force: bool = False) -> str:
    """
    Creates `out_dir` if absent. A non-empty existing directory is only
    accepted with force=True.
    """
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise OutputExistsError(f"output directory {out_dir} is not empty (use --force to overwrite)")
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def save_dataset_state(dataset_dir: str, state: Dict[str, Any]) -> str:
    """Saves prepared-dataset metadata next to the split files."""
    save_path = os.path.join(dataset_dir, STATE_FILE)
    os.makedirs(dataset_dir, exist_ok=True)
    with open(save_path, "w", encoding="utf-8") as f:
        json.dump(state, f, indent=2, sort_keys=True)
    logger.info(f"Dataset state saved to {save_path}")
    return save_path


def load_dataset_state(dataset_dir: str) -> Dict[str, Any]:
    load_path = os.path.join(dataset_dir, STATE_FILE)
    if not os.path.exists(load_path):
        raise DataError(f"{dataset_dir} is not a prepared dataset (missing {STATE_FILE}); run `prepare` first")
    with open(load_path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"corrupted {load_path}: {e}") from e


def list_runs(base_dir: str) -> List[Dict[str, Any]]:
    """
    Lists run directories under `base_dir` (any directory holding a manifest).
    Returns dicts with run_id, command and path.
    """
    runs = []
    if not os.path.isdir(base_dir):
        return runs
    for item in sorted(os.listdir(base_dir)):
        item_path = os.path.join(base_dir, item)
        manifest = os.path.join(item_path, MANIFEST_FILE)
        if os.path.isdir(item_path) and os.path.exists(manifest):
            try:
                command = read_manifest(manifest).get("command", "?")
            except (OSError, UnicodeDecodeError):
                continue
            runs.append({"run_id": item, "command": command, "path": item_path})
    return runs
