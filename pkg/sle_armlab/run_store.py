import csv
import datetime
import hashlib
import json
import logging
import os

from filelock import FileLock, Timeout

from .constants import (
    CSV_HEADER,
    LOCK_TIMEOUT_SECONDS,
    MANIFEST_JSON,
    OUTPUT_ROOT_ENV_VAR,
    PLOT_SVG,
    RESULTS_CSV,
    SUMMARY_JSON,
)
from .exceptions import ManifestError

logger = logging.getLogger(__name__)

_LOCK_NAME = ".armlab.lock"


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def run_id_for(config, seed):
    """Hash of the merged config and seed; identical runs share an id"""
    digest = hashlib.sha256(canonical_json({"config": config, "seed": seed}).encode())
    return digest.hexdigest()[:16]


def resolve_out_dir(out_dir, root_path=None):
    """Relative output directories live under SLE_ARMLAB_OUTPUT_ROOT when it is set"""
    if root_path is None:
        root_path = os.environ.get(OUTPUT_ROOT_ENV_VAR)
    if root_path is None or os.path.isabs(out_dir):
        return out_dir
    return os.path.join(root_path, out_dir)


class RunStore:
    """
    Output directory of one run

    Every write happens under a FileLock on the directory and waits at most
    LOCK_TIMEOUT_SECONDS for it before raising filelock.Timeout. The previous manifest
    is kept as manifest.json.old until the new one is fully written, so a
    truncated manifest left by a bad exit can still be recovered.

    Usage:
        store = RunStore('runs/h1')
        store.write_results(rows)
        store.write_summary(summary)
        store.write_manifest(run_id, config, version)
    """

    def __init__(self, out_dir, root_path=None):
        self.out_dir = resolve_out_dir(out_dir, root_path)
        os.makedirs(self.out_dir, exist_ok=True)
        self.lock_path = os.path.join(self.out_dir, _LOCK_NAME)
        self.file_lock = FileLock(self.lock_path, timeout=LOCK_TIMEOUT_SECONDS)
        self.written = []

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _locked_write(self, name, text):
        try:
            with self.file_lock:
                with open(self.path(name), "w", newline="") as f:
                    f.write(text)
        except Timeout:
            logger.error(
                "RunStore: %s held for over %ss, not writing %s",
                self.lock_path,
                self.file_lock.timeout,
                name,
            )
            raise
        if name not in self.written:
            self.written.append(name)
        logger.debug("RunStore: wrote %s", self.path(name))
        return self.path(name)

    def write_results(self, rows):
        """CSV with the fixed header; floats in full precision scientific notation"""
        lines = [",".join(CSV_HEADER)]
        for row in rows:
            lines.append(",".join(_csv_cell(value) for value in row))
        return self._locked_write(RESULTS_CSV, "\n".join(lines) + "\n")

    def write_summary(self, summary):
        return self._locked_write(SUMMARY_JSON, canonical_json(summary))

    def write_plot(self, svg_text):
        return self._locked_write(PLOT_SVG, svg_text)

    def write_manifest(self, run_id, config, version, command):
        """
        Replace the manifest, keeping the previous one as manifest.json.old

        The timestamp is the only field that differs between identical runs.
        """
        manifest = {
            "run_id": run_id,
            "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "command": command,
            "config": config,
            "version": version,
            "outputs": sorted(self.written),
        }
        manifest_path = self.path(MANIFEST_JSON)
        old_path = f"{manifest_path}.old"
        with self.file_lock:
            try:
                os.remove(old_path)
            except FileNotFoundError:
                pass

            try:
                os.rename(manifest_path, old_path)
            except FileNotFoundError:
                pass

            with open(manifest_path, "w") as f:
                f.write(canonical_json(manifest))
        return manifest

    def read_csv(self):
        with open(self.path(RESULTS_CSV), newline="") as f:
            return list(csv.reader(f))


def _csv_cell(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return "%.17e" % float(value)


def load_manifest(path):
    """
    Load a manifest file or a run directory's manifest

    Falls back to manifest.json.old when the primary copy is truncated.

    :raises ManifestError: if neither copy is readable
    """
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_JSON)
    lock_path = os.path.join(os.path.dirname(path) or ".", _LOCK_NAME)
    lock = FileLock(lock_path, timeout=LOCK_TIMEOUT_SECONDS)
    try:
        with lock:
            with open(path) as f:
                return json.load(f)
    except json.JSONDecodeError:
        # This almost certainly means the manifest did not finish writing
        logger.warning("load_manifest: %s is corrupt, trying the .old copy", path)
        try:
            with lock:
                with open(f"{path}.old") as f:
                    return json.load(f)
        except (json.JSONDecodeError, FileNotFoundError) as err:
            raise ManifestError(f"No usable manifest at {path}") from err
    except FileNotFoundError as err:
        raise ManifestError(f"No manifest at {path}") from err
