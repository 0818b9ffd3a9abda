"""Shared plumbing: error types, deterministic seeds, canonical JSON, atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

TWO_PI = 2.0 * np.pi


class MeshsimError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MeshsimError, ValueError):
    """An argument violates a documented precondition."""


class StructureError(ValidationError):
    """A composite value (settings, plan, config) is malformed."""


class UnknownHeaterError(MeshsimError, KeyError):
    """A heater id is not present in the profile."""


class FitDegeneracyError(MeshsimError):
    """A least-squares fit cannot be determined from the given samples."""


class InfeasibleError(MeshsimError):
    """No in-range drive solution exists; carries the offending heater ids."""

    def __init__(self, message, heater_ids=()):
        super().__init__(message)
        self.heater_ids = tuple(heater_ids)


class UsageError(MeshsimError):
    """Bad configuration or command line input (maps to exit code 2)."""


def wrap_phase(x):
    """Wrap phase(s) into [0, 2*pi)."""
    return np.mod(x, TWO_PI)


def wrap_signed(x):
    """Wrap phase(s) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x), TWO_PI)


def child_seed(seed, index):
    """Derive a stable 64-bit item seed from a campaign seed and item index.

    Uses the splittable SeedSequence scheme so results do not depend on how
    items are distributed over workers.
    """
    state = np.random.SeedSequence([int(seed), int(index)]).generate_state(2, np.uint64)
    return int(state[0])


def normalize_floats(obj):
    """Recursively round floats to 15 significant digits for stable JSON."""
    if isinstance(obj, dict):
        return {k: normalize_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return normalize_floats(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return float(format(float(obj), ".15g"))
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    return obj


def dumps_canonical(payload):
    """Canonical JSON text: normalized floats, sorted keys, trailing newline."""
    return json.dumps(normalize_floats(payload), sort_keys=True, indent=2, allow_nan=False) + "\n"


def atomic_write_text(path, text):
    """Write text through a temp file and rename so readers never see partials."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parallel_map(fn, items, workers=None):
    """Order-preserving map, optionally over a thread pool.

    Every item must carry its own seed, so the worker count can never change
    the result, only the wall-clock time.
    """
    items = list(items)
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, int(workers))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
