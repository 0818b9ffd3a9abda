"""Mesh topology and transfer-matrix conventions for square interferometer meshes.

An N-mode processor is a rectangular checkerboard of N(N-1)/2 two-mode unit
cells, each a tunable beam splitter (internal phase theta) followed by an
external phase shifter (phi), plus a diagonal phase screen on the N outputs.
The unit cell acts on its mode pair (m, m+1) as

    T(theta, phi) = exp(i theta / 2) * [[exp(i phi) sin(theta/2),  cos(theta/2)],
                                        [exp(i phi) cos(theta/2), -sin(theta/2)]]

so the same-mode power reflectivity is R = sin(theta/2)^2, theta = pi is the
bar state and theta = 0 the cross state. All phases are stored normalized to
[0, 2*pi). Every type in this module is an immutable value and every
operation is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, NamedTuple

import numpy as np

from .util import (
    StructureError,
    ValidationError,
    dumps_canonical,
    wrap_phase,
)

UNITARITY_TOL = 1e-10
SINGULAR_VALUE_TOL = 1e-9


class CellAddress(NamedTuple):
    """Position of a unit cell: Clements column and upper mode index."""

    column: int
    row: int


@dataclass(frozen=True)
class CellSetting:
    """Phases of one unit cell, normalized to [0, 2*pi)."""

    theta: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_phase(self.theta)))
        object.__setattr__(self, "phi", float(wrap_phase(self.phi)))


@dataclass(frozen=True, eq=False)
class Unitary:
    """Dense n x n unitary matrix (tolerance 1e-10, max-abs elementwise)."""

    n: int
    elements: np.ndarray

    def __post_init__(self):
        arr = np.array(self.elements, dtype=complex)
        if arr.shape != (self.n, self.n):
            raise ValidationError(
                f"expected a {self.n}x{self.n} matrix, got shape {arr.shape}"
            )
        defect = np.max(np.abs(arr @ arr.conj().T - np.eye(self.n)))
        if defect > UNITARITY_TOL:
            raise ValidationError(
                f"matrix is not unitary: max-abs defect {defect:.3e}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Possibly lossy n x n transfer matrix (largest singular value <= 1)."""

    n: int
    elements: np.ndarray
    sub_unitary: bool = True

    def __post_init__(self):
        arr = np.array(self.elements, dtype=complex)
        if arr.shape != (self.n, self.n):
            raise ValidationError(
                f"expected a {self.n}x{self.n} matrix, got shape {arr.shape}"
            )
        top = float(np.linalg.norm(arr, 2))
        if top > 1.0 + SINGULAR_VALUE_TOL:
            raise ValidationError(
                f"transfer matrix has gain: largest singular value {top:.12f}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)


def rows_in_column(n, column):
    """Upper mode indices of the cells in one column (checkerboard layout)."""
    return range(column % 2, n - 1, 2)


def cell_addresses(n):
    """All N(N-1)/2 cell addresses for an n-mode mesh, sorted by (col, row)."""
    if n < 1:
        raise ValidationError("mode count must be >= 1")
    return [
        CellAddress(column, row)
        for column in range(n)
        for row in rows_in_column(n, column)
    ]


@dataclass(frozen=True, eq=False)
class MeshSettings:
    """Compiled program: one CellSetting per cell plus N output phases."""

    n: int
    cells: Dict[CellAddress, CellSetting]
    output_phases: np.ndarray = field(default=None)

    def __post_init__(self):
        expected = set(cell_addresses(self.n))
        got = set(self.cells)
        if got != expected:
            missing = sorted(expected - got)[:3]
            extra = sorted(got - expected)[:3]
            raise StructureError(
                f"settings for n={self.n} need {len(expected)} cells, got "
                f"{len(got)} (missing {missing}, unexpected {extra})"
            )
        phases = (
            np.zeros(self.n)
            if self.output_phases is None
            else wrap_phase(np.asarray(self.output_phases, dtype=float))
        )
        if phases.shape != (self.n,):
            raise StructureError(
                f"output_phases must have length {self.n}, got {phases.shape}"
            )
        phases.setflags(write=False)
        object.__setattr__(self, "cells", dict(self.cells))
        object.__setattr__(self, "output_phases", phases)


def bar_settings(n):
    """Settings with every cell in the bar state and zero output phases."""
    return MeshSettings(
        n=n,
        cells={addr: CellSetting(np.pi, 0.0) for addr in cell_addresses(n)},
        output_phases=np.zeros(n),
    )


def cell_transfer(setting):
    """2x2 transfer matrix of one unit cell in the pinned convention."""
    half = 0.5 * setting.theta
    s = np.sin(half)
    c = np.cos(half)
    pre = np.exp(0.5j * setting.theta)
    ephi = np.exp(1j * setting.phi)
    return pre * np.array([[ephi * s, c], [ephi * c, -s]], dtype=complex)


def _apply_columns(settings, out, col_start, col_stop):
    """Left-multiply `out` by the cells of columns [col_start, col_stop)."""
    for column in range(col_start, col_stop):
        for row in rows_in_column(settings.n, column):
            t = cell_transfer(settings.cells[CellAddress(column, row)])
            out[row : row + 2, :] = t @ out[row : row + 2, :]
    return out


def partial_mesh_product(settings, col_start, col_stop):
    """Product of the cell columns in [col_start, col_stop), no phase screen.

    Exposed so column-splitting composition can be checked directly.
    """
    out = np.eye(settings.n, dtype=complex)
    return _apply_columns(settings, out, col_start, col_stop)


def mesh_unitary(settings):
    """Compose all cells in column order, then the output phase screen.

    The earliest column acts first on the input state, so the returned matrix
    is  diag(exp(i * output_phases)) . T_last ... T_first.
    """
    out = np.eye(settings.n, dtype=complex)
    _apply_columns(settings, out, 0, settings.n)
    out = np.exp(1j * settings.output_phases)[:, None] * out
    return Unitary(settings.n, out)


def apply_loss(settings, profile):
    """Lossy transfer matrix: facet coupling loss at both ends plus uniform
    per-column propagation loss derived from each mode's path length.

    With all loss parameters zero the result equals mesh_unitary exactly.
    `profile` needs coupling_loss_db_per_facet, propagation_loss_db_per_cm
    and path_length_cm (scalar or per-mode) attributes.
    """
    n = settings.n
    facet_db = float(profile.coupling_loss_db_per_facet)
    prop_db = float(profile.propagation_loss_db_per_cm)
    paths = np.broadcast_to(
        np.asarray(profile.path_length_cm, dtype=float), (n,)
    )
    if facet_db < 0 or prop_db < 0 or np.any(paths < 0):
        raise ValidationError("loss parameters must be non-negative")

    facet_amp = 10.0 ** (-facet_db / 20.0)
    # each of the n columns carries an equal share of the mode's path
    col_amp = 10.0 ** (-(prop_db * paths / n) / 20.0)

    out = np.eye(n, dtype=complex) * facet_amp
    for column in range(n):
        for row in rows_in_column(n, column):
            t = cell_transfer(settings.cells[CellAddress(column, row)])
            out[row : row + 2, :] = t @ out[row : row + 2, :]
        out *= col_amp[:, None]
    out = np.exp(1j * settings.output_phases)[:, None] * out
    out *= facet_amp
    return TransferMatrix(n, out, sub_unitary=True)


def settings_to_json_dict(settings):
    """Stable JSON document form, cell list sorted by (col, row)."""
    return {
        "n": settings.n,
        "cells": [
            {
                "col": addr.column,
                "row": addr.row,
                "theta": settings.cells[addr].theta,
                "phi": settings.cells[addr].phi,
            }
            for addr in sorted(settings.cells)
        ],
        "output_phases": [float(p) for p in settings.output_phases],
    }


def settings_from_json_dict(doc):
    try:
        n = int(doc["n"])
        cells = {
            CellAddress(int(c["col"]), int(c["row"])): CellSetting(
                float(c["theta"]), float(c["phi"])
            )
            for c in doc["cells"]
        }
        phases = np.asarray(doc["output_phases"], dtype=float)
    except (KeyError, TypeError) as err:
        raise StructureError(f"malformed settings document: {err}") from err
    return MeshSettings(n=n, cells=cells, output_phases=phases)


def settings_to_json(settings):
    return dumps_canonical(settings_to_json_dict(settings))


def settings_from_json(text):
    import json

    return settings_from_json_dict(json.loads(text))
