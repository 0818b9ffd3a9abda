"""Two-photon interference on a programmed mesh.

Routes a photon pair to any single cell so it acts as a two-port splitter,
simulates Hong-Ou-Mandel delay scans through the lossy hardware model, fits
the Gaussian dip, and sweeps an on-chip delay line built from one arm of a
mesh-wide interferometer.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.stats import f_oneway

from . import analysis, hardware, mesh
from .util import (
    TWO_PI,
    MeshsimError,
    ValidationError,
    child_seed,
    parallel_map,
)

BAR = "bar"
CROSS = "cross"
HALF = "half"
CELL_STATES = (BAR, CROSS, HALF)

_THETA_BY_STATE = {BAR: math.pi, CROSS: 0.0, HALF: math.pi / 2.0}

DEFAULT_CENTER_WAVELENGTH_NM = 1562.0
DEFAULT_BANDWIDTH_FWHM_NM = 12.0
DEFAULT_SCHMIDT_NUMBER = 1.1
DEFAULT_PAIR_RATE_HZ = 1.0e5

# Fraction of samples (largest |delay|) averaged into the raw-count baseline.
BASELINE_FRACTION = 0.2
MIN_FIT_SAMPLES = 10

_COUNT_STREAM = 404


@dataclass(frozen=True)
class PhotonPairSource:
    """Degenerate photon-pair source with a Gaussian joint spectrum.

    The mutual overlap at zero delay is the purity ceiling 1/K set by the
    effective Schmidt mode number K; it bounds every fitted visibility.
    """

    center_wavelength_nm: float = DEFAULT_CENTER_WAVELENGTH_NM
    bandwidth_fwhm_nm: float = DEFAULT_BANDWIDTH_FWHM_NM
    mutual_overlap_at_zero_delay: float = 1.0 / DEFAULT_SCHMIDT_NUMBER
    pair_rate_hz: float = DEFAULT_PAIR_RATE_HZ

    def __post_init__(self):
        if not self.center_wavelength_nm > 0:
            raise ValidationError("center wavelength must be positive")
        if not self.bandwidth_fwhm_nm > 0:
            raise ValidationError("source bandwidth must be positive")
        if not 0.0 <= self.mutual_overlap_at_zero_delay <= 1.0:
            raise ValidationError("mutual overlap must lie in [0, 1]")
        if not self.pair_rate_hz > 0:
            raise ValidationError("pair rate must be positive")

    @property
    def coherence_sigma_um(self):
        """Gaussian sigma of the dip envelope, in micrometers of path delay."""
        lam_um = self.center_wavelength_nm * 1e-3
        dlam_um = self.bandwidth_fwhm_nm * 1e-3
        return math.sqrt(2.0 * math.log(2.0)) / math.pi * lam_um * lam_um / dlam_um

    def overlap_at(self, delay_um, arm_delay_um=0.0):
        """Pairwise overlap x(tau) for a path-delay mismatch in micrometers."""
        sig = self.coherence_sigma_um
        tau = np.asarray(delay_um, dtype=float) - arm_delay_um
        return self.mutual_overlap_at_zero_delay * np.exp(-0.5 * (tau / sig) ** 2)


def _matrix_of(u):
    if isinstance(u, (mesh.Unitary, mesh.TransferMatrix)):
        return u.elements
    arr = np.asarray(u, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def _mode_pair(pair, n, label):
    a, b = (int(pair[0]), int(pair[1]))
    if a == b:
        raise ValidationError(f"{label} modes must be distinct, got {pair}")
    for m in (a, b):
        if not 0 <= m < n:
            raise ValidationError(f"{label} mode {m} out of range for n={n}")
    return a, b


def _overlap_value(x):
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"overlap must lie in [0, 1], got {x}")
    return x


def two_photon_coincidence(u, input_pair, output_pair, overlap):
    """Coincidence probability for one photon at each output of a pair.

    One photon enters each input mode; `overlap` is the pairwise
    indistinguishability x, interpolating between classical transmission
    statistics (x = 0) and full bosonic interference (x = 1). `u` may be
    sub-unitary (lossy), in which case probabilities no longer sum to one.
    """
    m = _matrix_of(u)
    a, b = _mode_pair(input_pair, m.shape[0], "input")
    c, d = _mode_pair(output_pair, m.shape[0], "output")
    x = _overlap_value(overlap)
    q1 = m[c, a] * m[d, b]
    q2 = m[c, b] * m[d, a]
    return float(abs(q1) ** 2 + abs(q2) ** 2 + 2.0 * x * (q1 * q2.conjugate()).real)


def two_photon_output_distribution(u, input_pair, overlap):
    """Probabilities over unordered output pairs, doubles included.

    Sums to one when `u` is unitary, for any overlap.
    """
    m = _matrix_of(u)
    n = m.shape[0]
    a, b = _mode_pair(input_pair, n, "input")
    x = _overlap_value(overlap)
    probs = {}
    for c in range(n):
        amp = m[c, a] * m[c, b]
        probs[(c, c)] = float((1.0 + x) * abs(amp) ** 2)
        for d in range(c + 1, n):
            q1 = m[c, a] * m[d, b]
            q2 = m[c, b] * m[d, a]
            probs[(c, d)] = float(
                abs(q1) ** 2 + abs(q2) ** 2 + 2.0 * x * (q1 * q2.conjugate()).real
            )
    return probs


@dataclass(frozen=True, eq=False)
class RoutingPlan:
    """Bar/cross program isolating one cell as a two-port splitter.

    `cell_states` covers every cell of the mesh; exactly one cell (the
    target) is in the half state.
    """

    n: int
    target: mesh.CellAddress
    input_pair: Tuple[int, int]
    output_pair: Tuple[int, int]
    cell_states: Dict[mesh.CellAddress, str]


def _validate_plan_shape(plan):
    expected = set(mesh.cell_addresses(plan.n))
    got = set(plan.cell_states)
    if got != expected:
        raise ValidationError(
            f"plan must assign a state to every cell of an n={plan.n} mesh"
        )
    halves = [addr for addr, state in plan.cell_states.items() if state == HALF]
    for state in plan.cell_states.values():
        if state not in CELL_STATES:
            raise ValidationError(f"unknown cell state {state!r}")
    if halves != [plan.target]:
        raise ValidationError(
            f"plan needs exactly one half cell at the target, found {halves}"
        )
    _mode_pair(plan.input_pair, plan.n, "input")
    _mode_pair(plan.output_pair, plan.n, "output")


def route_to_tbs(n, target):
    """Deterministic routing plan driving the target cell as a 50:50 TBS.

    Each photon enters on a dedicated lane two modes apart, crosses once in
    the column before the target, and the two outputs fan back out through
    one cross each. Lanes touch disjoint cells, so the photons meet only at
    the target.
    """
    target = mesh.CellAddress(int(target[0]), int(target[1]))
    if target not in set(mesh.cell_addresses(n)):
        raise ValidationError(f"no cell at {tuple(target)} in an n={n} mesh")
    column, row = target
    states = {addr: BAR for addr in mesh.cell_addresses(n)}
    states[target] = HALF
    if column == 0:
        in_a, in_b = row, row + 1
    else:
        if row == 0:
            in_a = 0
        else:
            in_a = row - 1
            states[mesh.CellAddress(column - 1, row - 1)] = CROSS
        if row == n - 2:
            in_b = n - 1
        else:
            in_b = row + 2
            states[mesh.CellAddress(column - 1, row + 1)] = CROSS
    if column == n - 1:
        out_a, out_b = row, row + 1
    else:
        if row == 0:
            out_a = 0
        else:
            out_a = row - 1
            states[mesh.CellAddress(column + 1, row - 1)] = CROSS
        if row == n - 2:
            out_b = n - 1
        else:
            out_b = row + 2
            states[mesh.CellAddress(column + 1, row + 1)] = CROSS
    return RoutingPlan(
        n=n,
        target=target,
        input_pair=(in_a, in_b),
        output_pair=(out_a, out_b),
        cell_states=states,
    )


def _cell_touching(n, column, mode):
    """Cell in `column` with `mode` on one of its ports, or None at a gap."""
    row = mode if column % 2 == mode % 2 else mode - 1
    if row < 0 or row > n - 2:
        return None
    return mesh.CellAddress(column, row)


def _trace(plan, mode, col_start, col_stop):
    """Walk one photon through bar/cross cells; half cells are an error."""
    used = {}
    for column in range(col_start, col_stop):
        addr = _cell_touching(plan.n, column, mode)
        if addr is None:
            continue
        state = plan.cell_states[addr]
        used[addr] = "upper" if mode == addr.row else "lower"
        if state == HALF:
            raise MeshsimError(
                f"trace entered the splitting cell {tuple(addr)} away from "
                "the planned meeting point"
            )
        if state == CROSS:
            mode = addr.row + 1 if mode == addr.row else addr.row
    return mode, used


def _check_shared(shared, plan, strict, what):
    for addr in sorted(shared):
        if strict:
            raise MeshsimError(f"{what} paths share cell {tuple(addr)}")
        if plan.cell_states[addr] != BAR:
            raise MeshsimError(
                f"{what} paths share the non-bar cell {tuple(addr)}"
            )


def verify_routing(plan, strict=True):
    """Trace both photons and prove the paths are isolated.

    Raises on any violation. With strict=True the input (and output) paths
    may not touch a common cell at all; with strict=False shared cells are
    tolerated when they are in the bar state, which a co-propagating
    boundary pair needs. Returns the cells used by each traced path.
    """
    _validate_plan_shape(plan)
    column, row = plan.target
    in_a, in_b = plan.input_pair
    mode_a, used_a = _trace(plan, in_a, 0, column)
    mode_b, used_b = _trace(plan, in_b, 0, column)
    if {mode_a, mode_b} != {row, row + 1}:
        raise MeshsimError(
            f"photons arrive on modes {sorted((mode_a, mode_b))}, not the "
            f"target ports {(row, row + 1)}"
        )
    _check_shared(used_a.keys() & used_b.keys(), plan, strict, "input")
    out_upper, used_u = _trace(plan, row, column + 1, plan.n)
    out_lower, used_l = _trace(plan, row + 1, column + 1, plan.n)
    if {out_upper, out_lower} != set(plan.output_pair):
        raise MeshsimError(
            f"target outputs reach modes {sorted((out_upper, out_lower))}, "
            f"not the planned pair {tuple(sorted(plan.output_pair))}"
        )
    _check_shared(used_u.keys() & used_l.keys(), plan, strict, "output")
    return {
        "input_cells": (used_a, used_b),
        "output_cells": (used_u, used_l),
    }


def plan_to_settings(plan):
    """Mesh program for a routing plan: pinned thetas, all phis zero."""
    _validate_plan_shape(plan)
    cells = {
        addr: mesh.CellSetting(theta=_THETA_BY_STATE[state], phi=0.0)
        for addr, state in plan.cell_states.items()
    }
    return mesh.MeshSettings(n=plan.n, cells=cells, output_phases=np.zeros(plan.n))


def default_delay_grid(center_um=0.0):
    """Scan grid: a dense core across the dip plus far off-dip wings.

    The core stays within two dip widths of the center so the baseline
    re-estimate uses only the wings, which sit beyond five coherence sigmas
    of the default source and pin the baseline without biasing the fit.
    """
    core = np.linspace(-140.0, 140.0, 29)
    wing = np.linspace(450.0, 800.0, 15)
    return center_um + np.sort(np.concatenate([-wing, core, wing]))


@dataclass(frozen=True)
class GaussianDipFit:
    """Fitted inverted-Gaussian dip on a flat baseline."""

    visibility: float
    center_um: float
    width_um: float
    baseline: float
    visibility_sigma: float
    uncertain: bool

    def to_dict(self):
        sigma = self.visibility_sigma
        return {
            "visibility": self.visibility,
            "center_um": self.center_um,
            "width_um": self.width_um,
            "baseline": self.baseline,
            "visibility_sigma": sigma if math.isfinite(sigma) else None,
            "uncertain": self.uncertain,
        }


def _dip_model(t, baseline, visibility, center, width):
    return baseline * (1.0 - visibility * np.exp(-0.5 * ((t - center) / width) ** 2))


def _flat_fit(delays, values):
    span = float(np.ptp(delays))
    return GaussianDipFit(
        visibility=0.0,
        center_um=float(np.mean(delays)),
        width_um=span / 4.0 if span > 0 else 1.0,
        baseline=float(np.mean(values)),
        visibility_sigma=float("inf"),
        uncertain=True,
    )


def fit_gaussian_dip(delays_um, values):
    """Two-pass Gaussian dip fit with an off-dip baseline.

    Pass one fits all four parameters; the baseline is then re-estimated
    from the samples more than two fitted widths away from the center and
    pass two refits the remaining three with the baseline held fixed, which
    keeps count noise on the dip from tilting the visibility. Flat input
    returns zero visibility flagged uncertain. Raises when no sample lies
    off the dip, because the baseline is then undefined.
    """
    d = np.asarray(delays_um, dtype=float)
    v = np.asarray(values, dtype=float)
    if d.ndim != 1 or d.shape != v.shape:
        raise ValidationError("delays and values must be matching 1-d arrays")
    if d.size < MIN_FIT_SAMPLES:
        raise ValidationError(f"dip fit needs >= {MIN_FIT_SAMPLES} samples")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(v))):
        raise ValidationError("dip fit input must be finite")
    span = float(np.ptp(d))
    if span <= 0:
        raise ValidationError("delay samples must not be all equal")
    if np.ptp(v) <= 1e-12 * max(1.0, float(np.max(np.abs(v)))):
        return _flat_fit(d, v)

    i0 = int(np.argmin(v))
    b0 = float(np.mean(v[v >= np.median(v)]))
    if b0 <= 0:
        b0 = max(float(np.max(v)), 1e-9)
    v0 = min(max(1.0 - v[i0] / b0, 0.05), 1.0)
    half = b0 - 0.5 * (b0 - v[i0])
    below = d[v <= half]
    w0 = float(np.ptp(below)) / 2.355 if below.size >= 2 else span / 8.0
    w0 = max(w0, span / d.size)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt1, _ = curve_fit(
                _dip_model, d, v, p0=[b0, v0, float(d[i0]), w0], maxfev=20000
            )
    except RuntimeError:
        return _flat_fit(d, v)
    center1, width1 = float(popt1[2]), abs(float(popt1[3]))

    off = np.abs(d - center1) > 2.0 * width1
    if not np.any(off):
        raise ValidationError(
            "baseline undefined: no samples beyond two widths from the dip"
        )
    baseline = float(np.mean(v[off]))
    if baseline <= 0:
        raise ValidationError("off-dip baseline must be positive")

    def fixed_model(t, visibility, center, width):
        return _dip_model(t, baseline, visibility, center, width)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt2, pcov2 = curve_fit(
                fixed_model,
                d,
                v,
                p0=[min(max(float(popt1[1]), 0.0), 1.0), center1, width1],
                maxfev=20000,
            )
    except RuntimeError:
        return _flat_fit(d, v)
    visibility = min(max(float(popt2[0]), 0.0), 1.0)
    if np.isfinite(pcov2[0, 0]):
        sigma = float(np.sqrt(pcov2[0, 0]))
    else:
        # pcov degenerates on a near-exact fit; fall back to the relative
        # residual so only genuinely bad fits get flagged
        rms = float(np.sqrt(np.mean((v - fixed_model(d, *popt2)) ** 2)))
        sigma = rms / baseline
    uncertain = not np.isfinite(sigma) or visibility < 3.0 * sigma
    return GaussianDipFit(
        visibility=visibility,
        center_um=float(popt2[1]),
        width_um=abs(float(popt2[2])),
        baseline=baseline,
        visibility_sigma=sigma,
        uncertain=bool(uncertain),
    )


@dataclass(frozen=True, eq=False)
class HomScan:
    """One coincidence-vs-delay scan, normalized to its off-dip baseline."""

    delays_um: np.ndarray
    coincidences: np.ndarray
    fit: GaussianDipFit
    input_pair: Tuple[int, int]
    output_pair: Tuple[int, int]
    metadata: dict

    def to_csv_text(self):
        lines = ["delay_um,normalized_coincidence"]
        for t, c in zip(self.delays_um, self.coincidences):
            lines.append(f"{format(float(t), '.15g')},{format(float(c), '.15g')}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        return {
            "fit": self.fit.to_dict(),
            "input_pair": list(self.input_pair),
            "output_pair": list(self.output_pair),
            "metadata": dict(self.metadata),
        }


def hom_scan(
    plan,
    source,
    profile,
    delays_um=None,
    *,
    seed=0,
    arm_delay_um=0.0,
    count_noise_sigma=0.0,
):
    """Simulate a Hong-Ou-Mandel delay scan through one routing plan.

    The mesh transfer is realized once per scan (hardware noise is static
    over a scan); the delay only moves the pairwise overlap x(tau), whose
    envelope is centered on `arm_delay_um`. Raw coincidences are normalized
    by the mean of the 20% of samples farthest from zero delay.
    """
    if profile.n != plan.n:
        raise ValidationError(
            f"profile is for n={profile.n}, plan for n={plan.n}"
        )
    if count_noise_sigma < 0:
        raise ValidationError("count noise sigma must be >= 0")
    if delays_um is None:
        delays_um = default_delay_grid(arm_delay_um)
    d = np.asarray(delays_um, dtype=float)
    if d.ndim != 1 or d.size < MIN_FIT_SAMPLES:
        raise ValidationError(f"scan needs >= {MIN_FIT_SAMPLES} delay samples")
    if not np.all(np.isfinite(d)):
        raise ValidationError("delay samples must be finite")

    settings = plan_to_settings(plan)
    transfer = hardware.realized_transfer(profile, settings, seed=seed)
    m = transfer.elements
    a, b = plan.input_pair
    out_c, out_d = plan.output_pair
    q1 = m[out_c, a] * m[out_d, b]
    q2 = m[out_c, b] * m[out_d, a]
    p_classical = abs(q1) ** 2 + abs(q2) ** 2
    p_interference = 2.0 * (q1 * q2.conjugate()).real
    counts = p_classical + source.overlap_at(d, arm_delay_um) * p_interference
    if count_noise_sigma > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), _COUNT_STREAM])
        )
        counts = counts * (1.0 + count_noise_sigma * rng.standard_normal(d.size))
        counts = np.maximum(counts, 0.0)

    k = max(1, int(round(BASELINE_FRACTION * d.size)))
    far = np.argsort(np.abs(d))[-k:]
    base = float(np.mean(counts[far]))
    if base <= 0:
        raise MeshsimError("scan has no off-dip coincidences to normalize by")
    normalized = counts / base
    fit = fit_gaussian_dip(d, normalized)
    metadata = {
        "target": tuple(plan.target),
        "profile": profile.name,
        "seed": int(seed),
        "arm_delay_um": float(arm_delay_um),
        "count_noise_sigma": float(count_noise_sigma),
        "overlap_at_zero_delay": float(source.mutual_overlap_at_zero_delay),
        "coherence_sigma_um": float(source.coherence_sigma_um),
    }
    d = d.copy()
    d.setflags(write=False)
    normalized.setflags(write=False)
    return HomScan(
        delays_um=d,
        coincidences=normalized,
        fit=fit,
        input_pair=(a, b),
        output_pair=(out_c, out_d),
        metadata=metadata,
    )


def _anova_p(groups):
    groups = [np.asarray(g, dtype=float) for g in groups if len(g) > 0]
    if len(groups) < 2:
        return 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = f_oneway(*groups).pvalue
    return float(p) if np.isfinite(p) else 1.0


@dataclass(frozen=True, eq=False)
class VisibilityMap:
    """Fitted HOM visibility for every cell of the mesh."""

    n: int
    cells: Tuple[mesh.CellAddress, ...]
    visibilities: np.ndarray
    stats: analysis.EnsembleStats
    row_anova_p: float
    column_anova_p: float
    metadata: dict

    def by_cell(self):
        return dict(zip(self.cells, self.visibilities.tolist()))

    def to_json_dict(self):
        return {
            "n": self.n,
            "visibilities": {
                f"c{addr.column:02d}r{addr.row:02d}": float(value)
                for addr, value in zip(self.cells, self.visibilities)
            },
            "stats": self.stats.to_dict(),
            "row_anova_p": self.row_anova_p,
            "column_anova_p": self.column_anova_p,
            "metadata": dict(self.metadata),
        }

    def to_grid_csv_text(self):
        """One row per upper-mode index, one column per mesh column."""
        header = "row," + ",".join(f"c{c:02d}" for c in range(self.n))
        table = {addr: value for addr, value in zip(self.cells, self.visibilities)}
        lines = [header]
        for row in range(self.n - 1):
            cells = []
            for column in range(self.n):
                addr = mesh.CellAddress(column, row)
                value = table.get(addr)
                cells.append("" if value is None else format(float(value), ".15g"))
            lines.append(f"r{row:02d}," + ",".join(cells))
        return "\n".join(lines) + "\n"


def hom_visibility_map(
    n,
    source,
    profile,
    delays_um=None,
    *,
    seed=0,
    count_noise_sigma=0.0,
    workers=None,
):
    """Scan every cell as a routed TBS and map the fitted visibilities.

    Per-cell seeds derive from (seed, cell index), so the worker count
    cannot change the map. Row and column one-way ANOVA p-values probe for
    systematic structure along either mesh axis.
    """
    if profile.n != n:
        raise ValidationError(f"profile is for n={profile.n}, not n={n}")
    cells = tuple(mesh.cell_addresses(n))

    def job(item):
        index, addr = item
        plan = route_to_tbs(n, addr)
        scan = hom_scan(
            plan,
            source,
            profile,
            delays_um,
            seed=child_seed(seed, index),
            count_noise_sigma=count_noise_sigma,
        )
        return scan.fit.visibility

    visibilities = np.array(
        parallel_map(job, enumerate(cells), workers=workers), dtype=float
    )
    rows = [
        visibilities[[i for i, addr in enumerate(cells) if addr.row == row]]
        for row in range(n - 1)
    ]
    columns = [
        visibilities[[i for i, addr in enumerate(cells) if addr.column == col]]
        for col in range(n)
    ]
    stats = analysis.ensemble_statistics(visibilities)
    metadata = {
        "profile": profile.name,
        "seed": int(seed),
        "count_noise_sigma": float(count_noise_sigma),
        "overlap_at_zero_delay": float(source.mutual_overlap_at_zero_delay),
    }
    visibilities.setflags(write=False)
    return VisibilityMap(
        n=n,
        cells=cells,
        visibilities=visibilities,
        stats=stats,
        row_anova_p=_anova_p(rows),
        column_anova_p=_anova_p(columns),
        metadata=metadata,
    )


def diagonal_interferometer_plan(n):
    """Two-arm interferometer spanning the mesh diagonal.

    Photon a holds the top mode then crosses down two rows behind photon b,
    which descends the main diagonal; they recombine at the deepest cell
    reachable by both, (n-1, n-3). The only shared cell is (0, 0), crossed
    in the bar state, so the plan verifies in non-strict mode.
    """
    if n < 3:
        raise ValidationError("diagonal interferometer needs n >= 3")
    states = {addr: BAR for addr in mesh.cell_addresses(n)}
    for c in range(1, n - 2):
        states[mesh.CellAddress(c, c)] = CROSS
    for c in range(2, n - 1):
        states[mesh.CellAddress(c, c - 2)] = CROSS
    target = mesh.CellAddress(n - 1, n - 3)
    states[target] = HALF
    return RoutingPlan(
        n=n,
        target=target,
        input_pair=(0, 1),
        output_pair=(n - 3, n - 2),
        cell_states=states,
    )


def diagonal_arm_heaters(n):
    """Heaters on photon b's exclusive diagonal cells, (1,1) .. (n-2,n-2)."""
    ids = []
    for c in range(1, n - 1):
        for kind in hardware.HEATER_KINDS:
            ids.append(hardware.heater_id(c, c, kind))
    return tuple(ids)


@dataclass(frozen=True, eq=False)
class DelaySweep:
    """Fitted dip centers versus the drive applied to one diagonal arm."""

    n: int
    drive_levels_rad: np.ndarray
    centers_um: np.ndarray
    total_shift_um: float
    per_heater_shift_um: float
    heater_count: int
    driven_heater_ids: Tuple[str, ...]
    input_pair: Tuple[int, int]
    output_pair: Tuple[int, int]
    scans: tuple
    metadata: dict

    def to_json_dict(self):
        return {
            "n": self.n,
            "drive_levels_rad": [float(x) for x in self.drive_levels_rad],
            "centers_um": [float(x) for x in self.centers_um],
            "total_shift_um": self.total_shift_um,
            "per_heater_shift_um": self.per_heater_shift_um,
            "heater_count": self.heater_count,
            "driven_heater_ids": list(self.driven_heater_ids),
            "input_pair": list(self.input_pair),
            "output_pair": list(self.output_pair),
            "metadata": dict(self.metadata),
        }

    def to_csv_text(self):
        lines = ["drive_level_rad,fitted_center_um"]
        for level, center in zip(self.drive_levels_rad, self.centers_um):
            lines.append(
                f"{format(float(level), '.15g')},{format(float(center), '.15g')}"
            )
        return "\n".join(lines) + "\n"


def diagonal_delay_sweep(n, profile, heater_drive_levels_rad, source=None, *, seed=0):
    """Sweep an on-chip delay built from every heater on one diagonal arm.

    Driving a heater by psi stretches the optical path under it by
    psi * lambda / 2pi, so the dip envelope of the big diagonal
    interferometer moves by that amount per heater while the control layer
    holds the interferometric phases at the plan settings. Each drive level
    yields one HOM scan on a grid centered at the expected delay; the
    fitted centers trace the delay line.
    """
    if source is None:
        source = PhotonPairSource()
    if n < 3:
        raise ValidationError("delay sweep needs n >= 3")
    if profile.n != n:
        raise ValidationError(f"profile is for n={profile.n}, not n={n}")
    levels = np.asarray(heater_drive_levels_rad, dtype=float)
    if levels.ndim != 1 or levels.size == 0:
        raise ValidationError("drive levels must be a non-empty 1-d array")
    if not np.all(np.isfinite(levels)):
        raise ValidationError("drive levels must be finite")
    if np.any(levels < 0):
        raise ValidationError("drive levels must be >= 0")

    plan = diagonal_interferometer_plan(n)
    verify_routing(plan, strict=False)
    driven = diagonal_arm_heaters(n)
    max_span = min(profile.heaters[hid].span_rad for hid in driven)
    top = float(np.max(levels))
    if top > max_span + 1e-9:
        raise ValidationError(
            f"drive level {top:.6g} rad exceeds the smallest arm heater span "
            f"{max_span:.6g} rad"
        )

    lam_um = source.center_wavelength_nm * 1e-3
    count = len(driven)
    scans = []
    centers = []
    for index, level in enumerate(levels):
        arm_delay = count * float(level) * lam_um / TWO_PI
        scan = hom_scan(
            plan,
            source,
            profile,
            default_delay_grid(arm_delay),
            seed=child_seed(seed, index),
            arm_delay_um=arm_delay,
        )
        scans.append(scan)
        centers.append(scan.fit.center_um)

    centers = np.asarray(centers, dtype=float)
    total = float(centers[-1] - centers[0])
    span_rad = float(levels[-1] - levels[0])
    per_heater = total / count if count else float("nan")
    metadata = {
        "profile": profile.name,
        "seed": int(seed),
        "lambda_um": lam_um,
        "drive_span_rad": span_rad,
        "expected_um_per_heater_per_rad": lam_um / TWO_PI,
        "delay_model": (
            "drive adds group delay under each driven heater; the "
            "interferometric phases stay locked at the plan settings"
        ),
    }
    levels = levels.copy()
    levels.setflags(write=False)
    centers.setflags(write=False)
    return DelaySweep(
        n=n,
        drive_levels_rad=levels,
        centers_um=centers,
        total_shift_um=total,
        per_heater_shift_um=float(per_heater),
        heater_count=count,
        driven_heater_ids=driven,
        input_pair=plan.input_pair,
        output_pair=plan.output_pair,
        scans=tuple(scans),
        metadata=metadata,
    )
