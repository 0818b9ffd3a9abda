"""Thermo-optic hardware layer: heater models, calibration fringe fits,
crosstalk-aware drive solving, and noisy lossy mesh transfers.

Every heater follows phi = phi0 + alpha * v^2 / R (dissipated power times a
thermo-optic coefficient), and neighboring heaters leak a fraction of their
power into each other's phase. The realized mesh adds static splitting-ratio
disorder and per-run phase-setting jitter on top of the programmed settings.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np
from scipy.optimize import curve_fit

from . import analysis
from .mesh import (
    CellAddress,
    CellSetting,
    MeshSettings,
    TransferMatrix,
    apply_loss,
    bar_settings,
    cell_addresses,
    rows_in_column,
)
from .util import (
    TWO_PI,
    FitDegeneracyError,
    InfeasibleError,
    MeshsimError,
    UnknownHeaterError,
    ValidationError,
    atomic_write_text,
    dumps_canonical,
    parallel_map,
    wrap_phase,
    wrap_signed,
)

HEATER_KINDS = ("theta", "phi")
_HEATER_ID_RE = re.compile(r"^c(\d{2})r(\d{2})\.(theta|phi)$")

DEFAULT_ALPHA_RAD_PER_W = 3.0 * np.pi
DEFAULT_RESISTANCE_OHM = 100.0
DEFAULT_V_MAX_V = 10.0

# calibrated-profile disorder and drift magnitudes, frozen after end-to-end
# fidelity characterization at n=20. Internal (theta) phases are pinned by
# the fringe-visibility calibration and drift little; external (phi) phases
# lack an interferometric reference and carry most of the setting error.
CALIBRATED_SPLITTER_SIGMA_RAD = 0.01
CALIBRATED_THETA_SIGMA_RAD = 0.035
CALIBRATED_PHI_SIGMA_RAD = 0.136
CALIBRATED_PARTNER_CROSSTALK = 0.06
CALIBRATED_NEIGHBOR_CROSSTALK = 0.02
CALIBRATED_COUPLING_LOSS_DB = 0.9
CALIBRATED_PROP_LOSS_DB_PER_CM = 0.07
CALIBRATED_PATH_LENGTH_CM = 15.7

_STATIC_STREAM = 101
_JITTER_STREAM = 202
_SWEEP_STREAM = 303

SOLVE_MAX_SWEEPS = 500


def heater_id(column, row, kind):
    if kind not in HEATER_KINDS:
        raise ValidationError(f"unknown heater kind {kind!r}")
    return f"c{column:02d}r{row:02d}.{kind}"


def parse_heater_id(hid):
    """Split an id like 'c03r04.theta' into (CellAddress, kind)."""
    m = _HEATER_ID_RE.match(hid)
    if m is None:
        raise UnknownHeaterError(f"malformed heater id {hid!r}")
    return CellAddress(int(m.group(1)), int(m.group(2))), m.group(3)


def heater_order(n):
    """Canonical heater ids: cells sorted by (col, row), theta before phi."""
    ids = []
    for addr in cell_addresses(n):
        for kind in HEATER_KINDS:
            ids.append(heater_id(addr.column, addr.row, kind))
    return tuple(ids)


@dataclass(frozen=True)
class HeaterModel:
    """Quadratic voltage-to-phase response of one phase shifter."""

    phi0_rad: float
    alpha_rad_per_w: float
    resistance_ohm: float = DEFAULT_RESISTANCE_OHM
    v_max_v: float = DEFAULT_V_MAX_V

    def __post_init__(self):
        if self.alpha_rad_per_w <= 0:
            raise ValidationError("alpha must be > 0")
        if self.resistance_ohm <= 0:
            raise ValidationError("resistance must be > 0")
        if self.v_max_v <= 0:
            raise ValidationError("v_max must be > 0")

    @property
    def p_max_w(self):
        return self.v_max_v**2 / self.resistance_ohm

    @property
    def span_rad(self):
        """Largest phase swing reachable within the voltage budget."""
        return self.alpha_rad_per_w * self.p_max_w

    def validate(self):
        # full 2*pi addressing needs the span to cover at least one period
        if self.span_rad < TWO_PI:
            raise ValidationError(
                f"heater span {self.span_rad:.3f} rad does not cover 2*pi"
            )


def phase_from_voltage(model, voltage_v, ambient_rad=0.0):
    """Realized phase at a drive voltage, plus any ambient crosstalk term."""
    v = float(voltage_v)
    if v < 0 or v > model.v_max_v * (1 + 1e-12):
        raise ValidationError(
            f"voltage {v:.6f} V outside [0, {model.v_max_v}] V"
        )
    power = v**2 / model.resistance_ohm
    return model.phi0_rad + model.alpha_rad_per_w * power + ambient_rad


@dataclass(frozen=True)
class CrosstalkMatrix:
    """Dense power-to-phase coupling; row i is the phase response of heater i
    to the powers of every heater, so the diagonal holds the direct alphas."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("crosstalk matrix must be square")
        diag = np.diag(m)
        if np.any(diag <= 0):
            raise ValidationError("direct coefficients must be > 0")
        off = m - np.diag(diag)
        worst = np.max(np.abs(off), axis=1)
        if np.any(worst >= diag):
            raise ValidationError(
                "each off-diagonal coupling must stay below the direct term"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def size(self):
        return self.matrix.shape[0]

    def offdiagonal(self):
        return self.matrix - np.diag(np.diag(self.matrix))


@dataclass(frozen=True)
class HardwareProfile:
    """Full device description used by the simulator and the compiler chain."""

    name: str
    n: int
    heaters: Dict[str, HeaterModel]
    crosstalk: CrosstalkMatrix
    coupling_loss_db_per_facet: float = 0.0
    propagation_loss_db_per_cm: float = 0.0
    path_length_cm: float = 0.0
    splitter_error_sigma_rad: float = 0.0
    theta_noise_sigma_rad: float = 0.0
    phi_noise_sigma_rad: float = 0.0
    disorder_seed: int = 0

    def __post_init__(self):
        order = heater_order(self.n)
        if set(self.heaters) != set(order):
            missing = sorted(set(order) - set(self.heaters))
            extra = sorted(set(self.heaters) - set(order))
            raise ValidationError(
                f"heater set mismatch for n={self.n}: "
                f"missing {missing[:3]}, extra {extra[:3]}"
            )
        if self.crosstalk.size != len(order):
            raise ValidationError(
                f"crosstalk is {self.crosstalk.size}x{self.crosstalk.size}, "
                f"expected {len(order)}"
            )
        alphas = np.array([self.heaters[h].alpha_rad_per_w for h in order])
        if not np.allclose(np.diag(self.crosstalk.matrix), alphas, rtol=1e-12):
            raise ValidationError(
                "crosstalk diagonal must equal the heater alphas"
            )
        if (
            self.coupling_loss_db_per_facet < 0
            or self.propagation_loss_db_per_cm < 0
            or self.path_length_cm < 0
        ):
            raise ValidationError("loss figures must be non-negative")
        if (
            self.splitter_error_sigma_rad < 0
            or self.theta_noise_sigma_rad < 0
            or self.phi_noise_sigma_rad < 0
        ):
            raise ValidationError("noise sigmas must be non-negative")

    @property
    def heater_ids(self):
        return heater_order(self.n)

    def heater_array(self, attr):
        """One heater attribute as an ndarray in canonical order."""
        return np.array(
            [getattr(self.heaters[h], attr) for h in self.heater_ids]
        )


def ideal_profile(n):
    """Noise-free, loss-free profile with uniform heaters and no crosstalk."""
    order = heater_order(n)
    heaters = {
        h: HeaterModel(
            phi0_rad=0.0,
            alpha_rad_per_w=DEFAULT_ALPHA_RAD_PER_W,
            resistance_ohm=DEFAULT_RESISTANCE_OHM,
            v_max_v=DEFAULT_V_MAX_V,
        )
        for h in order
    }
    crosstalk = CrosstalkMatrix(
        np.diag(np.full(len(order), DEFAULT_ALPHA_RAD_PER_W))
    )
    return HardwareProfile(
        name="ideal",
        n=n,
        heaters=heaters,
        crosstalk=crosstalk,
    )


def calibrated_profile(n, disorder_seed=0):
    """Device-like profile: spread phi0 offsets, per-heater alphas, thermal
    crosstalk between cell partners and diagonally adjacent cells, and the
    measured loss and noise figures of the 20-mode reference unit."""
    order = heater_order(n)
    rng = np.random.default_rng(np.random.SeedSequence([disorder_seed, 11]))
    phi0 = rng.uniform(0.2, 6.08, len(order))
    alpha = DEFAULT_ALPHA_RAD_PER_W * (1.0 + rng.uniform(0.0, 0.04, len(order)))
    heaters = {
        h: HeaterModel(
            phi0_rad=float(phi0[i]),
            alpha_rad_per_w=float(alpha[i]),
            resistance_ohm=DEFAULT_RESISTANCE_OHM,
            v_max_v=DEFAULT_V_MAX_V,
        )
        for i, h in enumerate(order)
    }

    index = {h: i for i, h in enumerate(order)}
    matrix = np.diag(alpha)
    for i, hid in enumerate(order):
        addr, kind = parse_heater_id(hid)
        partner = heater_id(
            addr.column, addr.row, "phi" if kind == "theta" else "theta"
        )
        matrix[i, index[partner]] = CALIBRATED_PARTNER_CROSSTALK * alpha[i]
        for dc in (-1, 1):
            for dr in (-1, 1):
                neighbor = CellAddress(addr.column + dc, addr.row + dr)
                for nk in HEATER_KINDS:
                    nid = heater_id(neighbor.column, neighbor.row, nk)
                    j = index.get(nid)
                    if j is not None:
                        matrix[i, j] = (
                            CALIBRATED_NEIGHBOR_CROSSTALK * alpha[i]
                        )
    return HardwareProfile(
        name=f"calibrated-{disorder_seed}",
        n=n,
        heaters=heaters,
        crosstalk=CrosstalkMatrix(matrix),
        coupling_loss_db_per_facet=CALIBRATED_COUPLING_LOSS_DB,
        propagation_loss_db_per_cm=CALIBRATED_PROP_LOSS_DB_PER_CM,
        path_length_cm=CALIBRATED_PATH_LENGTH_CM,
        splitter_error_sigma_rad=CALIBRATED_SPLITTER_SIGMA_RAD,
        theta_noise_sigma_rad=CALIBRATED_THETA_SIGMA_RAD,
        phi_noise_sigma_rad=CALIBRATED_PHI_SIGMA_RAD,
        disorder_seed=disorder_seed,
    )


# ---------------------------------------------------------------------------
# calibration: single-heater fringe sweeps and their fits


@dataclass(frozen=True)
class SweepRecord:
    heater_id: str
    voltages_v: np.ndarray
    signal: np.ndarray


def simulate_calibration_sweep(
    profile,
    hid,
    voltages_v=None,
    points=64,
    seed=0,
    detector_noise_sigma=0.0,
):
    """Monitor-port fringe while one heater is swept and all others idle.

    The detected signal is scale * (0.5 + 0.5 * cos(phi(v))) with the scale
    set by the profile's static insertion loss, plus optional Gaussian
    detector noise.
    """
    if hid not in profile.heaters:
        raise UnknownHeaterError(f"profile has no heater {hid!r}")
    model = profile.heaters[hid]
    if voltages_v is None:
        voltages_v = np.linspace(0.0, model.v_max_v, points)
    v = np.asarray(voltages_v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValidationError("voltage grid must be a 1-d array of >= 2 points")
    if np.any(v < 0) or np.any(v > model.v_max_v * (1 + 1e-12)):
        raise ValidationError("voltage grid exceeds the heater's budget")

    il_db = 2 * profile.coupling_loss_db_per_facet + (
        profile.propagation_loss_db_per_cm * profile.path_length_cm
    )
    scale = 10.0 ** (-il_db / 10.0)
    phase = model.phi0_rad + model.alpha_rad_per_w * v**2 / model.resistance_ohm
    signal = scale * (0.5 + 0.5 * np.cos(phase))
    if detector_noise_sigma > 0:
        idx = profile.heater_ids.index(hid)
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), _SWEEP_STREAM, idx])
        )
        signal = signal + rng.normal(0.0, detector_noise_sigma, v.size)
    return SweepRecord(heater_id=hid, voltages_v=v, signal=signal)


@dataclass(frozen=True)
class CalibrationEntry:
    heater_id: str
    phi0_rad: float
    alpha_rad_per_w: float
    residual: float


def _fringe_lstsq(power, signal, alpha):
    basis = np.column_stack(
        [np.ones_like(power), np.cos(alpha * power), np.sin(alpha * power)]
    )
    coef, _, _, _ = np.linalg.lstsq(basis, signal, rcond=None)
    resid = signal - basis @ coef
    return coef, float(np.sqrt(np.mean(resid**2)))


def fit_phase_response(sweep, resistance_ohm):
    """Recover (phi0, alpha) from one fringe sweep.

    Model: signal = A + B * cos(alpha * p + phi0) with p = v^2 / R. A coarse
    FFT stage locates the fringe frequency, a grid of linear least-squares
    fits refines it, and a full nonlinear polish finishes. Raises
    FitDegeneracyError when the data cannot pin the parameters down (too few
    samples, a flat fringe, or a swept span under one period).
    """
    v = np.asarray(sweep.voltages_v, dtype=float)
    signal = np.asarray(sweep.signal, dtype=float)
    if v.size < 8:
        raise FitDegeneracyError(
            f"{sweep.heater_id}: need >= 8 samples, got {v.size}"
        )
    power = v**2 / float(resistance_ohm)
    span = float(np.ptp(power))
    if span <= 0:
        raise FitDegeneracyError(f"{sweep.heater_id}: degenerate voltage grid")
    if float(np.ptp(signal)) < 1e-12:
        raise FitDegeneracyError(f"{sweep.heater_id}: constant signal")

    # power is quadratic in the swept voltage, so resample onto a uniform
    # power grid before asking the FFT for the fringe frequency
    m = 8 * v.size
    p_uniform = np.linspace(power.min(), power.max(), m)
    resampled = np.interp(p_uniform, power, signal)
    spectrum = np.abs(np.fft.rfft(resampled - resampled.mean()))
    k = int(np.argmax(spectrum[1:])) + 1
    alpha_init = TWO_PI * k / (m * (span / (m - 1)))

    best = None
    for alpha in alpha_init * np.linspace(0.75, 1.25, 101):
        coef, rms = _fringe_lstsq(power, signal, alpha)
        if best is None or rms < best[2]:
            best = (alpha, coef, rms)
    alpha0, (a0, c1, c2), _ = best

    def model(p, a, x, y, al):
        return a + x * np.cos(al * p) + y * np.sin(al * p)

    try:
        params, _ = curve_fit(
            model,
            power,
            signal,
            p0=(a0, c1, c2, alpha0),
            maxfev=20000,
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
    except RuntimeError as exc:
        raise FitDegeneracyError(f"{sweep.heater_id}: fit failed: {exc}")
    a, c1, c2, alpha = (float(x) for x in params)
    if alpha < 0:
        alpha, c2 = -alpha, -c2
    amplitude = float(np.hypot(c1, c2))
    if amplitude < 1e-9:
        raise FitDegeneracyError(f"{sweep.heater_id}: vanishing fringe")
    if alpha * span < TWO_PI:
        raise FitDegeneracyError(
            f"{sweep.heater_id}: swept span {alpha * span:.3f} rad "
            "covers less than one fringe period"
        )
    phi0 = wrap_phase(float(np.arctan2(-c2, c1)))
    fitted = model(power, a, c1, c2, alpha)
    rms = float(np.sqrt(np.mean((fitted - signal) ** 2)))
    return CalibrationEntry(
        heater_id=sweep.heater_id,
        phi0_rad=phi0,
        alpha_rad_per_w=alpha,
        residual=rms,
    )


@dataclass(frozen=True)
class CalibrationRecord:
    """Fitted (phi0, alpha) for every heater of one device."""

    entries: Dict[str, CalibrationEntry]

    @classmethod
    def exact_from_profile(cls, profile):
        entries = {
            hid: CalibrationEntry(
                heater_id=hid,
                phi0_rad=wrap_phase(model.phi0_rad),
                alpha_rad_per_w=model.alpha_rad_per_w,
                residual=0.0,
            )
            for hid, model in profile.heaters.items()
        }
        return cls(entries=entries)

    @property
    def max_residual(self):
        return max(e.residual for e in self.entries.values())

    def arrays(self, order):
        phi0 = np.array([self.entries[h].phi0_rad for h in order])
        alpha = np.array([self.entries[h].alpha_rad_per_w for h in order])
        return phi0, alpha

    def to_csv(self):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["heater_id", "phi0_rad", "alpha_rad_per_w", "residual"])
        for hid in sorted(self.entries):
            e = self.entries[hid]
            writer.writerow(
                [
                    hid,
                    format(e.phi0_rad, ".15g"),
                    format(e.alpha_rad_per_w, ".15g"),
                    format(e.residual, ".15g"),
                ]
            )
        return out.getvalue()

    @classmethod
    def from_csv(cls, text):
        entries = {}
        for row in csv.DictReader(io.StringIO(text)):
            entries[row["heater_id"]] = CalibrationEntry(
                heater_id=row["heater_id"],
                phi0_rad=float(row["phi0_rad"]),
                alpha_rad_per_w=float(row["alpha_rad_per_w"]),
                residual=float(row["residual"]),
            )
        return cls(entries=entries)


def calibrate_profile(
    profile, points=64, seed=0, detector_noise_sigma=0.0, workers=None
):
    """Sweep and fit every heater; returns a CalibrationRecord."""

    def one(hid):
        sweep = simulate_calibration_sweep(
            profile,
            hid,
            points=points,
            seed=seed,
            detector_noise_sigma=detector_noise_sigma,
        )
        model = profile.heaters[hid]
        return fit_phase_response(sweep, model.resistance_ohm)

    fitted = parallel_map(one, list(profile.heater_ids), workers=workers)
    return CalibrationRecord(entries={e.heater_id: e for e in fitted})


# ---------------------------------------------------------------------------
# drive solving


@dataclass(frozen=True)
class DriveSolution:
    voltages_v: Dict[str, float]
    powers_w: np.ndarray
    iterations: int
    residual_rad: float


def heater_targets(settings):
    """Commanded heater phases of a compiled program, canonical order."""
    values = []
    for addr in cell_addresses(settings.n):
        cell = settings.cells[addr]
        values.extend([cell.theta, cell.phi])
    return np.array(values)


def settings_from_heater_phases(n, phases, output_phases=None):
    """Inverse of heater_targets: canonical phase vector to MeshSettings."""
    phases = np.asarray(phases, dtype=float)
    addrs = cell_addresses(n)
    if phases.shape != (2 * len(addrs),):
        raise ValidationError(
            f"expected {2 * len(addrs)} heater phases, got {phases.shape}"
        )
    cells = {
        addr: CellSetting(phases[2 * i], phases[2 * i + 1])
        for i, addr in enumerate(addrs)
    }
    return MeshSettings(n=n, cells=cells, output_phases=output_phases)


def _target_vector(profile, target):
    order = profile.heater_ids
    if isinstance(target, Mapping):
        missing = [h for h in order if h not in target]
        if missing:
            raise ValidationError(f"target is missing heaters {missing[:3]}")
        return np.array([float(target[h]) for h in order])
    arr = np.asarray(target, dtype=float)
    if arr.shape != (len(order),):
        raise ValidationError(
            f"target must have {len(order)} phases, got shape {arr.shape}"
        )
    return arr


def solve_voltages(profile, calibration, target):
    """Drive voltages whose realized phases equal the target modulo 2*pi.

    The phase system is linear in the dissipated powers once each heater's
    2*pi branch is fixed: C p = r with C the crosstalk matrix and r the
    unwrapped residuals. Starting from the principal branch, any heater
    whose solved power comes out negative (its crosstalk background already
    overshoots the residual) is moved up one branch and the system is
    re-solved; backgrounds are bounded well below 2*pi, so each heater moves
    at most once. Raises InfeasibleError when a required power exceeds a
    heater's budget.
    """
    order = profile.heater_ids
    t = _target_vector(profile, target)
    phi0, alpha = calibration.arrays(order)
    coupling = np.diag(alpha) + profile.crosstalk.offdiagonal()
    p_max = profile.heater_array("p_max_w")

    residual = wrap_phase(t - phi0)
    for iterations in range(1, SOLVE_MAX_SWEEPS + 1):
        p = np.linalg.solve(coupling, residual)
        below = p < -1e-12
        if not np.any(below):
            break
        residual = residual + np.where(below, TWO_PI, 0.0)
    else:
        raise MeshsimError(
            f"drive solve did not settle on branches in {SOLVE_MAX_SWEEPS} rounds"
        )
    p = np.maximum(p, 0.0)
    check = float(np.max(np.abs(wrap_signed(phi0 + coupling @ p - t))))
    if check > 1e-6:
        raise MeshsimError(f"drive solve left a {check:.3e} rad phase error")

    over = p > p_max * (1 + 1e-12)
    if np.any(over):
        bad = [order[i] for i in np.nonzero(over)[0]]
        raise InfeasibleError(
            f"{len(bad)} heater(s) need more than the voltage budget allows",
            heater_ids=bad,
        )
    resistances = profile.heater_array("resistance_ohm")
    volts = np.sqrt(p * resistances)
    return DriveSolution(
        voltages_v={h: float(volts[i]) for i, h in enumerate(order)},
        powers_w=p,
        iterations=iterations,
        residual_rad=float(check),
    )


def powers_from_voltages(profile, voltages):
    order = profile.heater_ids
    if isinstance(voltages, Mapping):
        v = np.array([float(voltages[h]) for h in order])
    else:
        v = np.asarray(voltages, dtype=float)
    resistances = profile.heater_array("resistance_ohm")
    return v**2 / resistances


def realized_heater_phases(profile, powers_w):
    """True phases produced by a power vector, including crosstalk."""
    p = np.asarray(powers_w, dtype=float)
    phi0 = profile.heater_array("phi0_rad")
    return phi0 + profile.crosstalk.matrix @ p


# ---------------------------------------------------------------------------
# realized (noisy, lossy) transfers


def _coupler(kappa):
    c = np.cos(kappa)
    s = 1j * np.sin(kappa)
    return np.array([[c, s], [s, c]], dtype=complex)


def _noisy_cell(theta, phi, eps, jitter):
    """Physical unit cell: two imperfect 50:50 couplers around the theta
    shifter, preceded by the phi shifter, with per-run phase jitter."""
    inner = _coupler(np.pi / 4 + eps[0])
    outer = _coupler(np.pi / 4 + eps[1])
    p_theta = np.diag([np.exp(1j * (theta + jitter[0])), 1.0])
    p_phi = np.diag([np.exp(1j * (phi + jitter[1])), 1.0])
    return np.exp(-0.5j * np.pi) * (outer @ p_theta @ inner @ p_phi)


def realized_transfer(profile, settings, seed=0):
    """Transfer matrix the device actually implements for a program.

    Static splitting-ratio errors are drawn once per disorder seed, phase
    jitter fresh per run seed, and the loss model matches apply_loss. With
    an ideal profile this equals the programmed mesh to rounding error.
    """
    if settings.n != profile.n:
        raise ValidationError(
            f"settings are for n={settings.n}, profile for n={profile.n}"
        )
    n = profile.n
    addrs = cell_addresses(n)
    static_rng = np.random.default_rng(
        np.random.SeedSequence([int(profile.disorder_seed), _STATIC_STREAM])
    )
    eps = static_rng.normal(
        0.0, profile.splitter_error_sigma_rad, (len(addrs), 2)
    )
    jitter_rng = np.random.default_rng(
        np.random.SeedSequence([int(seed), _JITTER_STREAM])
    )
    jitter = jitter_rng.standard_normal((len(addrs), 2))
    jitter[:, 0] *= profile.theta_noise_sigma_rad
    jitter[:, 1] *= profile.phi_noise_sigma_rad
    cell_index = {addr: i for i, addr in enumerate(addrs)}

    facet_amp = 10.0 ** (-profile.coupling_loss_db_per_facet / 20.0)
    paths = np.broadcast_to(
        np.asarray(profile.path_length_cm, dtype=float), (n,)
    )
    col_amp = 10.0 ** (
        -(profile.propagation_loss_db_per_cm * paths / n) / 20.0
    )

    out = np.eye(n, dtype=complex) * facet_amp
    for column in range(n):
        for row in rows_in_column(n, column):
            i = cell_index[CellAddress(column, row)]
            cell = settings.cells[CellAddress(column, row)]
            t = _noisy_cell(cell.theta, cell.phi, eps[i], jitter[i])
            out[row : row + 2, :] = t @ out[row : row + 2, :]
        out *= col_amp[:, None]
    out = np.exp(1j * settings.output_phases)[:, None] * out
    out *= facet_amp
    return TransferMatrix(n, out, sub_unitary=True)


def measure_amplitude_matrix(profile, settings, seed=0):
    """Amplitude magnitudes as reconstructed from output power fractions.

    Power is measured one input at a time and normalized per column, so the
    result is insensitive to any loss that acts uniformly along a column.
    """
    transfer = realized_transfer(profile, settings, seed=seed)
    probs = np.abs(transfer.elements) ** 2
    sums = probs.sum(axis=0)
    if np.any(sums <= 0):
        raise ValidationError("a column carried no power; cannot normalize")
    return analysis.AmplitudeMatrix(profile.n, np.sqrt(probs / sums))


def insertion_loss_per_mode(profile):
    """Fiber-to-fiber dB loss of each mode with the mesh set to bar."""
    lossy = apply_loss(bar_settings(profile.n), profile)
    amps = np.abs(np.diag(lossy.elements))
    if np.any(amps <= 0):
        raise ValidationError("bar-state transmission vanished on a mode")
    return -20.0 * np.log10(amps)


# ---------------------------------------------------------------------------
# profile serialization


def profile_to_json_dict(profile):
    order = profile.heater_ids
    index = {h: i for i, h in enumerate(order)}
    off = profile.crosstalk.offdiagonal()
    couplings = [
        {"i": order[i], "j": order[j], "rad_per_w": float(off[i, j])}
        for i, j in zip(*np.nonzero(off))
    ]
    couplings.sort(key=lambda c: (index[c["i"]], index[c["j"]]))
    return {
        "name": profile.name,
        "n": profile.n,
        "heaters": [
            {
                "id": hid,
                "phi0_rad": profile.heaters[hid].phi0_rad,
                "alpha_rad_per_w": profile.heaters[hid].alpha_rad_per_w,
                "resistance_ohm": profile.heaters[hid].resistance_ohm,
                "v_max_v": profile.heaters[hid].v_max_v,
            }
            for hid in order
        ],
        "crosstalk_rad_per_w": couplings,
        "coupling_loss_db_per_facet": profile.coupling_loss_db_per_facet,
        "propagation_loss_db_per_cm": profile.propagation_loss_db_per_cm,
        "path_length_cm": profile.path_length_cm,
        "splitter_error_sigma_rad": profile.splitter_error_sigma_rad,
        "theta_noise_sigma_rad": profile.theta_noise_sigma_rad,
        "phi_noise_sigma_rad": profile.phi_noise_sigma_rad,
        "disorder_seed": profile.disorder_seed,
    }


def profile_to_json(profile):
    return dumps_canonical(profile_to_json_dict(profile))


def profile_from_json_dict(doc):
    try:
        n = int(doc["n"])
        heaters = {
            h["id"]: HeaterModel(
                phi0_rad=float(h["phi0_rad"]),
                alpha_rad_per_w=float(h["alpha_rad_per_w"]),
                resistance_ohm=float(h["resistance_ohm"]),
                v_max_v=float(h["v_max_v"]),
            )
            for h in doc["heaters"]
        }
        order = heater_order(n)
        index = {h: i for i, h in enumerate(order)}
        matrix = np.diag(
            np.array([heaters[h].alpha_rad_per_w for h in order])
        )
        for c in doc["crosstalk_rad_per_w"]:
            matrix[index[c["i"]], index[c["j"]]] = float(c["rad_per_w"])
        return HardwareProfile(
            name=str(doc["name"]),
            n=n,
            heaters=heaters,
            crosstalk=CrosstalkMatrix(matrix),
            coupling_loss_db_per_facet=float(doc["coupling_loss_db_per_facet"]),
            propagation_loss_db_per_cm=float(doc["propagation_loss_db_per_cm"]),
            path_length_cm=float(doc["path_length_cm"]),
            splitter_error_sigma_rad=float(doc["splitter_error_sigma_rad"]),
            theta_noise_sigma_rad=float(doc["theta_noise_sigma_rad"]),
            phi_noise_sigma_rad=float(doc["phi_noise_sigma_rad"]),
            disorder_seed=int(doc["disorder_seed"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed profile document: {exc}")


def profile_from_json(text):
    import json

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"profile is not valid JSON: {exc}")
    return profile_from_json_dict(doc)


def write_profile(profile, path):
    atomic_write_text(path, profile_to_json(profile))


def load_profile(path):
    with open(path, "r") as handle:
        return profile_from_json(handle.read())
