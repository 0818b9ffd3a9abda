"""Seeded experiment campaigns with reproducible report artifacts.

Each campaign kind wires the compiler, hardware, quantum and analysis layers
into one configuration-driven run that emits a canonical JSON report plus
plot-ready CSV files. Per-item seeds derive from (campaign seed, item index),
so the worker count can change only the wall-clock time, never the payload.
"""

import datetime
import json
import math
import os
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__, analysis, compiler, hardware, mesh, quantum
from .util import (
    TWO_PI,
    UsageError,
    ValidationError,
    atomic_write_text,
    child_seed,
    dumps_canonical,
    parallel_map,
    wrap_signed,
)

SCHEMA_VERSION = 1

CAMPAIGN_KINDS = (
    "fidelity-haar",
    "fidelity-perm",
    "calibration",
    "hom-map",
    "hom-scan",
    "delay-sweep",
    "loss-report",
    "platform",
)

# kinds whose `count` iterates items; the others require count = 1
_COUNTED_KINDS = {
    "fidelity-haar": 1000,
    "fidelity-perm": 190,
    "calibration": 5,
    "hom-map": 1,
}

_CONFIG_KEYS = {
    "schema_version",
    "kind",
    "n",
    "seed",
    "count",
    "profile",
    "out_dir",
    "params",
}

_PARAM_KEYS = {
    "fidelity-haar": frozenset(),
    "fidelity-perm": frozenset(),
    "calibration": frozenset({"points", "detector_noise_sigma"}),
    "hom-map": frozenset({"overlap", "count_noise_sigma"}),
    "hom-scan": frozenset({"target", "overlap", "count_noise_sigma", "arm_delay_um"}),
    "delay-sweep": frozenset({"levels_rad", "overlap"}),
    "loss-report": frozenset({"loss_per_cell_db"}),
    "platform": frozenset(),
}

_SOLVE_CHECK_STREAM = 909


@dataclass(frozen=True)
class ExperimentConfig:
    """Normalized campaign configuration (see validate_config)."""

    kind: str
    n: int = 20
    seed: int = 0
    count: int = 1
    profile: str = "ideal"
    out_dir: Optional[str] = None
    params: dict = None
    schema_version: int = SCHEMA_VERSION


def _require_int(doc, key, default, minimum):
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise UsageError(f"config field {key!r} must be an integer")
    if value < minimum:
        raise UsageError(f"config field {key!r} must be >= {minimum}, got {value}")
    return value


def _require_number(params, key, default, lo=None, hi=None):
    value = params.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise UsageError(f"param {key!r} must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise UsageError(f"param {key!r} must be finite")
    if lo is not None and value < lo:
        raise UsageError(f"param {key!r} must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise UsageError(f"param {key!r} must be <= {hi}, got {value}")
    return value


def _normalize_params(kind, params, n):
    allowed = _PARAM_KEYS[kind]
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise UsageError(
            f"unknown params for kind {kind!r}: {unknown} (allowed: {sorted(allowed)})"
        )
    out = {}
    if kind == "calibration":
        points = params.get("points", 64)
        if isinstance(points, bool) or not isinstance(points, int) or points < 8:
            raise UsageError("param 'points' must be an integer >= 8")
        out["points"] = points
        out["detector_noise_sigma"] = _require_number(
            params, "detector_noise_sigma", 0.0, lo=0.0
        )
    elif kind in ("hom-map", "hom-scan"):
        out["overlap"] = _require_number(
            params, "overlap", 1.0 / quantum.DEFAULT_SCHMIDT_NUMBER, lo=0.0, hi=1.0
        )
        out["count_noise_sigma"] = _require_number(
            params, "count_noise_sigma", 0.0, lo=0.0
        )
        if kind == "hom-scan":
            target = params.get("target", [0, 0])
            if (
                not isinstance(target, (list, tuple))
                or len(target) != 2
                or any(isinstance(v, bool) or not isinstance(v, int) for v in target)
            ):
                raise UsageError("param 'target' must be [column, row] integers")
            column, row = int(target[0]), int(target[1])
            if not 0 <= column < n - 1 or row not in mesh.rows_in_column(n, column):
                raise UsageError(
                    f"param 'target' ({column}, {row}) is not a cell of an"
                    f" n={n} mesh"
                )
            out["target"] = [column, row]
            out["arm_delay_um"] = _require_number(params, "arm_delay_um", 0.0)
    elif kind == "delay-sweep":
        out["overlap"] = _require_number(
            params, "overlap", 1.0 / quantum.DEFAULT_SCHMIDT_NUMBER, lo=0.0, hi=1.0
        )
        levels = params.get(
            "levels_rad", [k * 0.5 * math.pi for k in range(7)]  # 0 .. 3 pi
        )
        if not isinstance(levels, (list, tuple)) or not levels:
            raise UsageError("param 'levels_rad' must be a non-empty list")
        checked = []
        for value in levels:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise UsageError("param 'levels_rad' entries must be numbers")
            value = float(value)
            if not math.isfinite(value) or value < 0:
                raise UsageError("param 'levels_rad' entries must be finite and >= 0")
            checked.append(value)
        out["levels_rad"] = checked
    elif kind == "loss-report":
        losses = params.get("loss_per_cell_db", [0.1, 0.055])
        if not isinstance(losses, (list, tuple)) or not losses:
            raise UsageError("param 'loss_per_cell_db' must be a non-empty list")
        checked = []
        for value in losses:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise UsageError("param 'loss_per_cell_db' entries must be numbers")
            value = float(value)
            if not value > 0:
                raise UsageError("param 'loss_per_cell_db' entries must be > 0")
            checked.append(value)
        out["loss_per_cell_db"] = checked
    return out


def validate_config(doc):
    """Schema-check a config document and fill defaults.

    Raises UsageError naming the offending field; returns the normalized
    ExperimentConfig.
    """
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise UsageError(f"unsupported schema_version {version!r}")
    kind = doc.get("kind")
    if kind not in CAMPAIGN_KINDS:
        raise UsageError(
            f"config field 'kind' must be one of {list(CAMPAIGN_KINDS)}, got {kind!r}"
        )
    n = _require_int(doc, "n", 20, 2)
    seed = _require_int(doc, "seed", 0, 0)
    count = _require_int(doc, "count", _COUNTED_KINDS.get(kind, 1), 1)
    if kind not in _COUNTED_KINDS and count != 1:
        raise UsageError(f"config field 'count' must be 1 for kind {kind!r}")
    profile = doc.get("profile", "ideal")
    if not isinstance(profile, str) or not profile:
        raise UsageError("config field 'profile' must be a non-empty string")
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise UsageError("config field 'out_dir' must be a string path")
    params_doc = doc.get("params", {})
    if not isinstance(params_doc, dict):
        raise UsageError("config field 'params' must be an object")
    params = _normalize_params(kind, params_doc, n)
    return ExperimentConfig(
        kind=kind,
        n=n,
        seed=seed,
        count=count,
        profile=profile,
        out_dir=out_dir,
        params=params,
        schema_version=SCHEMA_VERSION,
    )


def validate_config_file(path):
    try:
        with open(path, "r") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return validate_config(doc)


def config_to_dict(config):
    return {
        "schema_version": config.schema_version,
        "kind": config.kind,
        "n": config.n,
        "seed": config.seed,
        "count": config.count,
        "profile": config.profile,
        "out_dir": config.out_dir,
        "params": dict(config.params or {}),
    }


def resolve_profile(config, repetition=0):
    """Profile for one campaign repetition.

    "ideal" and "calibrated" are generated on the fly; "calibrated" re-draws
    its static disorder per repetition (seed + repetition) so repeated maps
    probe independent hardware instances. Anything else is a profile JSON
    path.
    """
    ref = config.profile
    if ref == "ideal":
        return hardware.ideal_profile(config.n)
    if ref == "calibrated":
        return hardware.calibrated_profile(
            config.n, disorder_seed=config.seed + repetition
        )
    if not os.path.exists(ref):
        raise UsageError(f"profile file not found: {ref}")
    profile = hardware.load_profile(ref)
    if profile.n != config.n:
        raise UsageError(
            f"profile {ref} is for n={profile.n}, config says n={config.n}"
        )
    return profile


def _csv_text(header, rows):
    lines = [header]
    for row in rows:
        cells = []
        for value in row:
            if isinstance(value, float):
                cells.append(format(value, ".15g"))
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _run_fidelity(config, workers):
    profile = resolve_profile(config)
    calibration = hardware.CalibrationRecord.exact_from_profile(profile)
    if config.kind == "fidelity-perm":
        permutations = compiler.permutation_ensemble(
            config.n, config.count, config.seed
        )
    else:
        permutations = None

    def job(index):
        if permutations is None:
            target = compiler.haar_random(config.n, child_seed(config.seed, index))
        else:
            target = compiler.permutation_unitary(permutations[index])
        decomposed = compiler.clements_decompose(target)
        settings = decomposed.settings
        drive = hardware.solve_voltages(
            profile, calibration, hardware.heater_targets(settings)
        )
        realized = hardware.realized_heater_phases(profile, drive.powers_w)
        realized_settings = hardware.settings_from_heater_phases(
            config.n, realized, output_phases=settings.output_phases
        )
        measured = hardware.measure_amplitude_matrix(
            profile, realized_settings, seed=child_seed(config.seed, index)
        )
        fidelity = analysis.amplitude_fidelity(target, measured)
        error = analysis.error_matrix(target, measured)
        return float(fidelity), float(np.max(np.abs(error)))

    pairs = parallel_map(job, range(config.count), workers=workers)
    fidelities = [p[0] for p in pairs]
    max_errors = [p[1] for p in pairs]
    stats = analysis.ensemble_statistics(fidelities)
    results = {"fidelities": fidelities, "max_error_entries": max_errors}
    if permutations is not None:
        results["permutations"] = [list(p) for p in permutations]
    summary = {
        "fidelity": stats.to_dict(),
        "max_error_entry": max(max_errors),
        "error_entries_above_0p2": int(sum(e >= 0.2 for e in max_errors)),
    }
    csv_files = {
        "fidelities.csv": _csv_text(
            "index,fidelity,max_error_entry",
            [(i, f, e) for i, (f, e) in enumerate(zip(fidelities, max_errors))],
        )
    }
    return results, summary, csv_files


def _run_calibration(config, workers):
    profile = resolve_profile(config)
    record = hardware.calibrate_profile(
        profile,
        points=config.params["points"],
        seed=config.seed,
        detector_noise_sigma=config.params["detector_noise_sigma"],
        workers=workers,
    )
    order = hardware.heater_order(config.n)
    heater_rows = []
    max_phi0_rel = 0.0
    max_alpha_rel = 0.0
    for hid in order:
        true = profile.heaters[hid]
        fit = record.entries[hid]
        phi0_rel = abs(fit.phi0_rad - true.phi0_rad) / abs(true.phi0_rad)
        alpha_rel = abs(fit.alpha_rad_per_w - true.alpha_rad_per_w) / abs(
            true.alpha_rad_per_w
        )
        max_phi0_rel = max(max_phi0_rel, phi0_rel)
        max_alpha_rel = max(max_alpha_rel, alpha_rel)
        heater_rows.append(
            {
                "heater_id": hid,
                "phi0_true_rad": true.phi0_rad,
                "phi0_fit_rad": fit.phi0_rad,
                "alpha_true_rad_per_w": true.alpha_rad_per_w,
                "alpha_fit_rad_per_w": fit.alpha_rad_per_w,
                "residual": fit.residual,
            }
        )

    solve_errors = []
    for check in range(config.count):
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, _SOLVE_CHECK_STREAM, check])
        )
        target = rng.uniform(0.0, TWO_PI, len(order))
        drive = hardware.solve_voltages(profile, record, target)
        realized = hardware.realized_heater_phases(profile, drive.powers_w)
        solve_errors.append(float(np.max(np.abs(wrap_signed(realized - target)))))

    results = {"heaters": heater_rows, "solve_check_errors_rad": solve_errors}
    summary = {
        "max_phi0_rel_error": max_phi0_rel,
        "max_alpha_rel_error": max_alpha_rel,
        "max_fit_residual": record.max_residual,
        "max_solve_error_rad": max(solve_errors) if solve_errors else 0.0,
    }
    csv_files = {
        "calibration.csv": _csv_text(
            "heater_id,phi0_true_rad,phi0_fit_rad,alpha_true_rad_per_w,"
            "alpha_fit_rad_per_w,residual",
            [
                (
                    row["heater_id"],
                    row["phi0_true_rad"],
                    row["phi0_fit_rad"],
                    row["alpha_true_rad_per_w"],
                    row["alpha_fit_rad_per_w"],
                    row["residual"],
                )
                for row in heater_rows
            ],
        )
    }
    return results, summary, csv_files


def _run_hom_map(config, workers):
    source = quantum.PhotonPairSource(
        mutual_overlap_at_zero_delay=config.params["overlap"]
    )
    maps = []
    csv_files = {}
    worst_dev = 0.0
    for repetition in range(config.count):
        profile = resolve_profile(config, repetition)
        vmap = quantum.hom_visibility_map(
            config.n,
            source,
            profile,
            seed=child_seed(config.seed, repetition),
            count_noise_sigma=config.params["count_noise_sigma"],
            workers=workers,
        )
        doc = vmap.to_json_dict()
        doc["repetition"] = repetition
        maps.append(doc)
        worst_dev = max(
            worst_dev,
            float(np.max(np.abs(vmap.visibilities - config.params["overlap"]))),
        )
        csv_files[f"visibility_grid-{repetition:02d}.csv"] = vmap.to_grid_csv_text()
    results = {"maps": maps}
    summary = {
        "repetitions": config.count,
        "min_row_anova_p": min(m["row_anova_p"] for m in maps),
        "min_column_anova_p": min(m["column_anova_p"] for m in maps),
        "mean_visibility": float(
            np.mean([m["stats"]["mean"] for m in maps])
        ),
        "max_abs_deviation_from_overlap": worst_dev,
    }
    return results, summary, csv_files


def _run_hom_scan(config, workers):
    profile = resolve_profile(config)
    source = quantum.PhotonPairSource(
        mutual_overlap_at_zero_delay=config.params["overlap"]
    )
    plan = quantum.route_to_tbs(config.n, tuple(config.params["target"]))
    scan = quantum.hom_scan(
        plan,
        source,
        profile,
        seed=config.seed,
        arm_delay_um=config.params["arm_delay_um"],
        count_noise_sigma=config.params["count_noise_sigma"],
    )
    results = {
        "delays_um": [float(x) for x in scan.delays_um],
        "coincidences": [float(x) for x in scan.coincidences],
        "input_pair": list(scan.input_pair),
        "output_pair": list(scan.output_pair),
    }
    summary = {"fit": scan.fit.to_dict()}
    return results, summary, {"scan.csv": scan.to_csv_text()}


def _run_delay_sweep(config, workers):
    profile = resolve_profile(config)
    source = quantum.PhotonPairSource(
        mutual_overlap_at_zero_delay=config.params["overlap"]
    )
    sweep = quantum.diagonal_delay_sweep(
        config.n,
        profile,
        config.params["levels_rad"],
        source=source,
        seed=config.seed,
    )
    results = {
        "drive_levels_rad": [float(x) for x in sweep.drive_levels_rad],
        "centers_um": [float(x) for x in sweep.centers_um],
        "driven_heater_ids": list(sweep.driven_heater_ids),
        "input_pair": list(sweep.input_pair),
        "output_pair": list(sweep.output_pair),
    }
    summary = {
        "total_shift_um": sweep.total_shift_um,
        "per_heater_shift_um": sweep.per_heater_shift_um,
        "heater_count": sweep.heater_count,
    }
    return results, summary, {"sweep.csv": sweep.to_csv_text()}


def _run_loss_report(config, workers):
    profile = resolve_profile(config)
    per_mode = hardware.insertion_loss_per_mode(profile)
    sizes = {
        format(loss, ".15g"): analysis.useful_processor_size(loss)
        for loss in config.params["loss_per_cell_db"]
    }
    results = {
        "per_mode_insertion_loss_db": [float(x) for x in per_mode],
        "useful_processor_sizes": sizes,
    }
    summary = {
        "mean_insertion_loss_db": float(np.mean(per_mode)),
        "min_insertion_loss_db": float(np.min(per_mode)),
        "max_insertion_loss_db": float(np.max(per_mode)),
    }
    csv_files = {
        "loss.csv": _csv_text(
            "mode,insertion_loss_db",
            [(m, float(v)) for m, v in enumerate(per_mode)],
        )
    }
    return results, summary, csv_files


def _run_platform(config, workers):
    entries = analysis.load_platform_dataset()
    report = analysis.platform_report(entries)
    summary = {
        "best_platform": report["best_platform"],
        "platform_count": len(report["platforms"]),
    }
    csv_files = {
        "platforms.csv": _csv_text(
            "name,platform,modes,loss_per_unit_cell_db,insertion_loss_db,"
            "useful_processor_size,citation,approximate",
            [
                (
                    row["name"],
                    row["platform"],
                    row["modes"],
                    float(row["loss_per_unit_cell_db"]),
                    float(row["insertion_loss_db"]),
                    row["useful_processor_size"],
                    row["citation"],
                    "yes" if row["approximate"] else "no",
                )
                for row in report["platforms"]
            ],
        )
    }
    return report, summary, csv_files


_RUNNERS = {
    "fidelity-haar": _run_fidelity,
    "fidelity-perm": _run_fidelity,
    "calibration": _run_calibration,
    "hom-map": _run_hom_map,
    "hom-scan": _run_hom_scan,
    "delay-sweep": _run_delay_sweep,
    "loss-report": _run_loss_report,
    "platform": _run_platform,
}


def run_campaign_with_artifacts(config, workers=None):
    """Run one campaign; returns (report, csv_files).

    When out_dir is set the report and CSVs are also written there
    atomically. Everything outside the report's "meta" block is a pure
    function of the config, so identical configs give identical payloads
    regardless of the worker count (see report_payload_bytes).
    """
    started = time.time()
    started_utc = datetime.datetime.now(datetime.timezone.utc).isoformat()
    runner = _RUNNERS[config.kind]
    results, summary, csv_files = runner(config, workers)
    artifact_names = ["report.json"] + sorted(csv_files)
    report = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "config": config_to_dict(config),
        "results": results,
        "summary": summary,
        "artifacts": artifact_names,
        "meta": {
            "started_utc": started_utc,
            "duration_s": time.time() - started,
            "workers": workers,
        },
    }
    if config.out_dir:
        atomic_write_text(
            os.path.join(config.out_dir, "report.json"), dumps_canonical(report)
        )
        for name, text in csv_files.items():
            atomic_write_text(os.path.join(config.out_dir, name), text)
    return report, csv_files


def run_campaign(config, workers=None):
    """run_campaign_with_artifacts, keeping only the report."""
    report, _ = run_campaign_with_artifacts(config, workers=workers)
    return report


def report_payload_bytes(report):
    """Canonical bytes of a report with the timing metadata stripped."""
    payload = {key: value for key, value in report.items() if key != "meta"}
    return dumps_canonical(payload).encode()


def primary_csv_name(kind):
    return {
        "fidelity-haar": "fidelities.csv",
        "fidelity-perm": "fidelities.csv",
        "calibration": "calibration.csv",
        "hom-map": "visibility_grid-00.csv",
        "hom-scan": "scan.csv",
        "delay-sweep": "sweep.csv",
        "loss-report": "loss.csv",
        "platform": "platforms.csv",
    }[kind]


def unitary_to_json_dict(u):
    """Plain JSON document for a unitary: split real and imaginary parts."""
    elements = u.elements if isinstance(u, mesh.Unitary) else np.asarray(u, complex)
    return {
        "n": int(elements.shape[0]),
        "re": [[float(v) for v in row] for row in elements.real],
        "im": [[float(v) for v in row] for row in elements.imag],
    }


def unitary_from_json_dict(doc):
    if not isinstance(doc, dict) or not {"n", "re", "im"} <= set(doc):
        raise ValidationError("unitary document needs keys n, re, im")
    n = int(doc["n"])
    re = np.asarray(doc["re"], dtype=float)
    im = np.asarray(doc["im"], dtype=float)
    if re.shape != (n, n) or im.shape != (n, n):
        raise ValidationError(
            f"unitary document shape mismatch: n={n}, re {re.shape}, im {im.shape}"
        )
    return mesh.Unitary(n, re + 1j * im)
