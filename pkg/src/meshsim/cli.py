"""Command line front end.

Exit codes: 0 on success, 1 on a campaign failure (infeasible solve, fit
degeneracy, hardware error), 2 on a usage error (bad flags, malformed or
inconsistent config). Campaign subcommands read an optional JSON config,
apply flag overrides, and print the report to stdout; artifacts are written
only when an output directory is chosen via --out, the config, or
MESHSIM_OUT_DIR.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, compiler, experiments, mesh
from .util import (
    MeshsimError,
    UsageError,
    atomic_write_text,
    child_seed,
    dumps_canonical,
)

OUT_DIR_ENV = "MESHSIM_OUT_DIR"

# subcommand -> campaign kind ("fidelity" resolves via --ensemble)
_CAMPAIGN_SUBCOMMANDS = {
    "fidelity": None,
    "calibrate": "calibration",
    "hom-map": "hom-map",
    "hom-scan": "hom-scan",
    "delay-sweep": "delay-sweep",
    "loss": "loss-report",
    "platform": "platform",
}


def _add_common_flags(parser):
    parser.add_argument("--config", metavar="PATH", help="campaign config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", metavar="DIR", help="artifact output directory")
    parser.add_argument("--workers", type=int, help="parallel worker count")
    parser.add_argument(
        "--format",
        choices=("json", "csv"),
        default="json",
        help="stdout format (default json)",
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="meshsim",
        description="Simulate and characterize rectangular interferometer meshes.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="decompose a unitary into mesh settings")
    p.add_argument("--input", metavar="PATH", required=True, help="unitary JSON")
    _add_common_flags(p)

    p = sub.add_parser("haar", help="draw Haar-random target unitaries")
    p.add_argument("--n", type=int, default=20, help="mode count (default 20)")
    p.add_argument("--count", type=int, default=1, help="ensemble size (default 1)")
    _add_common_flags(p)

    p = sub.add_parser("perm", help="draw distinct permutation targets")
    p.add_argument("--n", type=int, default=20, help="mode count (default 20)")
    p.add_argument("--count", type=int, default=1, help="ensemble size (default 1)")
    _add_common_flags(p)

    p = sub.add_parser("fidelity", help="run a fidelity campaign")
    p.add_argument(
        "--ensemble",
        choices=("haar", "perm"),
        default="haar",
        help="target ensemble (default haar)",
    )
    p.add_argument("--count", type=int, help="override the config ensemble size")
    _add_common_flags(p)

    for name, help_text in (
        ("calibrate", "fit heater responses and check the phase solver"),
        ("hom-map", "two-photon visibility map over every unit cell"),
        ("hom-scan", "single two-photon dip scan at one target cell"),
        ("delay-sweep", "track the dip center while driving the diagonal arm"),
        ("loss", "insertion loss budget per mode"),
        ("platform", "cross-platform loss comparison table"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)

    return parser


def _load_config_doc(path):
    if path is None:
        return {}
    try:
        with open(path, "r") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return doc


def _resolved_out_dir(args, doc):
    if args.out:
        return args.out
    if doc.get("out_dir"):
        return doc["out_dir"]
    return os.environ.get(OUT_DIR_ENV) or None


def _run_campaign_command(args, kind):
    doc = _load_config_doc(args.config)
    if "kind" in doc and doc["kind"] != kind:
        raise UsageError(
            f"config kind {doc['kind']!r} conflicts with subcommand kind {kind!r}"
        )
    doc["kind"] = kind
    if args.seed is not None:
        doc["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        doc["count"] = args.count
    doc["out_dir"] = _resolved_out_dir(args, doc)
    config = experiments.validate_config(doc)
    report, csv_files = experiments.run_campaign_with_artifacts(
        config, workers=args.workers
    )
    if args.format == "csv":
        sys.stdout.write(csv_files[experiments.primary_csv_name(kind)])
    else:
        sys.stdout.write(dumps_canonical(report))
    return 0


def _run_compile(args):
    try:
        with open(args.input, "r") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise UsageError(f"cannot read unitary {args.input}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"unitary {args.input} is not valid JSON: {exc}") from exc
    try:
        target = experiments.unitary_from_json_dict(doc)
    except MeshsimError as exc:
        raise UsageError(str(exc)) from exc
    report = compiler.clements_decompose(target)
    out = {
        "settings": mesh.settings_to_json_dict(report.settings),
        "max_abs_residual": float(np.max(np.abs(report.residual))),
    }
    out_dir = _resolved_out_dir(args, {})
    if out_dir:
        atomic_write_text(
            os.path.join(out_dir, "settings.json"), dumps_canonical(out)
        )
    sys.stdout.write(dumps_canonical(out))
    return 0


def _run_ensemble(args, kind):
    if args.n < 2:
        raise UsageError(f"--n must be >= 2, got {args.n}")
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    seed = args.seed if args.seed is not None else 0
    out_dir = _resolved_out_dir(args, {})
    manifest_kind = "permutation" if kind == "perm" else kind
    manifest = compiler.ensemble_manifest(manifest_kind, args.n, seed, args.count)
    artifacts = []
    if kind == "haar":
        for index in range(args.count):
            u = compiler.haar_random(args.n, child_seed(seed, index))
            name = f"haar-{index:03d}.json"
            artifacts.append(name)
            if out_dir:
                atomic_write_text(
                    os.path.join(out_dir, name),
                    dumps_canonical(experiments.unitary_to_json_dict(u)),
                )
    else:
        perms = compiler.permutation_ensemble(args.n, args.count, seed)
        for index, perm in enumerate(perms):
            name = f"perm-{index:03d}.json"
            artifacts.append(name)
            if out_dir:
                atomic_write_text(
                    os.path.join(out_dir, name),
                    dumps_canonical({"n": args.n, "permutation": list(perm)}),
                )
    manifest["artifacts"] = artifacts if out_dir else []
    sys.stdout.write(dumps_canonical(manifest))
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "compile":
            return _run_compile(args)
        if args.command in ("haar", "perm"):
            return _run_ensemble(args, args.command)
        if args.command == "fidelity":
            kind = "fidelity-haar" if args.ensemble == "haar" else "fidelity-perm"
        else:
            kind = _CAMPAIGN_SUBCOMMANDS[args.command]
        return _run_campaign_command(args, kind)
    except UsageError as exc:
        print(f"meshsim: error: {exc}", file=sys.stderr)
        return 2
    except MeshsimError as exc:
        print(f"meshsim: campaign failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
