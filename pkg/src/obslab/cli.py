"""Command-line front end: runs scenarios through the instruments and emits
JSON/CSV reports.

Subcommands
-----------
rank     instantaneous Lie-derivative rank analysis at the scenario start
gramian  empirical observability Gramian over the simulated trajectory
ekf      error-state filter covariance study over the same trajectory
table1   all scenarios through all three instruments, with the condition
         columns and the contradiction flag

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ekf as ekf_mod
from . import gramian as gramian_mod
from . import model
from . import scenarios as scn
from .config import (ConfigError, build_ekf_config, build_scenario,
                     load_config, resolve_config)
from .ekf import EKFDivergenceError
from .lie import NumericalFailureError, ObservabilityRequest, observability_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CONTRADICTION_NOTE = ("instantaneous rank analysis reports full rank while the "
                      "trajectory Gramian reports a deficient subspace. "
                      "This is a contradiction.")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row) + "\n")


def _spectrum_rows(values: np.ndarray):
    vmax = values[0] if len(values) else 1.0
    return [(i, float(v), float(v / vmax)) for i, v in enumerate(values)]


def _engine_request(cfg: dict, spec: scn.ScenarioSpec) -> ObservabilityRequest:
    eng = cfg["engine"]
    return ObservabilityRequest(
        x=model.pack(spec.x0), u=scn.initial_input(spec).packed(),
        max_order=eng["max_order"], mode=eng["mode"],
        rank_tol=eng["rank_tol"], row_normalize=eng["row_normalize"])


def cmd_rank(cfg: dict, out_dir: str) -> dict:
    spec = build_scenario(cfg)
    sys_ = model.calibration_system(spec.params)
    report = observability_report(sys_, _engine_request(cfg, spec))
    payload = report.to_dict()
    payload["scenario"] = spec.scenario_id
    payload["config"] = cfg
    _write_json(os.path.join(out_dir, "report.json"), payload)
    _write_csv(os.path.join(out_dir, "singular_values.csv"),
               ("index", "value", "ratio_to_max"),
               _spectrum_rows(report.singular_values))
    return payload


def cmd_gramian(cfg: dict, out_dir: str) -> dict:
    spec = build_scenario(cfg)
    traj = scn.simulate(spec)
    gram = gramian_mod.empirical_gramian(traj, spec.params)
    d = scn.ambiguity_direction(spec.x0, spec.profiles[0].axis)
    alignment = gramian_mod.gramian_alignment(gram, d)
    payload = {
        "scenario": spec.scenario_id,
        "duration": spec.duration,
        "dt": spec.dt,
        "eigenvalues": [float(v) for v in gram.eigenvalues],
        "deficiency_tol": gramian_mod.DEFICIENCY_TOL,
        "deficient_dim": gram.deficiency(),
        "deficient_basis": [[float(v) for v in col]
                            for col in gram.deficient_basis().T],
        "ambiguity_alignment": alignment,
        "ambiguity_direction": [float(v) for v in d.d],
        "config": cfg,
    }
    _write_json(os.path.join(out_dir, "gramian.json"), payload)
    _write_csv(os.path.join(out_dir, "eigvals.csv"),
               ("index", "value", "ratio_to_max"),
               _spectrum_rows(gram.eigenvalues))
    return payload


def _csv_header() -> list[str]:
    cols = ["t"]
    for name, _ in ekf_mod.ERROR_BLOCKS:
        cols += [f"std_{name}_{i}" for i in range(3)]
    cols.append("sigma_d")
    return cols


def cmd_ekf(cfg: dict, out_dir: str) -> dict:
    spec = build_scenario(cfg)
    traj = scn.simulate(spec)
    ekf_cfg = build_ekf_config(cfg)
    d = scn.ambiguity_direction(spec.x0, spec.profiles[0].axis)
    directions = {"d": d.d}
    complement = ekf_mod.position_subspace_complement(d.d)
    for j, vec in enumerate(complement):
        directions[f"d_perp_{j}"] = vec
    hist = ekf_mod.run_ekf(traj, ekf_cfg, spec.params, directions=directions)

    stds = hist.block_stds()
    rows = []
    for i, t in enumerate(hist.times):
        rows.append([float(t)] + [float(v) for v in stds[i]]
                    + [float(hist.direction_traces["d"][i])])
    _write_csv(os.path.join(out_dir, "covariance_history.csv"), _csv_header(), rows)

    perp = [hist.direction_shrinkage(f"d_perp_{j}") for j in range(len(complement))]
    summary = {
        "scenario": spec.scenario_id,
        "duration": spec.duration,
        "block_shrinkage": {name: hist.shrinkage(name)
                            for name, _ in ekf_mod.ERROR_BLOCKS},
        "d_shrinkage": hist.direction_shrinkage("d"),
        "d_sigma_initial": float(hist.direction_traces["d"][0]),
        "d_sigma_final": float(hist.direction_traces["d"][-1]),
        "complement_shrinkages": perp,
        "complement_median_shrinkage": float(np.median(perp)),
        "config": cfg,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def _verdict_row(cfg: dict, scenario_id: str) -> dict:
    row_cfg = json.loads(json.dumps(cfg))
    row_cfg["scenario"] = {"id": scenario_id}
    spec = build_scenario(row_cfg)
    u0 = scn.initial_input(spec)
    cls = scn.classify_input(u0.omega_m)
    sys_ = model.calibration_system(spec.params)
    report = observability_report(sys_, _engine_request(row_cfg, spec))

    traj = scn.simulate(spec)
    gram = gramian_mod.empirical_gramian(traj, spec.params)
    d = scn.ambiguity_direction(spec.x0, spec.profiles[0].axis)
    alignment = gramian_mod.gramian_alignment(gram, d)

    ekf_cfg = build_ekf_config(row_cfg)
    hist = ekf_mod.run_ekf(traj, ekf_cfg, spec.params, directions={"d": d.d})

    full = report.rank == model.DIM
    deficient = gram.deficiency() > 0
    row = {
        "scenario": scenario_id,
        "two_axes_condition": scn.satisfies_two_axes(spec.profiles),
        "axes_span_dim": scn.axes_span_dim(spec.profiles),
        "instant_nonzero_rate_components": cls.nonzero_count,
        "two_component_condition_at_start": cls.two_nonzero_components,
        "per_profile_nonzero_components": [
            scn.classify_input(p.omega).nonzero_count for p in spec.profiles],
        "lie_rank": report.rank,
        "lie_mode": report.request.mode,
        "lie_max_order": report.request.max_order,
        "gramian_deficient_dim": gram.deficiency(),
        "ambiguity_alignment": alignment,
        "ekf_d_shrinkage": hist.direction_shrinkage("d"),
        "contradiction": bool(full and deficient),
    }
    if row["contradiction"]:
        row["note"] = CONTRADICTION_NOTE
    return row


def _format_table(rows: list[dict]) -> str:
    cols = [("scenario", "scenario"), ("two_axes_condition", "two_axes"),
            ("two_component_condition_at_start", "two_components@t0"),
            ("lie_rank", "lie_rank"), ("gramian_deficient_dim", "gramian_defic"),
            ("ambiguity_alignment", "align_d"), ("ekf_d_shrinkage", "ekf_d_shrink"),
            ("contradiction", "contradiction")]
    table = [[h for _, h in cols]]
    for row in rows:
        cells = []
        for key, _ in cols:
            val = row.get(key, "error")
            if isinstance(val, float):
                val = f"{val:.3f}"
            cells.append(str(val))
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
             for r in table]
    flagged = [r for r in rows if r.get("contradiction")]
    if flagged:
        ids = ", ".join(r["scenario"] for r in flagged)
        lines.append("")
        lines.append(f"flagged {ids}: {CONTRADICTION_NOTE}")
    return "\n".join(lines) + "\n"


def cmd_table1(cfg: dict, out_dir: str) -> dict:
    rows = []
    failures = {}
    for sid in scn.SCENARIO_IDS:
        try:
            rows.append(_verdict_row(cfg, sid))
        except (NumericalFailureError, EKFDivergenceError, ValueError) as exc:
            failures[sid] = str(exc)
            rows.append({"scenario": sid, "error": str(exc)})
    payload = {"rows": rows, "failures": failures, "config": cfg}
    _write_json(os.path.join(out_dir, "table1.json"), payload)
    text = _format_table(rows)
    with open(os.path.join(out_dir, "table1.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    if failures:
        raise NumericalFailureError(f"scenario failures: {sorted(failures)}")
    return payload


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obslab",
        description="observability laboratory for IMU-camera calibration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("rank", cmd_rank), ("gramian", cmd_gramian),
                     ("ekf", cmd_ekf), ("table1", cmd_table1)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--scenario", choices=scn.SCENARIO_IDS,
                       help="override the configured scenario id")
        p.add_argument("--mode", choices=("full", "excited"),
                       help="override the engine row-inclusion mode")
        p.add_argument("--order", type=int, help="override engine max_order")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="override the output directory")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else resolve_config({})
        if args.scenario:
            cfg["scenario"] = {"id": args.scenario}
        if args.mode:
            cfg["engine"]["mode"] = args.mode
        if args.order is not None:
            if not 0 <= args.order <= 6:
                raise ConfigError("--order must be in [0, 6]")
            cfg["engine"]["max_order"] = args.order
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out:
            cfg["out_dir"] = args.out
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = cfg["out_dir"]
    try:
        os.makedirs(out_dir, exist_ok=True)
        args.fn(cfg, out_dir)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EKFDivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalFailureError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
