"""Batch experiment harness: config-driven solves, operator validation, scans.

Configs are strict JSON (unknown keys rejected). Every run writes a config
echo next to its outputs; CSV rows carry no wall-clock so identical configs
produce bit-identical files. Exit codes: 0 success, 2 config error, 3 solver
non-convergence, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import validation
from .circle import CircleProblem, rotation_number, solve
from .errors import (
    ConfigError,
    DegenerateEmbeddingError,
    DiffeomorphismLostError,
    EnergyDriftError,
    MaxIterExceededError,
    NonContractiveError,
    NonzeroMeanError,
    ParatorusError,
    ResonantModeError,
)
from .hamtorus import HamiltonianData, flow_oracle, solve_torus
from .reporting import fmt
from .smalldiv import (
    FrequencyVector,
    RotationAngle,
    certify_diophantine,
    certify_rotation_angle,
)
from .spectral import (
    MatrixField,
    SpectralField,
    TorusGrid,
    VectorField,
    field_from_json,
    field_to_json,
)

_SOLVER_ERRORS = (
    MaxIterExceededError,
    NonContractiveError,
    DiffeomorphismLostError,
    DegenerateEmbeddingError,
    ResonantModeError,
    NonzeroMeanError,
    EnergyDriftError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INTERNAL = 4


def _require_keys(obj: dict, allowed: dict, path: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = {k for k, required in allowed.items() if required and k not in obj}
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")


def _field_from_modes_config(grid: TorusGrid, modes, path: str) -> SpectralField:
    """Trig-polynomial input as [{k, re, im}]; Hermitian symmetry validated."""
    if not isinstance(modes, list):
        raise ConfigError(f"{path}: expected a list of mode entries")
    for e in modes:
        _require_keys(e, {"k": True, "re": True, "im": True}, path)
    doc = {"dim": grid.dim, "K": grid.max_mode, "coeffs": modes}
    try:
        f = field_from_json(doc, points_per_dim=grid.points_per_dim)
    except ParatorusError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return f


def _parse_grid(cfg, kind: str) -> TorusGrid:
    _require_keys(cfg, {"dim": True, "K": True, "points": False}, "grid")
    try:
        return TorusGrid.create(int(cfg["dim"]), int(cfg["K"]), cfg.get("points"))
    except ValueError as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _parse_solver(cfg, modes, default_mode, path="solver"):
    cfg = cfg or {}
    _require_keys(
        cfg, {"s": False, "tol": False, "max_iter": False, "mode": False}, path
    )
    mode = cfg.get("mode", default_mode)
    if mode not in modes:
        raise ConfigError(f"{path}.mode: {mode!r} not in {modes}")
    return {
        "s": float(cfg.get("s", 3.0)),
        "tol": float(cfg.get("tol", 1e-10)),
        "max_iter": int(cfg.get("max_iter", 40)),
        "mode": mode,
    }


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_rows_csv(path: Path, columns, rows, summary: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(["row_kind"] + columns) + "\n")
        for row in rows:
            fh.write(",".join(["row"] + [fmt(row[c]) for c in columns]) + "\n")
        cells = ["summary"] + [f"{k}={fmt(v)}" for k, v in sorted(summary.items())]
        fh.write(",".join(cells) + "\n")


# --- circle -------------------------------------------------------------------


def run_circle(cfg: dict, out: Path, seed: int) -> int:
    _require_keys(
        cfg,
        {"kind": True, "grid": True, "frequency": True, "problem": True,
         "solver": False, "outputs": False},
        "config",
    )
    grid = _parse_grid(cfg["grid"], "circle")
    if grid.dim != 1:
        raise ConfigError("circle experiments need grid.dim = 1")
    _require_keys(cfg["frequency"], {"alpha": True, "sigma": True}, "frequency")
    alpha = RotationAngle.certify(
        float(cfg["frequency"]["alpha"]), float(cfg["frequency"]["sigma"]), grid.max_mode
    )
    _require_keys(cfg["problem"], {"f_modes": True}, "problem")
    f = _field_from_modes_config(grid, cfg["problem"]["f_modes"], "problem.f_modes")
    sv = _parse_solver(cfg.get("solver"), ("standard", "refined", "naive"), "standard")
    outputs = cfg.get("outputs") or {}
    _require_keys(
        outputs,
        {"csv": False, "field_dump": False, "rotation_oracle_iterations": False},
        "outputs",
    )
    problem = CircleProblem(alpha=alpha, f=f, **sv)
    sol = solve(problem)
    rep = sol.report
    rep.extras["gamma"] = alpha.gamma
    orbit_m = int(outputs.get("rotation_oracle_iterations", 0))
    if orbit_m:
        rho = rotation_number(alpha.alpha, f, sol.lam, orbit_m)
        rep.extras["rotation_defect"] = abs(rho - alpha.alpha)
    rep.write_csv(out / outputs.get("csv", "circle.csv"))
    _write_json(out / outputs.get("field_dump", "circle_solution.json"), field_to_json(sol.u))
    print(f"circle: converged in {rep.iterations} iterations, "
          f"residual_sup = {rep.extras['residual_sup']:.3e} (wall {rep.wall_time:.2f}s)")
    return EXIT_OK


# --- torus --------------------------------------------------------------------


def _parse_vector_of_fields(grid, cfg, n, path) -> VectorField:
    if isinstance(cfg, dict) and "constant" in cfg:
        _require_keys(cfg, {"constant": True}, path)
        vals = cfg["constant"]
        if len(vals) != n:
            raise ConfigError(f"{path}.constant must have {n} entries")
        return VectorField([SpectralField.constant(grid, float(v)) for v in vals])
    if isinstance(cfg, dict) and "components" in cfg:
        _require_keys(cfg, {"components": True}, path)
        comps = cfg["components"]
        if len(comps) != n:
            raise ConfigError(f"{path}.components must have {n} entries")
        return VectorField(
            [_field_from_modes_config(grid, c, f"{path}[{i}]") for i, c in enumerate(comps)]
        )
    raise ConfigError(f"{path}: expected 'constant' or 'components'")


def _parse_matrix_of_fields(grid, cfg, n, path) -> MatrixField:
    if isinstance(cfg, dict) and "constant" in cfg:
        _require_keys(cfg, {"constant": True}, path)
        mat = np.asarray(cfg["constant"], dtype=float)
        if mat.shape != (n, n):
            raise ConfigError(f"{path}.constant must be {n}x{n}")
        return MatrixField.constant(grid, mat)
    if isinstance(cfg, dict) and "entries" in cfg:
        _require_keys(cfg, {"entries": True}, path)
        ent = cfg["entries"]
        return MatrixField(
            [
                [_field_from_modes_config(grid, ent[i][j], f"{path}[{i}][{j}]") for j in range(n)]
                for i in range(n)
            ]
        )
    raise ConfigError(f"{path}: expected 'constant' or 'entries'")


def run_torus(cfg: dict, out: Path, seed: int) -> int:
    _require_keys(
        cfg,
        {"kind": True, "grid": True, "frequency": True, "problem": True,
         "solver": False, "outputs": False},
        "config",
    )
    grid = _parse_grid(cfg["grid"], "torus")
    _require_keys(cfg["frequency"], {"omega": True, "sigma": True}, "frequency")
    omega_list = cfg["frequency"]["omega"]
    if len(omega_list) != grid.dim:
        raise ConfigError("frequency.omega length must match grid.dim")
    omega = FrequencyVector.certify(
        [float(w) for w in omega_list], float(cfg["frequency"]["sigma"]), grid.max_mode
    )
    prob = cfg["problem"]
    _require_keys(prob, {"a0_modes": True, "a1": True, "Q": True}, "problem")
    n = grid.dim
    h = HamiltonianData(
        a0=_field_from_modes_config(grid, prob["a0_modes"], "problem.a0_modes"),
        a1=_parse_vector_of_fields(grid, prob["a1"], n, "problem.a1"),
        Q=_parse_matrix_of_fields(grid, prob["Q"], n, "problem.Q"),
    )
    sv = _parse_solver(cfg.get("solver"), ("thm1", "thm2"), "thm1")
    outputs = cfg.get("outputs") or {}
    _require_keys(outputs, {"csv": False, "field_dump": False, "flow_oracle": False}, "outputs")
    sol = solve_torus(
        h, omega, mode=sv["mode"], s=sv["s"], tol=sv["tol"], max_iter=sv["max_iter"]
    )
    rep = sol.report
    oracle = outputs.get("flow_oracle")
    if oracle:
        _require_keys(oracle, {"theta0": True, "T": True, "dt": True}, "outputs.flow_oracle")
        dev = flow_oracle(
            h, sol.u, sol.xi, omega,
            theta0=[float(t) for t in oracle["theta0"]],
            T=float(oracle["T"]), dt=float(oracle["dt"]),
        )
        rep.extras["flow_deviation"] = dev
    rep.write_csv(out / outputs.get("csv", "torus.csv"))
    dump = {
        "ux": [field_to_json(f) for f in sol.u.ux],
        "uy": [field_to_json(f) for f in sol.u.uy],
        "xi": [float(x) for x in sol.xi],
        "mu": [float(m) for m in sol.mu],
    }
    _write_json(out / outputs.get("field_dump", "torus_solution.json"), dump)
    print(f"torus[{sv['mode']}]: converged in {rep.iterations} iterations, "
          f"residual_sup = {rep.extras['residual_sup']:.3e} (wall {rep.wall_time:.2f}s)")
    return EXIT_OK


# --- validate-ops ----------------------------------------------------------------


def run_validate_ops(cfg: dict, out: Path, seed: int) -> int:
    _require_keys(cfg, {"kind": True, "grid": False, "probes": False, "outputs": False}, "config")
    grid_cfg = cfg.get("grid") or {"dim": 1, "K": 256}
    _require_keys(grid_cfg, {"dim": True, "K": True, "points": False}, "grid")
    K = int(grid_cfg["K"])
    probes = cfg.get("probes") or {}
    _require_keys(
        probes,
        {"regularities": False, "j_range": False, "boundedness_K": False,
         "identity_K": False, "identity_trials": False},
        "probes",
    )
    regs = [float(r) for r in probes.get("regularities", [1.0, 2.0])]
    j_lo, j_hi = probes.get("j_range", [3, 7])
    outputs = cfg.get("outputs") or {}
    _require_keys(outputs, {"csv": False}, "outputs")

    rows = []
    summary = {}
    part = validation.partition_probe(K)
    rows.append({"probe": "partition", "r": "", "j": "", "value": part["partition_residual"],
                 "slope": "", "bound": 1e-14, "passed": int(part["passed"])})
    summary["partition_residual"] = part["partition_residual"]
    ident = validation.paraproduct_identity_probe(
        int(probes.get("identity_K", 64)), seed, int(probes.get("identity_trials", 100))
    )
    rows.append({"probe": "paraproduct_identities", "r": "", "j": "",
                 "value": max(ident["const_symbol_defect"], ident["const_operand_defect"]),
                 "slope": "", "bound": 1e-13, "passed": int(ident["passed"])})
    for r in regs:
        cm = validation.cm_smoothing_probe(K, r, seed, int(j_lo), int(j_hi))
        for rec in cm["rows"]:
            rows.append({"probe": "cm_ratio", "r": r, "j": rec["j"], "value": rec["ratio"],
                         "slope": "", "bound": "", "passed": ""})
        rows.append({"probe": "cm_slope", "r": r, "j": "", "value": cm["const_defect"],
                     "slope": cm["slope"], "bound": cm["slope_bound"], "passed": int(cm["passed"])})
        pl = validation.pl_smoothing_probe(K, r, seed, int(j_lo), int(j_hi))
        for rec in pl["rows"]:
            rows.append({"probe": "pl_ratio", "r": r, "j": rec["j"], "value": rec["ratio"],
                         "slope": "", "bound": "", "passed": ""})
        rows.append({"probe": "pl_slope", "r": r, "j": "", "value": "",
                     "slope": pl["slope"], "bound": pl["slope_bound"], "passed": int(pl["passed"])})
    bound = validation.boundedness_stability_probe(int(probes.get("boundedness_K", 32)))
    rows.append({"probe": "boundedness_drift", "r": "", "j": "", "value": bound["drift"],
                 "slope": "", "bound": float(np.log(1.2)), "passed": int(bound["passed"])})
    all_passed = all(r["passed"] for r in rows if r["passed"] != "")
    summary["all_passed"] = int(all_passed)
    cols = ["probe", "r", "j", "value", "slope", "bound", "passed"]
    _write_rows_csv(out / outputs.get("csv", "validate_ops.csv"), cols, rows, summary)
    for r in rows:
        if r["passed"] != "":
            status = "pass" if r["passed"] else "FAIL"
            print(f"validate-ops {r['probe']}(r={r['r']}): {status}")
    return EXIT_OK


# --- diophantine -------------------------------------------------------------------


def run_diophantine(cfg: dict, out: Path, seed: int) -> int:
    _require_keys(cfg, {"kind": True, "frequency": True, "scan": True, "outputs": False}, "config")
    freq = cfg["frequency"]
    _require_keys(freq, {"omega": False, "alpha": False, "sigma": True}, "frequency")
    if ("omega" in freq) == ("alpha" in freq):
        raise ConfigError("frequency: give exactly one of omega or alpha")
    sigma = float(freq["sigma"])
    _require_keys(cfg["scan"], {"K_values": True}, "scan")
    outputs = cfg.get("outputs") or {}
    _require_keys(outputs, {"csv": False}, "outputs")
    rows = []
    for K in cfg["scan"]["K_values"]:
        K = int(K)
        try:
            if "omega" in freq:
                gamma = certify_diophantine([float(w) for w in freq["omega"]], sigma, K)
            else:
                gamma = certify_rotation_angle(float(freq["alpha"]), sigma, K)
            rows.append({"K": K, "gamma": gamma, "status": "ok", "resonant_mode": ""})
        except ResonantModeError as exc:
            rows.append({"K": K, "gamma": "", "status": "resonant",
                         "resonant_mode": "(" + " ".join(str(m) for m in exc.mode) + ")"})
    cols = ["K", "gamma", "status", "resonant_mode"]
    _write_rows_csv(out / outputs.get("csv", "diophantine.csv"), cols, rows,
                    {"n_rows": len(rows)})
    for r in rows:
        print(f"diophantine K={r['K']}: {r['status']}"
              + (f" gamma={fmt(r['gamma'])}" if r["status"] == "ok" else f" at {r['resonant_mode']}"))
    return EXIT_OK


# --- driver -------------------------------------------------------------------------


_RUNNERS = {
    "circle": run_circle,
    "torus": run_torus,
    "validate-ops": run_validate_ops,
    "diophantine": run_diophantine,
}


def _run_one(config_path: Path, out: Path, seed: int, expected_kind: str | None) -> int:
    try:
        with open(config_path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if not isinstance(cfg, dict) or "kind" not in cfg:
            raise ConfigError("config must be an object with a 'kind'")
        kind = cfg["kind"]
        if kind not in _RUNNERS:
            raise ConfigError(f"unknown kind {kind!r}")
        if expected_kind is not None and kind != expected_kind:
            raise ConfigError(f"subcommand {expected_kind!r} got config of kind {kind!r}")
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config_echo.json", cfg)
        return _RUNNERS[kind](cfg, out, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        _write_json(out / "error.json", {"error": "ConfigError", "message": str(exc)})
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        _write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc)})
        return EXIT_SOLVER
    except ParatorusError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        _write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc)})
        return EXIT_INTERNAL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="paratorus",
        description="Spectral para-differential toolkit: conjugacy solves and operator validation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", action="append", required=True,
                       help="path to a JSON experiment config (repeatable with --batch)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized probes")
        p.add_argument("--batch", action="store_true",
                       help="run several configs into isolated subdirectories")
    args = parser.parse_args(argv)
    configs = [Path(c) for c in args.config]
    if len(configs) > 1 and not args.batch:
        print("multiple configs need --batch", file=sys.stderr)
        return EXIT_CONFIG
    out_root = Path(args.out)
    worst = EXIT_OK
    for cfg_path in configs:
        out = out_root / cfg_path.stem if args.batch else out_root
        code = _run_one(cfg_path, out, args.seed, args.command)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
