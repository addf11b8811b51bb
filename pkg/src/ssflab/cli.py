"""Command-line front end: ``ssflab <command> [--manifest M] [flags]``.

Every command resolves one JSON manifest (flags win over manifest entries), evaluates
its energy grid row by row and writes CSV/JSON files into ``--out``.  CSV files start
with a ``# manifest-digest:`` comment line followed by the header row.

Exit codes: 0 success, 2 parameter error, 1 any other failure.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .birman_schwinger import assemble_T, build_grid, onshell_eigenvalue
from .errors import ParameterError, SsfLabError
from .experiments import Experiment, load_manifest, resolve
from .ode import relative_phase_shift, ssf_counting_oracle
from .potentials import verify_embedded_eigenvalue
from .resonance import scan_gamma, sigma_heatmap
from .spectral_flow import theta_grid, xi_breakdown

BK_EDGE = 1e-3  # detections this close to r = 1 make det S(lam; H_1, H_0) unreliable


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))  # shortest round-trip form
    return "" if x is None else str(x)


def write_csv(path: Path, digest: str, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# manifest-digest: {digest}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) for v in row])


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _map(fn, exp: Experiment, threads: int) -> list:
    """fn(exp, lam) over the energy grid; result order follows the sorted grid."""
    lams = [float(x) for x in exp.energies]
    if threads > 1 and len(lams) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, [exp] * len(lams), lams))
    return [fn(exp, lam) for lam in lams]


# ------------------------------------------------------------------ row workers


SSF_COLUMNS = ["lambda", "xi", "xi_ac", "xi_s", "mu_s", "residual_integer", "residual_identity",
               "oracle_xi", "resonant", "error"]


def ssf_row(exp: Experiment, lam: float) -> dict:
    try:
        b = xi_breakdown(lam, exp.W, exp.V, exp.h, n_nodes=exp.nodes,
                         theta=theta_grid(exp.theta_points), n_y=exp.y_points)
        rec = _jsonable(b.to_dict())
        rec["error"] = ""
    except SsfLabError as exc:
        nan = float("nan")
        rec = {"lam": lam, "xi": nan, "xi_ac": nan, "xi_s": nan, "mu_s": None,
               "residual_integer": nan, "residual_identity": nan, "oracle_xi": nan,
               "resonant": True, "error": f"{type(exc).__name__}: {exc}"}
    return rec


def phase_row(exp: Experiment, lam: float) -> list:
    res = relative_phase_shift(exp.W, exp.V, exp.h, exp.r, lam, detail=True)
    if exp.V.is_zero or exp.r == 0:
        onshell = 0.0
    else:
        T0 = assemble_T(exp.W, exp.V, exp.h, build_grid(exp.V, exp.nodes, background=exp.W), lam)
        onshell = cmath.phase(onshell_eigenvalue(T0, exp.r))
    diff = math.remainder(onshell - 2.0 * res.value, 2.0 * math.pi)
    return [lam, exp.r, res.value, onshell, abs(diff), res.resonance_flag]


def scan_rows(exp: Experiment, lam: float) -> list[list]:
    scan = scan_gamma(lam, exp.W, exp.V, exp.h, r_grid=exp.r_grid, n_nodes=exp.nodes)
    return [[p.lam, p.r0, p.sigma_min, p.shooting_residual, p.certified, p.multiplicity,
             p.boundary] for p in scan.points]


def heatmap_rows(exp: Experiment, lam: float) -> list[list]:
    sig = sigma_heatmap([lam], exp.r_grid, exp.W, exp.V, exp.h, exp.nodes)[0]
    return [[lam, r, s] for r, s in zip(exp.r_grid, sig)]


def birman_krein_row(exp: Experiment, lam: float, sign: float = 1.0) -> list:
    """det S(lam; H_1, H_0) against exp(-2 pi i sign xi_oracle).

    ``sign = -1`` flips the convention; it exists only to show the residual breaks.
    """
    oracle = ssf_counting_oracle(exp.W, exp.V, exp.h, lam)
    target = cmath.exp(-2j * math.pi * sign * oracle.xi)
    resonant = not oracle.converged
    if exp.V.is_zero:
        det = 1.0 + 0.0j
    else:
        try:
            grid = build_grid(exp.V, exp.nodes, background=exp.W)
            T0 = assemble_T(exp.W, exp.V, exp.h, grid, lam)
            det = onshell_eigenvalue(T0, 1.0)
            scan = scan_gamma(lam, exp.W, exp.V, exp.h, r_grid=exp.r_grid, T0=T0)
            resonant |= any(abs(p.r0 - 1.0) < BK_EDGE for p in scan.points)
        except SsfLabError:
            det, resonant = complex("nan+nanj"), True
    return [lam, det.real, det.imag, oracle.xi, target.real, target.imag, abs(det - target),
            resonant]


# ------------------------------------------------------------------ commands


def cmd_build_potential(exp: Experiment, args) -> int:
    if exp.spec is None:
        raise ParameterError("build-potential needs a barrier potential (lambda_star, w, s, n_barriers)")
    if not exp.spec.barriers:
        print("warning: n_barriers = 0 gives the zero potential (no embedded eigenvalue)",
              file=sys.stderr)
    out = exp.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "potential.json").write_text(exp.W.to_json() + "\n")
    (out / "barrier_spec.json").write_text(exp.spec.to_json() + "\n")
    report = verify_embedded_eigenvalue(exp.W, exp.spec)
    write_json(out / "shooting_report.json", _jsonable(report.to_dict()))
    return 0


def cmd_verify_eigenvalue(exp: Experiment, args) -> int:
    if exp.spec is None:
        raise ParameterError("verify-eigenvalue needs a barrier potential")
    report = verify_embedded_eigenvalue(exp.W, exp.spec)
    write_json(exp.out / "shooting_report.json", _jsonable(report.to_dict()))
    res = report.entry_logderiv_residuals
    print(f"barriers={len(exp.spec.barriers)} "
          f"max_logderiv_residual={float(res.max()) if res.size else 0.0:.3e} "
          f"decay_exponent={report.decay_fit_exponent:.4f} l2_divergent={report.l2_divergent}")
    return 0


def cmd_phase_shift(exp: Experiment, args) -> int:
    rows = _map(phase_row, exp, args.threads)
    write_csv(exp.out / "phase_shift.csv", exp.digest,
              ["lambda", "r", "delta_shift", "onshell_phase", "mismatch", "resonance_flag"], rows)
    return 0


def cmd_ssf(exp: Experiment, args) -> int:
    recs = _map(ssf_row, exp, args.threads)
    rows = [[rec["lam"]] + [rec[c] for c in SSF_COLUMNS[1:]] for rec in recs]
    write_csv(exp.out / "ssf.csv", exp.digest, SSF_COLUMNS, rows)
    with (exp.out / "ssf.jsonl").open("w") as fh:
        for rec in recs:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
    failed = [r["lam"] for r in recs if r["error"]]
    if failed:
        print(f"warning: {len(failed)} row(s) failed, see the error column", file=sys.stderr)
    return 0


def cmd_mu(exp: Experiment, args) -> int:
    recs = _map(ssf_row, exp, args.threads)
    rows = []
    for rec in recs:
        if rec["error"]:
            continue
        for th, m, ma in zip(rec["theta"], rec["mu_values"], rec["mu_ac_values"]):
            rows.append([rec["lam"], th, m, ma, m - ma])
    write_csv(exp.out / "mu.csv", exp.digest, ["lambda", "theta", "mu", "mu_ac", "mu_s"], rows)
    return 0


def cmd_scan_resonances(exp: Experiment, args) -> int:
    rows = [row for rows in _map(scan_rows, exp, args.threads) for row in rows]
    write_csv(exp.out / "resonances.csv", exp.digest,
              ["lambda", "r0", "sigma_min", "shooting_residual", "certified", "multiplicity",
               "boundary"], rows)
    if args.heatmap:
        rows = [row for rows in _map(heatmap_rows, exp, args.threads) for row in rows]
        write_csv(exp.out / "heatmap.csv", exp.digest, ["lambda", "r", "sigma_min"], rows)
    return 0


def cmd_birman_krein(exp: Experiment, args) -> int:
    rows = _map(birman_krein_row, exp, args.threads)
    write_csv(exp.out / "birman_krein.csv", exp.digest,
              ["lambda", "det_s_re", "det_s_im", "oracle_xi", "target_re", "target_im",
               "residual", "resonant"], rows)
    worst = max((r[6] for r in rows if not r[7]), default=0.0)
    print(f"max off-resonance residual {worst:.3e} "
          f"(tolerance {exp.tolerances.get('birman_krein', 1e-3):.1e})")
    return 0


COMMANDS = {
    "build-potential": cmd_build_potential,
    "verify-eigenvalue": cmd_verify_eigenvalue,
    "phase-shift": cmd_phase_shift,
    "ssf": cmd_ssf,
    "mu": cmd_mu,
    "scan-resonances": cmd_scan_resonances,
    "birman-krein-check": cmd_birman_krein,
}


POTENTIAL_ONLY = ("build-potential", "verify-eigenvalue")


def _energies(text: str | None):
    """'a,b,c' -> list; 'start:stop:num' -> linspace description."""
    if text is None:
        return None
    if ":" in text:
        start, stop, num = text.split(":")
        return {"start": float(start), "stop": float(stop), "num": int(num)}
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="JSON experiment manifest")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes over energies")
    common.add_argument("--seed", type=int, default=None, help="reserved; all runs are deterministic")
    common.add_argument("--energies", help="comma list or start:stop:num")
    common.add_argument("--h", dest="boundary", help="Robin coefficient or 'dirichlet'")
    common.add_argument("--nodes", type=int, help="Gauss-Legendre nodes per panel")
    common.add_argument("--theta-points", type=int)
    common.add_argument("--y-points", type=int)
    common.add_argument("--r", type=float, help="coupling for phase-shift")
    common.add_argument("--zero-perturbation", action="store_true", help="use V = 0")
    common.add_argument("--lambda", dest="lambda_star", type=float, help="target energy lambda*")
    common.add_argument("--w", type=float, help="barrier height")
    common.add_argument("--s", type=float, help="width exponent (must exceed 1/2)")
    common.add_argument("--n", type=int, help="number of barriers")

    p = argparse.ArgumentParser(prog="ssflab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "scan-resonances":
            sp.add_argument("--heatmap", action="store_true", help="also write heatmap.csv")
    return p


def _overrides(args, manifest: dict) -> dict:
    ov = {
        "out": args.out, "energies": _energies(args.energies), "boundary": args.boundary,
        "nodes": args.nodes, "theta_points": args.theta_points, "y_points": args.y_points,
        "r": args.r,
    }
    pot_flags = {"lambda_star": args.lambda_star, "w": args.w, "s": args.s, "n_barriers": args.n}
    if any(v is not None for v in pot_flags.values()):
        from .experiments import DEFAULTS
        pot = dict(manifest.get("potential", DEFAULTS["potential"]))
        if "lambda_star" not in pot:
            pot = dict(DEFAULTS["potential"])
        pot.update({k: v for k, v in pot_flags.items() if v is not None})
        ov["potential"] = pot
    if args.zero_perturbation:
        ov["perturbation"] = {"kind": "zero"}
    return ov


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest, base = load_manifest(args.manifest)
        exp = resolve(manifest, _overrides(args, manifest), base,
                      with_perturbation=args.command not in POTENTIAL_ONLY)
        exp.out.mkdir(parents=True, exist_ok=True)
        write_json(exp.out / "manifest.resolved.json",
                   {"digest": exp.digest, "manifest": exp.manifest})
        return COMMANDS[args.command](exp, args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SsfLabError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
