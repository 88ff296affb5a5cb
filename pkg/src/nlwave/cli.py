"""Command-line entry point: ``nlwave {eigen,solve,sweep,verify,trace}``.

Exit codes: 0 success, 2 unreadable/unparsable input, 3 invalid configuration,
4 solver failure (partial artifacts written), 5 non-resonance exclusion.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bifurcation import hill_potential, solve_q
from .hill import asymptotics_report, eig_direct, liouville_transform
from .io import (
    ConfigError,
    ConfigParseError,
    ProblemConfig,
    a_from_terms,
    atomic_write,
    dump_config,
    load_config,
    load_solution,
    solution_to_json,
    write_csv,
)
from .nash_moser import (
    TRACE_FIELDS,
    IterationTrace,
    MelnikovExclusion,
    SolverError,
    TraceEntry,
    pde_residual,
    run,
    tame_monitor,
)
from .resonance import sweep_measure
from .spectral import TimeFunction

__all__ = ["main", "run_solve", "run_eigen", "run_sweep", "run_verify", "run_trace"]

EXIT_OK, EXIT_PARSE, EXIT_CONFIG, EXIT_SOLVER, EXIT_MELNIKOV = 0, 2, 3, 4, 5

log = logging.getLogger("nlwave")


class _RunLog:
    """Collect log records for one command and write them atomically on exit."""

    def __init__(self, out: Path, cfg: ProblemConfig | None, command: str):
        self.path = out / "run.log"
        self.buf = io.StringIO()
        self.handler = logging.StreamHandler(self.buf)
        self.handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        self.command = command
        self.cfg = cfg

    def __enter__(self):
        root = logging.getLogger("nlwave")
        root.addHandler(self.handler)
        self._level = root.level
        root.setLevel(logging.INFO)
        self.buf.write(f"nlwave {__version__} {self.command}\n")
        if self.cfg is not None:
            self.buf.write("config:\n" + dump_config(self.cfg))
        return self

    def __exit__(self, *exc):
        root = logging.getLogger("nlwave")
        root.removeHandler(self.handler)
        root.setLevel(self._level)
        atomic_write(self.path, self.buf.getvalue())
        return False


def _apply_overrides(cfg: ProblemConfig, refine: int | None, seed: int | None) -> ProblemConfig:
    kw = {}
    if refine is not None:
        kw["residual_refine"] = refine
    if seed is not None:
        kw["seed"] = seed
    if kw:
        cfg.params = replace(cfg.params, **kw)
    return cfg


def _metadata(cfg: ProblemConfig, sol, status: str) -> dict:
    p = cfg.params
    md = {"epsilon": cfg.epsilon, "omega": cfg.omega, "gamma": p.gamma, "tau": p.tau,
          "chi": p.chi, "N0": p.N0, "Lmax": p.Lmax, "s": p.s, "status": status,
          "residual": None, "residual_s": None, "residual_max": None,
          "refine": p.residual_refine, "version": __version__}
    if sol is not None:
        md.update(residual=sol.residual.value, residual_s=sol.residual.snorm,
                  residual_max=sol.residual.max_abs, N=sol.N)
    return md


def _write_solution(out: Path, cfg: ProblemConfig, sol, status: str) -> None:
    rows = sol.trace.rows() if sol is not None else []
    atomic_write(out / "solution.json", solution_to_json(sol.u, _metadata(cfg, sol, status), rows))
    write_csv(out / "trace.csv", TRACE_FIELDS, rows)


def run_solve(cfg: ProblemConfig, out: Path) -> int:
    """Solve the configured problem; writes solution.json, trace.csv and run.log."""
    with _RunLog(out, cfg, "solve"):
        try:
            problem = cfg.problem()
        except ConfigError as exc:
            log.error("%s", exc)
            return EXIT_CONFIG
        try:
            sol = run(problem, cfg.params)
        except MelnikovExclusion as exc:
            log.error("excluded: %s", exc)
            if exc.report is not None:
                fam, j, l, par = exc.report.worst
                log.error("violating mode j=%d l=%d family=%s parity=%s margin=%.6e",
                          j, l, fam, par, exc.report.min_margin)
            if exc.partial is not None:
                _write_solution(out, cfg, exc.partial, "excluded")
            return EXIT_MELNIKOV
        except SolverError as exc:
            log.error("solver failure: %s", exc)
            if exc.partial is not None:
                _write_solution(out, cfg, exc.partial, "failed")
            return EXIT_SOLVER
        _write_solution(out, cfg, sol, "converged")
        log.info("converged: residual %.3e after %d steps", sol.residual.value, len(sol.trace))
    return EXIT_OK


def _eigen_potential(cfg: ProblemConfig) -> TimeFunction:
    if cfg.eigen.get("d") is not None:
        return a_from_terms(cfg.eigen["d"])
    if cfg.epsilon != 0 and cfg.omega is not None and cfg.f:
        f = cfg.nonlinearity()
        q = solve_q(f, cfg.epsilon, cfg.omega, None, lmax=cfg.params.Lmax)
        return hill_potential(f, cfg.epsilon, cfg.omega, q.v, None, 2 * cfg.params.Lmax)
    return TimeFunction.zeros(0)


def run_eigen(cfg: ProblemConfig, out: Path) -> int:
    """Hill spectrum of the configured a(t) and potential; writes eigen.csv."""
    with _RunLog(out, cfg, "eigen"):
        a = cfg.a_function()
        try:
            d = _eigen_potential(cfg)
        except Exception as exc:  # noqa: BLE001
            log.error("potential construction failed: %s", exc)
            return EXIT_SOLVER
        bands = cfg.eigen["bands"]
        modes = cfg.eigen["modes"] or max(4 * bands, 64)
        try:
            spec = eig_direct(a, d, bands, modes)
            L = liouville_transform(a, d)
        except Exception as exc:  # noqa: BLE001
            log.error("eigen solve failed: %s", exc)
            return EXIT_SOLVER
        rep = asymptotics_report(spec, L)
        if not rep.applicable:
            log.warning("normal-form potential not positive (min %.6e); bounds not applicable", L.rho0)
        mu = spec.mu()
        rows = [{"l": 0, "parity": "single", "lambda": float(spec.eigenvalues[0]),
                 "mu": float(mu[0]), "eta": "", "sandwich_lo": L.rho0, "sandwich_hi": "",
                 "pass": bool(mu[0] >= L.rho0 - 1e-6) if rep.applicable else "n/a"}]
        byk = {(r["l"], r["parity"]): r for r in rep.rows}
        for k, (l, par) in enumerate(spec.labels[1:], start=1):
            r = byk.get((l, par))
            rows.append({"l": l, "parity": par, "lambda": float(spec.eigenvalues[k]),
                         "mu": float(mu[k]),
                         "eta": r["eta"] if r else float(np.sqrt(max(mu[k], 0)) - l),
                         "sandwich_lo": r["sandwich_lo"] if r else "",
                         "sandwich_hi": r["sandwich_hi"] if r else "",
                         "pass": r["pass"] if r else "n/a"})
        write_csv(out / "eigen.csv", ["l", "parity", "lambda", "mu", "eta", "sandwich_lo",
                                      "sandwich_hi", "pass"], rows)
        log.info("c=%.15g rho0=%.15g rho1=%.15g report_pass=%s", L.c, L.rho0, L.rho1, rep.passed)
    return EXIT_OK


def run_sweep(cfg: ProblemConfig, out: Path, mode: str | None = None) -> int:
    """Resonance sweep over the configured omega interval; writes sweep.csv and sweep.json."""
    with _RunLog(out, cfg, "sweep"):
        if cfg.sweep is None:
            log.error("sweep: configuration has no sweep block")
            return EXIT_CONFIG
        sw = cfg.sweep
        m = mode or sw["mode"]
        res = sweep_measure(cfg.a_function(), cfg.nonlinearity() if cfg.f else None, cfg.epsilon,
                            tuple(sw["interval"]), sw["grid_points"], sw["gammas"], cfg.params.tau,
                            sw["N"], mode=m, params=cfg.params, lmax=cfg.params.Lmax)
        rows = []
        for g in res.gammas:
            for o, p, mm in zip(res.omega_grid, res.pass_masks[g], res.min_margins[g]):
                rows.append([float(o), bool(p), float(mm), g])
        write_csv(out / "sweep.csv", ["omega", "pass", "min_margin", "gamma"], rows)
        summary = {"interval": sw["interval"], "grid_points": sw["grid_points"], "N": sw["N"],
                   "tau": cfg.params.tau, "mode": m, "per_gamma": res.per_gamma(),
                   "failed_points": len(res.errors)}
        atomic_write(out / "sweep.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
        for row in res.per_gamma():
            log.info("gamma=%g measure_fraction=%.6f", row["gamma"], row["measure_fraction"])
    return EXIT_OK


def run_verify(cfg: ProblemConfig, solution_path: Path, out: Path) -> int:
    """Recompute the residual of a stored solution; writes verify.json."""
    with _RunLog(out, cfg, "verify"):
        try:
            u, md, _ = load_solution(solution_path)
        except (OSError, ValueError, KeyError) as exc:
            log.error("cannot load solution: %s", exc)
            return EXIT_PARSE
        p = cfg.problem()
        r = pde_residual(u, p.eps, p.omega, p.a, p.f, cfg.params.residual_refine, cfg.params.s)
        stored = md.get("residual")
        diff = None if stored is None else abs(r.value - stored)
        ok = r.value < cfg.params.tol_residual
        rep = {"residual": r.value, "residual_s": r.snorm, "residual_max": r.max_abs,
               "stored_residual": stored, "difference": diff, "pass": ok}
        atomic_write(out / "verify.json", json.dumps(rep, sort_keys=True, indent=2) + "\n")
        log.info("verify: residual %.6e (stored %s) pass=%s", r.value, stored, ok)
    return EXIT_OK if ok else EXIT_SOLVER


def run_trace(cfg: ProblemConfig | None, solution_path: Path, out: Path) -> int:
    """Re-emit the stored trace as CSV with a tame-decay report (tame.json)."""
    with _RunLog(out, cfg, "trace"):
        try:
            _, md, rows = load_solution(solution_path)
        except (OSError, ValueError, KeyError) as exc:
            log.error("cannot load solution: %s", exc)
            return EXIT_PARSE
        tr = IterationTrace([TraceEntry(**{k: (float("nan") if r[k] is None else r[k])
                                           for k in TRACE_FIELDS}) for r in rows])
        write_csv(out / "trace.csv", TRACE_FIELDS, tr.rows())
        params = cfg.params if cfg is not None else None
        rep = {}
        if params is not None:
            rep = tame_monitor(tr, params, md["epsilon"], md["omega"])
        atomic_write(out / "tame.json", json.dumps(rep, sort_keys=True, indent=2) + "\n")
        for r in tr.rows():
            print(f"n={r['n']} N={r['N']} |h|_s={r['h_norm_s']:.3e} residual={r['residual_s']:.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlwave", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nlwave {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("eigen", "solve", "sweep", "verify", "trace"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name != "trace")
        sp.add_argument("--out", type=Path, default=None)
        sp.add_argument("--mode", choices=("frozen", "coupled"), default=None)
        sp.add_argument("--refine", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None)
        if name in ("verify", "trace"):
            sp.add_argument("--solution", type=Path, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    cfg = None
    if args.config is not None:
        try:
            cfg = load_config(args.config)
        except ConfigParseError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        cfg = _apply_overrides(cfg, args.refine, args.seed)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_PARSE
    out = args.out or Path(cfg.output_dir if cfg else ".")
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "solve":
        return run_solve(cfg, out)
    if args.command == "eigen":
        return run_eigen(cfg, out)
    if args.command == "sweep":
        return run_sweep(cfg, out, args.mode)
    if args.command == "verify":
        return run_verify(cfg, args.solution, out)
    return run_trace(cfg, args.solution, out)


if __name__ == "__main__":
    sys.exit(main())
