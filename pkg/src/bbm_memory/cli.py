"""Command-line entry point: ``bbm-memory <subcommand> --config scenario.json``.

Every subcommand writes its artifacts to ``--out`` (default: the config's
output directory) and a ``summary.json`` of the form
``{command, config_hash, checks: [{name, passed, ...}], metrics, passed}``.
Exit status is 0 when all checks pass, 1 when some fail and 2 when the run
is refused (invalid config, inadmissible force).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import decomposition, dynamics, ensemble, functionals, riccati
from .config import ScenarioConfig, load_config
from .dynamics import State
from .errors import BBMError, ConfigError, DivergenceError, InadmissibleForce
from .io import load_state, save_state, write_json

log = logging.getLogger("bbm_memory")

COMMANDS = ("simulate", "energy-audit", "decay", "invariance", "riccati", "decompose", "ensemble")


class Refused(Exception):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


def _check(name, passed, **info):
    return {"name": name, "passed": bool(passed), **info}


def _initial_state(cfg: ScenarioConfig, args, backend=None) -> State:
    backend = backend or cfg.backend
    dom, kern = cfg.domain, cfg.kernel
    if getattr(args, "initial", None):
        z = load_state(args.initial, dom, kern)
        if z.eta.backend != backend:
            raise ConfigError(f"--initial holds a {z.eta.backend} history, config asks for {backend}")
        return State(z.u, z.eta.resample(cfg.integrator.dt, cfg.substeps), z.t)
    rng = np.random.default_rng(cfg.seed)
    u = ensemble.sample_velocity(dom, rng, args.amplitude) if args.amplitude > 0 else dom.zeros()
    return State.from_velocity(u, dom, kern, cfg.integrator.dt, backend, cfg.substeps)


def _constants(cfg: ScenarioConfig):
    if cfg.constants is not None:
        return cfg.constants
    log.info("no constants in config: calibrating (this takes about a minute)")
    return functionals.calibrate_constants(cfg.domain, cfg.kernel, seed=cfg.seed).constants


def _gate(cfg: ScenarioConfig, force):
    report = functionals.admissibility(_constants(cfg), force)
    if not report.admissible:
        raise Refused(f"force is not admissible: ||F|| = {report.normF:.6g} >= {report.frak_c:.6g}",
                      {"admissibility": report.to_dict()})
    return report


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, args, out):
    z = _initial_state(cfg, args)
    rec, final = dynamics.evolve(z, cfg.integrator, cfg.force_data(), return_state=True)
    rec.to_csv(out / "trajectory.csv")
    save_state(out / "final_state.bin", final, cfg.domain)
    return [_check("finite", final.is_finite())], {"E_initial": rec.E[0], "E_final": rec.E[-1], "t_final": final.t}


def cmd_energy_audit(cfg, args, out):
    z = _initial_state(cfg, args)
    rec = dynamics.evolve(z, cfg.integrator, cfg.force_data())
    rec.to_csv(out / "trajectory.csv")
    res = dynamics.energy_identity_residual(rec)
    integ = dynamics.integrated_identity(rec)
    tol = args.tol * max(rec.E[0], 0.0)
    checks = [_check("integrated_identity", abs(integ["defect"]) <= tol, defect=integ["defect"], tolerance=tol)]
    return checks, {"max_residual": res["max_abs"], **integ}


def cmd_decay(cfg, args, out):
    force = cfg.force_data()
    if not force.is_zero:
        raise Refused("decay needs the zero force")
    z = _initial_state(cfg, args)
    rec = dynamics.evolve(z, cfg.integrator, force)
    rec.to_csv(out / "trajectory.csv")
    E = rec.E
    rel_inc = float(np.max(np.diff(E) / np.maximum(E[:-1], 1e-300))) if len(E) > 1 else 0.0
    T = cfg.integrator.T_final
    window = (rec.times >= 0.25 * T) & (E > 0)
    checks = [_check("monotone", rel_inc <= 1e-12, max_relative_increase=rel_inc),
              _check("reaches_1e-4", E[-1] <= 1e-4 * E[0], ratio=E[-1] / E[0] if E[0] > 0 else 0.0)]
    metrics = {"E_initial": E[0], "E_final": E[-1]}
    if window.sum() >= 10:
        beta, rms = decomposition.fit_decay_rate(rec.times[window], np.sqrt(E[window]))
        checks += [_check("beta_positive", beta > 0, beta=beta), _check("fit_rms", rms < 0.05, rms=rms)]
        metrics.update(beta=beta, fit_rms=rms)
    return checks, metrics


def cmd_invariance(cfg, args, out):
    force = cfg.force_data()
    report = _gate(cfg, force)
    dom, kern = cfg.domain, cfg.kernel
    eps = args.eps if args.eps is not None else functionals.eps_for_bounded_set(args.radius, report, kern.kappa)
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.integrator.dt
    states = []
    for i in range(args.members):
        z = functionals.random_state(dom, kern, dt, rng, cfg.backend, with_history=i % 2 == 0)
        states.append(functionals.scale_state(z, args.radius * math.sqrt(rng.uniform()) / z.h_norm()))
    res = functionals.invariance_audit(states, eps, cfg.integrator, force, report)
    checks = [_check("invariance", res["passed"], max_ratio=res["max_ratio"], diagnosis=res["diagnosis"])]
    return checks, {"eps": eps, "admissibility": report.to_dict(), **res}


def cmd_riccati(cfg, args, out):
    p = riccati.derive(args.a, args.b, args.c)
    lam = math.sqrt(p.lambda_minus * p.lambda_plus)
    barrier = riccati.verify_barrier(p, lam, 0.5 * lam)
    contraction = riccati.verify_contraction(p)
    metrics = {"rho": p.rho, "lambda_minus": p.lambda_minus, "lambda_plus": p.lambda_plus, "t_rho": p.t_rho,
               "t_rho_residual": riccati.t_rho_residual(p.rho, p.t_rho), "deadline": p.deadline}
    print(f"rho = {p.rho:.10g}  lambda- = {p.lambda_minus:.10g}  lambda+ = {p.lambda_plus:.10g}  "
          f"t_rho = {p.t_rho:.10g}")
    return [_check("barrier", barrier["passed"]), _check("contraction", contraction["passed"])], metrics


def cmd_decompose(cfg, args, out):
    z = _initial_state(cfg, args, backend="quadrature")
    decay, reg = decomposition.run_decomposition(z, cfg.integrator.T_final, cfg.integrator, cfg.force_data(),
                                                 csv_path=out / "decomposition.csv")
    checks = [_check("split_residual", reg.split_ok, max=reg.split_residual_max, tolerance=reg.split_tolerance),
              _check("h1_stabilized", reg.stabilized, final_quarter_growth=reg.final_quarter_growth),
              _check("k_eps_member", reg.k_eps_member)]
    metrics = {"beta": decay.beta, "fit_rms": decay.fit_rms, "prefactor": decay.prefactor, "Q": reg.Q,
               "sup_ds_zeta_M1": reg.sup_ds_zeta_M1, "nu": reg.nu}
    return checks, metrics


def cmd_ensemble(cfg, args, out):
    force = cfg.force_data()
    _gate(cfg, force)
    rep = ensemble.attractor_ensemble(cfg.domain, cfg.kernel, force, _constants(cfg), args.members,
                                      cfg.integrator.T_final, cfg.integrator.dt, radii=args.radii, seed=cfg.seed,
                                      workers=args.workers)
    rep.pop("final_cloud")
    checks = [_check("diameter_shrinks", rep["diameter_ratio"] < 0.1, ratio=rep["diameter_ratio"]),
              _check("levels_merge", rep["cross_level_ratio"] < 0.1, ratio=rep["cross_level_ratio"]),
              _check("h1_bounded", math.isfinite(rep["max_h1_final"]), max_h1=rep["max_h1_final"])]
    if force.is_zero:
        checks.append(_check("collapse_to_zero", rep["max_norm_final"] <= 1e-4, max_norm=rep["max_norm_final"]))
    return checks, rep


HANDLERS = {
    "simulate": cmd_simulate, "energy-audit": cmd_energy_audit, "decay": cmd_decay,
    "invariance": cmd_invariance, "riccati": cmd_riccati, "decompose": cmd_decompose, "ensemble": cmd_ensemble,
}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbm-memory", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "riccati", help="scenario JSON")
        p.add_argument("--out", help="output directory (default: config output.directory)")
        p.add_argument("--seed", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--T", type=float, help="run duration")
        p.add_argument("--eps", type=float)
        if name in ("simulate", "energy-audit", "decay", "decompose"):
            p.add_argument("--amplitude", type=float, default=0.1, help="|||u0|||_1 of the sampled initial velocity")
            p.add_argument("--initial", help="state file to start from")
        if name == "energy-audit":
            p.add_argument("--tol", type=float, default=1e-6, help="integrated-identity tolerance relative to E(0)")
        if name == "invariance":
            p.add_argument("--members", type=int, default=10)
            p.add_argument("--radius", type=float, default=1.0)
        if name == "ensemble":
            p.add_argument("--members", type=int, default=16)
            p.add_argument("--radii", type=float, nargs="+", default=[40.0, 120.0])
            p.add_argument("--workers", type=int, default=1)
        if name == "riccati":
            p.add_argument("--a", type=float, required=True)
            p.add_argument("--b", type=float, required=True)
            p.add_argument("--c", type=float, required=True)
    return ap


def run_scenario(cfg: ScenarioConfig, command: str, args, out: Path) -> tuple[int, dict]:
    out.mkdir(parents=True, exist_ok=True)
    summary = {"command": command, "config_hash": cfg.digest(), "checks": [], "metrics": {}}
    try:
        checks, metrics = HANDLERS[command](cfg, args, out)
        summary.update(checks=checks, metrics=metrics, passed=all(c["passed"] for c in checks))
        status = 0 if summary["passed"] else 1
    except (Refused, InadmissibleForce) as exc:
        payload = exc.payload if isinstance(exc, Refused) else {"admissibility": exc.report.to_dict()}
        summary.update(refused=str(exc), metrics=payload, passed=False)
        status = 2
    except DivergenceError as exc:
        summary.update(checks=[_check("finite", False, time=exc.time, message=str(exc))], passed=False)
        status = 1
    write_json(out / "summary.json", summary)
    return status, summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.dt is not None or args.T is not None:
            cfg = cfg.with_integrator(dt=args.dt, T_final=args.T)
    except (BBMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.output_dir)
    try:
        status, summary = run_scenario(cfg, args.command, args, out)
    except BBMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for c in summary["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    if "refused" in summary:
        print(f"REFUSED {summary['refused']}")
        print(json.dumps(summary["metrics"], indent=2, default=str))
    return status


if __name__ == "__main__":
    sys.exit(main())
