"""End-to-end acceptance criteria 1-10.

Each test prints one ``criterion N: PASS|FAIL`` line (visible with ``-s`` or
in the verbose log) and asserts the same condition.
"""
import json
import math
import time

import numpy as np
import pytest

from bbm_memory import cli
from bbm_memory.decomposition import fit_decay_rate, run_decomposition
from bbm_memory.dynamics import State, StepperConfig, energy_identity_residual, evolve, integrated_identity
from bbm_memory.ensemble import attractor_ensemble
from bbm_memory.errors import InadmissibleForce
from bbm_memory.functionals import (
    admissibility, bounds_61, calibrate_constants, d_eps_contains, equivalence_check, eps_for_bounded_set,
    invariance_audit, random_state, scale_state,
)
from bbm_memory.io import load_state, save_state
from bbm_memory.memory import MarkovianHistory, QuadratureHistory, kernel_audit, make_kernel
from bbm_memory.riccati import derive, lemma_sweep, t_rho_residual
from bbm_memory.spectral import Domain, ForceData

EXP = {"modes": [{"rate": 1.0}]}


@pytest.fixture
def verdict(capsys):
    def report(n, passed, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
        assert passed, detail
    return report


@pytest.fixture(scope="module")
def calibrated():
    dom = Domain(0.0, math.pi, 16)
    kern = make_kernel("prony", EXP)
    return dom, kern, calibrate_constants(dom, kern, seed=0).constants


def test_criterion_1_riccati(verdict):
    t0 = time.perf_counter()
    p = derive(1.0, 2.0, 1.0)
    ok = (abs(p.rho - 2) <= 1e-10 and abs(p.lambda_minus - (2 - math.sqrt(3))) <= 1e-10
          and abs(p.lambda_plus - (2 + math.sqrt(3))) <= 1e-10 and abs(p.t_rho - 5.0988) < 1e-4
          and abs(t_rho_residual(p.rho, p.t_rho)) < 1e-10)
    sweep = lemma_sweep(np.random.default_rng(2024), 200)
    dt = time.perf_counter() - t0
    ok = ok and sweep["all_passed"] and dt < 10
    verdict(1, ok, f"t_rho={p.t_rho:.10f}, barrier {sweep['barrier_passed']}/200, "
                   f"contraction {sweep['contraction_passed']}/200, {dt:.1f}s")


def test_criterion_2_energy_identity(verdict):
    t0 = time.perf_counter()
    dom = Domain(0.0, math.pi, 64)
    kern = make_kernel("prony", EXP)
    force = ForceData.scaled_to(dom, dom.basis(1), 0.1)
    u0 = 0.5 * np.random.default_rng(1).uniform(-1, 1, 64) / dom.k**2
    res, integ = [], []
    for dt in (1e-3, 5e-4):
        z = State.from_velocity(u0, dom, kern, dt, "markovian")
        rec = evolve(z, StepperConfig(dt, "imex2", 5.0, 10), force)
        res.append(energy_identity_residual(rec)["max_abs"])
        integ.append(integrated_identity(rec)["relative"])
    ratio = res[0] / res[1]
    elapsed = time.perf_counter() - t0
    ok = ratio >= 3.5 and max(integ) <= 1e-6 and elapsed < 60
    verdict(2, ok, f"residuals {res[0]:.3e} -> {res[1]:.3e} (ratio {ratio:.2f}), "
                   f"integrated identity {max(integ):.2e} E(0), {elapsed:.1f}s")


def test_criterion_3_homogeneous_decay(verdict):
    dom = Domain(0.0, math.pi, 32)
    kern = make_kernel("prony", EXP)
    zero = ForceData.zero(dom)
    betas, rmss, incs, drops = [], [], [], []
    for amp in (0.1, 0.05):
        z = State.from_velocity(amp * dom.basis(1), dom, kern, 0.01, "markovian")
        rec = evolve(z, StepperConfig(0.01, "imex2", 40.0, 10), zero)
        E = rec.E
        incs.append(float(np.max(np.diff(E) / E[:-1])))
        drops.append(E[-1] / E[0])
        w = rec.times >= 10.0
        beta, rms = fit_decay_rate(rec.times[w], np.sqrt(E[w]))
        betas.append(beta)
        rmss.append(rms)
    agree = abs(betas[0] - betas[1]) / max(betas) <= 0.1
    ok = max(incs) <= 1e-12 and max(drops) < 1e-4 and min(betas) > 0 and max(rmss) < 0.05 and agree
    verdict(3, ok, f"beta {betas[0]:.4f}/{betas[1]:.4f}, log-RMS {max(rmss):.4f}, "
                   f"max rel increase {max(incs):.1e}, E(T)/E(0) {max(drops):.1e}")


def test_criterion_4_functional_algebra(verdict):
    dom = Domain(0.0, math.pi, 16)
    kern = make_kernel("prony", EXP)
    rng = np.random.default_rng(4)
    w = dom.omega
    violations = 0
    for _ in range(500):
        z = random_state(dom, kern, 0.1, rng, with_history=rng.uniform() < 0.8)
        z = scale_state(z, 10 ** rng.uniform(-3, 3) / z.h_norm())
        force = ForceData.scaled_to(dom, rng.normal(size=16) / dom.k**2, 10 ** rng.uniform(-2, 1))
        eps = rng.uniform(0.0, 1.0 / (2 * w)) * 0.999 + 1e-6
        alpha = eps * rng.uniform(0.001, 0.999)
        if not bounds_61(z, eps, force)["passed"]:
            violations += 1
        if not equivalence_check(z, alpha, eps, force)["passed"]:
            violations += 1
    verdict(4, violations == 0, f"{violations} violations in 500 draws")


def test_criterion_5_kernel_audit(verdict):
    kernels = [make_kernel("prony", EXP), make_kernel("prony", {"modes": [{"rate": 0.5, "weight": 2.0}, {"rate": 3.0}]}),
               make_kernel("truncated_linear", {"s0": 2.0})]
    rng = np.random.default_rng(5)
    dom = Domain(0.0, math.pi, 8)
    worst_moment, worst_gap = 0.0, math.inf
    for k in kernels:
        worst_moment = max(worst_moment, abs(kernel_audit(k)["first_moment"] - 1.0))
        for _ in range(200):
            z = random_state(dom, k, 0.05, rng)
            worst_gap = min(worst_gap, z.eta.gamma() - k.delta * z.eta.norm_sq())
    e1 = dom.basis(1)
    h = QuadratureHistory.from_function(kernels[0], dom.eigenvalues, 0.05, lambda s: np.outer(1 - np.exp(-s), e1),
                                        lambda s: np.outer(np.exp(-s), e1))
    eq = max(abs(h.gamma() - 1 / 3), abs(h.norm_sq() - 1 / 3))
    ok = worst_moment <= 1e-10 and worst_gap >= -1e-9 and eq <= 1e-8
    verdict(5, ok, f"moment error {worst_moment:.1e}, min Gamma - delta|eta|^2 = {worst_gap:.2e}, "
                   f"equality case error {eq:.1e}")


def test_criterion_6_backend_cross_validation(verdict):
    dom = Domain(0.0, math.pi, 32)
    rng = np.random.default_rng(6)
    worst = 0.0
    for params in (EXP, {"modes": [{"rate": 0.5}, {"rate": 2.0}]}):
        kern = make_kernel("prony", params)
        zq = random_state(dom, kern, 0.01, rng)
        zm = State(zq.u.copy(), MarkovianHistory.from_quadrature(zq.eta), 0.0)
        force = ForceData.scaled_to(dom, dom.basis(1), 0.5)
        cfg = StepperConfig(0.01, "imex2", 10.0, 10)
        lam = dom.eigenvalues

        def metric(z):
            return np.concatenate([z.u, [math.sqrt(max(z.eta.norm_sq(), 0.0))]])

        rq = evolve(zq, cfg, force, observers={"m": metric, "n": lambda z: z.h_norm()})
        rm = evolve(zm, cfg, force, observers={"m": metric})
        dq, dm = rq.extra["m"], rm.extra["m"]
        du = np.sqrt(np.sum((1 + lam) * (dq[:, :-1] - dm[:, :-1]) ** 2, axis=1))
        diff = (du + np.abs(dq[:, -1] - dm[:, -1])) / rq.extra["n"]
        worst = max(worst, float(np.max(diff)))
    verdict(6, worst <= 1e-6, f"max relative H-norm difference {worst:.2e} over T = 10")


def test_criterion_7_invariance(verdict, calibrated):
    t0 = time.perf_counter()
    dom, kern, const = calibrated
    force = ForceData.scaled_to(dom, dom.basis(1), const.frak_c / 2)
    rep = admissibility(const, force)
    eps = eps_for_bounded_set(1.0, rep, kern.kappa)
    rng = np.random.default_rng(7)
    dt = 0.01
    states = []
    for i in range(50):
        z = random_state(dom, kern, dt, rng, "markovian", with_history=i % 2 == 0)
        states.append(scale_state(z, math.sqrt(rng.uniform()) / z.h_norm()))
    out = invariance_audit(states, eps, StepperConfig(dt, "imex2", 50.0, 10), force, rep)
    refused = False
    try:
        eps_for_bounded_set(1.0, admissibility(const, ForceData.scaled_to(dom, dom.basis(1), const.frak_c)),
                            kern.kappa)
    except InadmissibleForce:
        refused = True
    elapsed = time.perf_counter() - t0
    ok = out["passed"] and out["max_ratio"] <= 1 + 1e-3 and refused and elapsed < 600
    verdict(7, ok, f"rho = {rep.rho:.3f}, eps = {eps:.4f}, max eps*Lambda/c_* = {out['max_ratio']:.4f} over 50 "
                   f"trajectories, control refused: {refused}, {elapsed:.0f}s (calibration excluded)")


def test_criterion_8_decomposition(verdict, calibrated):
    dom, kern, const = calibrated
    force = ForceData.scaled_to(dom, dom.basis(1) + 0.5 * dom.basis(2), 0.5)
    rep = admissibility(const, force)
    z = random_state(dom, kern, 0.05, np.random.default_rng(8))
    z = scale_state(z, 1.0 / z.h_norm())
    eps = eps_for_bounded_set(1.0, rep, kern.kappa)
    inside = d_eps_contains(z, eps, rep, force)
    results = []
    for f, T in ((ForceData.zero(dom), 10.0), (force, 40.0)):
        _, reg = run_decomposition(z, T, StepperConfig(0.05, "imex2", T, 4), f)
        results.append(reg)
    ok = inside and all(r.split_ok and r.stabilized and r.k_eps_member for r in results)
    detail = "; ".join(f"residual {r.split_residual_max:.1e} (tol {10 * r.split_tolerance:.0e}), "
                       f"growth {r.final_quarter_growth:.2e}, Q {r.Q:.4f}, K_eps {r.k_eps_member}" for r in results)
    verdict(8, ok, detail)


def test_criterion_9_attractor(verdict, calibrated):
    t0 = time.perf_counter()
    dom, kern, const = calibrated
    small = ForceData.scaled_to(dom, dom.basis(1) + 0.5 * dom.basis(2), 0.1 * const.frak_c)
    rep = attractor_ensemble(dom, kern, small, const, 16, 40.0, 0.02, radii=(40.0, 120.0))
    zero = attractor_ensemble(dom, kern, ForceData.zero(dom), const, 16, 40.0, 0.02, radii=(40.0, 120.0))
    elapsed = time.perf_counter() - t0
    ok = (rep["diameter_ratio"] < 0.1 and rep["cross_level_ratio"] < 0.1 and math.isfinite(rep["max_h1_final"])
          and rep["eps_levels"][0] != rep["eps_levels"][1] and zero["max_norm_final"] <= 1e-4 and elapsed < 900)
    verdict(9, ok, f"diameter ratio {rep['diameter_ratio']:.1e}, cross-level {rep['cross_level_ratio']:.1e}, "
                   f"max H1 {rep['max_h1_final']:.4f}, eps levels {rep['eps_levels'][0]:.4f}/"
                   f"{rep['eps_levels'][1]:.4f}, f=0 final norm {zero['max_norm_final']:.1e}, {elapsed:.0f}s")


def test_criterion_10_determinism(verdict, tmp_path):
    dom = Domain(0.0, math.pi, 16)
    kern = make_kernel("prony", {"modes": [{"rate": 0.5}, {"rate": 2.0}]})
    rng = np.random.default_rng(10)
    exact = True
    for backend in ("quadrature", "markovian"):
        z = random_state(dom, kern, 0.05, rng, backend)
        save_state(tmp_path / f"{backend}.bin", z, dom)
        y = load_state(tmp_path / f"{backend}.bin", dom, kern)
        exact &= y.u.tobytes() == z.u.tobytes() and all(
            y.eta.arrays()[k].tobytes() == v.tobytes() for k, v in z.eta.arrays().items())
    cfg = tmp_path / "scenario.json"
    cfg.write_text(json.dumps({"force": {"mode": "scaled", "shape": [1.0, -0.5], "normF": 0.3},
                               "integrator": {"dt": 0.05, "T_final": 5.0, "record_stride": 5}, "seed": 3}))
    for run in ("a", "b"):
        cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / run)])
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("trajectory.csv", "final_state.bin", "summary.json"))
    verdict(10, exact and same, f"round trip bit-exact: {exact}, reruns bit-identical: {same}")
