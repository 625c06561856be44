import math

import numpy as np
import pytest

from bbm_memory.decomposition import (
    SplitState, auxiliary_functionals, choose_nu, fit_decay_rate, run_decomposition, step_split,
)
from bbm_memory.dynamics import State, StepperConfig
from bbm_memory.errors import ConfigError
from bbm_memory.functionals import random_state
from bbm_memory.memory import QuadratureHistory
from bbm_memory.spectral import ForceData


def test_fit_exact_exponential():
    t = np.linspace(0, 5, 50)
    beta, rms = fit_decay_rate(t, np.exp(-2 * t))
    assert beta == pytest.approx(2.0, abs=1e-12) and rms < 1e-12


def test_fit_oscillatory_decay():
    t = np.linspace(0, 30, 300)
    beta, rms = fit_decay_rate(t, np.exp(-t) * (2 + np.sin(t)))
    assert beta == pytest.approx(1.0, abs=0.1) and rms > 0


def test_fit_constant_and_errors():
    assert fit_decay_rate(np.arange(10.0), np.full(10, 3.0))[0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_decay_rate(np.arange(10.0), np.r_[np.ones(9), 0.0])
    with pytest.raises(ValueError):
        fit_decay_rate(np.arange(5.0), np.ones(5))


def test_zero_split_stays_zero(dom16, exp_kernel):
    s = SplitState.start(State.zero(dom16, exp_kernel, 0.05))
    for _ in range(5):
        s = step_split(s, StepperConfig(0.05), ForceData.zero(dom16))
    assert not np.any(s.full.u) and not np.any(s.linear.u) and not np.any(s.forced.u)
    aux = auxiliary_functionals(s, 0.1)
    assert all(aux[k] == 0.0 for k in ("Phi", "Theta", "Psi", "Upsilon"))


def test_phi_reference_value(dom16, exp_kernel):
    e1 = dom16.basis(1)
    h = QuadratureHistory.from_function(exp_kernel, dom16.eigenvalues, 0.05, lambda s: np.outer(1 - np.exp(-s), e1),
                                        lambda s: np.outer(np.exp(-s), e1))
    z = State(e1.copy(), h, 0.0)
    s = SplitState(z, z, State.zero(dom16, exp_kernel, 0.05))
    assert auxiliary_functionals(s, 0.1)["Phi"] == pytest.approx(-1.0, abs=1e-7)


def test_sandwich_on_moderate_states(dom16, exp_kernel, rng):
    for _ in range(20):
        v = random_state(dom16, exp_kernel, 0.05, rng)
        w = random_state(dom16, exp_kernel, 0.05, rng)
        assert auxiliary_functionals(SplitState(v, v, w), 0.1)["sandwich_ok"]


def test_nu_is_halved_when_needed(dom16, exp_kernel):
    e1 = dom16.basis(1)
    # u = 2 e1, xi(s) = s e1: X = 10 and Phi = -4, so Theta_2 = 2 < X/2
    h = QuadratureHistory.from_function(exp_kernel, dom16.eigenvalues, 0.05, lambda s: np.outer(s, e1),
                                        lambda s: np.outer(np.ones_like(s), e1))
    z = State(2.0 * e1, h, 0.0)
    s = SplitState(z, z, State.zero(dom16, exp_kernel, 0.05))
    assert not auxiliary_functionals(s, 2.0)["sandwich_ok"]
    nu = choose_nu(s, 2.0)
    assert nu < 2.0 and auxiliary_functionals(s, nu)["sandwich_ok"]


def test_split_residual_forced_run(dom16, exp_kernel, rng):
    z = random_state(dom16, exp_kernel, 0.05, rng)
    s = SplitState.start(z)
    force = ForceData.scaled_to(dom16, dom16.basis(1), 0.5)
    for _ in range(100):
        s = step_split(s, StepperConfig(0.05), force)
    assert s.residual() < 1e-12


def test_run_decomposition_reports(tmp_path, dom16, exp_kernel):
    z = State.from_velocity(0.1 * dom16.basis(1), dom16, exp_kernel, 0.05)
    decay, reg = run_decomposition(z, 20.0, StepperConfig(0.05, "imex2", 20.0, 4), ForceData.zero(dom16),
                                   csv_path=tmp_path / "d.csv")
    assert decay.beta > 0 and math.isfinite(decay.prefactor)
    assert reg.split_ok and reg.k_eps_member and reg.pointwise_ok
    assert reg.sup_ds_zeta_M1 <= reg.Q * math.sqrt(exp_kernel.kappa) * (1 + 1e-8)
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "t,E_linear,E_forced_H1,residual_split,Theta_nu,Upsilon_nu"


def test_decomposition_needs_quadrature(dom16, exp_kernel):
    z = State.from_velocity(dom16.basis(1), dom16, exp_kernel, 0.05, "markovian")
    with pytest.raises(ConfigError):
        run_decomposition(z, 1.0, StepperConfig(0.05), ForceData.zero(dom16))


def test_linear_part_decay_rate(dom16, exp_kernel):
    z = State.from_velocity(0.1 * dom16.basis(1), dom16, exp_kernel, 0.05)
    decay, reg = run_decomposition(z, 80.0, StepperConfig(0.05, "imex2", 80.0, 10), ForceData.zero(dom16))
    assert decay.beta == pytest.approx(0.499, abs=0.01)
    assert decay.fit_rms < 0.05
    assert reg.stabilized and reg.k_eps_member
