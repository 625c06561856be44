import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbm_memory import cli
from bbm_memory.config import loads, parse_config
from bbm_memory.dynamics import State, StepperConfig, evolve
from bbm_memory.ensemble import PointCloud, attractor_ensemble, hausdorff, semidistance
from bbm_memory.errors import ConfigError, InadmissibleForce, ValidationError
from bbm_memory.functionals import random_state
from bbm_memory.io import load_state, save_state
from bbm_memory.memory import make_kernel
from bbm_memory.spectral import Domain, ForceData


# --- config ---------------------------------------------------------------

@pytest.mark.parametrize("text,path", [
    ('{"domian": {}}', "config"),
    ('{"integrator": {"dtt": 1}}', "integrator"),
    ('{"integrator": {"dt": -1}}', "integrator.dt"),
    ('{"kernel": {"family": "prony", "modes": [{"rate": 1, "w": 2}]}}', "kernel.modes[0]"),
    ('{"force": {"mode": "scaled", "shape": [1]}}', "force.normF"),
    ('{"force": {"mode": "coeffs", "coeffs": [1, 2, 3]}, "domain": {"N": 2}}', "force.coeffs"),
    ('{"constants": {"c1": 1, "c2": 1, "c3": 1}}', "constants.eps0"),
    ('{"constants": {"c1": 1, "c2": 1, "c3": 1, "eps0": 0.5}}', "constants.eps0"),
    ('{"integrator": {"scheme": "rk4_explicit"}}', "integrator.scheme"),
    ('{"seed": -3}', "seed"),
    ('not json', "config"),
])
def test_config_errors_name_the_field(text, path):
    with pytest.raises(ConfigError) as info:
        loads(text)
    assert str(info.value).startswith(path)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.sampled_from([0.01, 0.02, 0.05]), st.integers(0, 1000),
       st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=4), st.floats(0.0, 3.0))
def test_config_round_trip(N, dt, seed, shape, normF):
    if not any(shape):
        shape = [1.0]
    data = {"domain": {"a": 0.0, "b": 2.0, "N": N},
            "kernel": {"family": "prony", "modes": [{"rate": 0.5}, {"rate": 2.0, "weight": 3.0}]},
            "force": {"mode": "scaled", "shape": shape[:N], "normF": normF},
            "integrator": {"dt": dt, "T_final": 1.0}, "seed": seed}
    try:
        cfg = parse_config(data)
    except ConfigError:
        return  # shape with vanishing primitive
    again = loads(cfg.to_json())
    assert again.to_dict() == cfg.to_dict() and again.digest() == cfg.digest()


def test_default_config():
    cfg = parse_config({})
    assert cfg.domain.N == 16 and cfg.kernel.kappa == 1.0 and cfg.force_data().is_zero


# --- persistence ---------------------------------------------------------

@pytest.mark.parametrize("backend", ["quadrature", "markovian"])
def test_state_round_trip_is_bit_exact(tmp_path, dom16, exp_kernel, rng, backend):
    z = random_state(dom16, exp_kernel, 0.05, rng, backend)
    z.t = 1.25
    save_state(tmp_path / "z.bin", z, dom16)
    y = load_state(tmp_path / "z.bin", dom16, exp_kernel)
    assert y.t == z.t and y.u.tobytes() == z.u.tobytes()
    for name, arr in z.eta.arrays().items():
        assert y.eta.arrays()[name].tobytes() == arr.tobytes()
    cfg = StepperConfig(0.05, "imex2", 1.0, 5)
    force = ForceData.scaled_to(dom16, dom16.basis(1), 0.3)
    a = evolve(z, cfg, force, return_state=True)[1]
    b = evolve(y, cfg, force, return_state=True)[1]
    assert a.u.tobytes() == b.u.tobytes()


def test_load_refuses_mismatches(tmp_path, dom16, exp_kernel, rng):
    z = random_state(dom16, exp_kernel, 0.05, rng)
    path = tmp_path / "z.bin"
    save_state(path, z, dom16)
    with pytest.raises(ValidationError):
        load_state(path, Domain(0.0, math.pi, 8), exp_kernel)
    with pytest.raises(ValidationError):
        load_state(path, dom16, make_kernel("prony", {"modes": [{"rate": 2.0}]}))
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    with pytest.raises(ValidationError):
        load_state(tmp_path / "short.bin", dom16, exp_kernel)
    (tmp_path / "magic.bin").write_bytes(b"X" + data[1:])
    with pytest.raises(ValidationError):
        load_state(tmp_path / "magic.bin", dom16, exp_kernel)
    (tmp_path / "ver.bin").write_bytes(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(ValidationError):
        load_state(tmp_path / "ver.bin", dom16, exp_kernel)


# --- clouds -------------------------------------------------------------

def test_semidistance_examples(exp_kernel):
    dom = Domain(0.0, math.pi, 8)
    zero = State.zero(dom, exp_kernel, 0.1)
    e1 = State.from_velocity(dom.basis(1), dom, exp_kernel, 0.1)
    e2 = State.from_velocity(dom.basis(2), dom, exp_kernel, 0.1)
    assert semidistance([zero], [zero]) == 0.0
    assert semidistance([zero], [e1]) == pytest.approx(math.sqrt(2.0), rel=1e-14)
    # subset: zero distance one way only
    assert semidistance([e1], [e1, e2]) == 0.0
    assert semidistance([e1, e2], [e1]) > 0.0
    assert hausdorff([e1], [e1, e2]) == semidistance([e1, e2], [e1])


def test_cloud_requires_common_discretization(exp_kernel):
    dom = Domain(0.0, math.pi, 8)
    with pytest.raises(ValidationError):
        PointCloud([])
    with pytest.raises(ValidationError):
        PointCloud([State.zero(dom, exp_kernel, 0.1), State.zero(dom, exp_kernel, 0.05)])


def test_ensemble_error_paths(dom16, exp_kernel, constants16):
    with pytest.raises(ValidationError):
        attractor_ensemble(dom16, exp_kernel, ForceData.zero(dom16), constants16, 1, 1.0, 0.05)
    big = ForceData.scaled_to(dom16, dom16.basis(1), 2 * constants16.frak_c)
    with pytest.raises(InadmissibleForce):
        attractor_ensemble(dom16, exp_kernel, big, constants16, 4, 1.0, 0.05)


def test_small_ensemble_contracts(dom16, exp_kernel, constants16):
    rep = attractor_ensemble(dom16, exp_kernel, ForceData.zero(dom16), constants16, 4, 10.0, 0.05, radii=(1.0, 3.0))
    assert rep["diameter"][-1] < rep["diameter"][0]
    assert rep["eps_levels"][0] >= rep["eps_levels"][1]


# --- command line -------------------------------------------------------

CONST = {"c1": 0.6427464504903256, "c2": 0.7034329230735054, "c3": 0.0013102713055387347,
         "eps0": 0.17677669529663687}


def _write(tmp_path, **blocks):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(blocks))
    return str(path)


def test_cli_energy_audit_zero(tmp_path):
    cfgp = _write(tmp_path, integrator={"dt": 0.05, "T_final": 1.0, "record_stride": 1})
    assert cli.main(["energy-audit", "--config", cfgp, "--out", str(tmp_path / "o"), "--amplitude", "0"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["command"] == "energy-audit" and summary["passed"]
    assert summary["metrics"]["max_residual"] == 0.0
    assert set(summary) >= {"command", "config_hash", "checks", "metrics"}


def test_cli_riccati(tmp_path, capsys):
    assert cli.main(["riccati", "--a", "1", "--b", "2", "--c", "1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "rho = 2" in out and "0.2679491924" in out and "3.732050808" in out and "5.0987" in out


def test_cli_invariance_refuses_large_force(tmp_path):
    cfgp = _write(tmp_path, force={"mode": "scaled", "shape": [1.0], "normF": 20.0}, constants=CONST)
    assert cli.main(["invariance", "--config", cfgp, "--out", str(tmp_path / "o")]) == 2
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert not summary["metrics"]["admissibility"]["admissible"]


def test_cli_bad_config_exit_code(tmp_path, capsys):
    cfgp = _write(tmp_path, integrator={"dtt": 1})
    assert cli.main(["simulate", "--config", cfgp]) == 2
    assert "integrator" in capsys.readouterr().err


def test_cli_simulate_is_deterministic(tmp_path):
    cfgp = _write(tmp_path, force={"mode": "scaled", "shape": [1.0, 0.5], "normF": 0.5},
                  integrator={"dt": 0.05, "T_final": 2.0, "record_stride": 4}, seed=7)
    for name in ("a", "b"):
        assert cli.main(["simulate", "--config", cfgp, "--out", str(tmp_path / name)]) == 0
    for f in ("trajectory.csv", "final_state.bin", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    # continue from the saved state
    assert cli.main(["simulate", "--config", cfgp, "--out", str(tmp_path / "c"),
                     "--initial", str(tmp_path / "a" / "final_state.bin")]) == 0


def test_cli_decay_and_decompose(tmp_path):
    cfgp = _write(tmp_path, integrator={"dt": 0.05, "T_final": 40.0, "record_stride": 4, "backend": "markovian"})
    assert cli.main(["decay", "--config", cfgp, "--out", str(tmp_path / "d")]) in (0, 1)
    summary = json.loads((tmp_path / "d" / "summary.json").read_text())
    assert summary["metrics"]["beta"] > 0
    assert cli.main(["decompose", "--config", cfgp, "--out", str(tmp_path / "s"), "--T", "10"]) == 0
    assert (tmp_path / "s" / "decomposition.csv").exists()
