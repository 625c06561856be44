"""JSON scenario configuration.

A scenario fixes everything a run depends on, so an experiment is
reproducible from its config file alone. Unknown keys are errors and every
error message names the offending field, e.g. ``integrator.dt``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import StepperConfig
from .errors import BBMError, ConfigError
from .functionals import StructuralConstants
from .memory import BACKENDS, Kernel, kernel_from_config
from .spectral import Domain, ForceData

_SECTIONS = {"domain", "kernel", "force", "integrator", "constants", "seed", "output"}
_DOMAIN_KEYS = {"a", "b", "N", "Ngrid"}
_FORCE_KEYS = {"mode", "coeffs", "shape", "normF"}
_INTEGRATOR_KEYS = {"dt", "scheme", "T_final", "record_stride", "backend", "substeps"}
_CONSTANT_KEYS = {"c1", "c2", "c3", "eps0", "source"}
_OUTPUT_KEYS = {"directory", "stride"}

DEFAULTS = {
    "domain": {"a": 0.0, "b": math.pi, "N": 16},
    "kernel": {"family": "prony", "modes": [{"rate": 1.0}]},
    "force": {"mode": "zero"},
    "integrator": {"dt": 0.01, "scheme": "imex2", "T_final": 10.0, "record_stride": 10, "backend": "quadrature",
                   "substeps": 1},
    "constants": None,
    "seed": 0,
    "output": {"directory": "out", "stride": 1},
}


def _keys(block, allowed, path):
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object, got {type(block).__name__}")
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"{path}: unknown keys {sorted(extra)}")


def _number(block, key, path, default=None, integer=False):
    v = block.get(key, default)
    if v is None:
        raise ConfigError(f"{path}.{key}: missing")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    return int(v) if integer else float(v)


@dataclass
class ForceSpec:
    """``mode``: ``zero``, ``coeffs`` (sine coefficients of ``f``) or ``scaled``
    (``shape`` rescaled so that ``||F|| = normF``)."""

    mode: str = "zero"
    coeffs: list | None = None
    shape: list | None = None
    normF: float | None = None

    def build(self, domain: Domain) -> ForceData:
        if self.mode == "zero":
            return ForceData.zero(domain)
        if self.mode == "coeffs":
            return ForceData.from_coeffs(domain, _pad(self.coeffs, domain.N, "force.coeffs"))
        return ForceData.scaled_to(domain, _pad(self.shape, domain.N, "force.shape"), self.normF)

    def to_dict(self) -> dict:
        out = {"mode": self.mode}
        if self.mode == "coeffs":
            out["coeffs"] = list(self.coeffs)
        elif self.mode == "scaled":
            out["shape"] = list(self.shape)
            out["normF"] = self.normF
        return out


def _pad(values, N, path):
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size > N:
        raise ConfigError(f"{path}: expected at most {N} coefficients, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{path}: coefficients must be finite")
    out = np.zeros(N)
    out[: v.size] = v
    return out


def _parse_force(block) -> ForceSpec:
    _keys(block, _FORCE_KEYS, "force")
    mode = block.get("mode", "zero")
    if mode == "zero":
        if set(block) - {"mode"}:
            raise ConfigError("force: mode 'zero' takes no other keys")
        return ForceSpec()
    if mode == "coeffs":
        if "coeffs" not in block:
            raise ConfigError("force.coeffs: missing")
        return ForceSpec("coeffs", coeffs=[float(c) for c in block["coeffs"]])
    if mode == "scaled":
        if "shape" not in block:
            raise ConfigError("force.shape: missing")
        normF = _number(block, "normF", "force")
        if not normF >= 0:
            raise ConfigError("force.normF: must be nonnegative")
        return ForceSpec("scaled", shape=[float(c) for c in block["shape"]], normF=normF)
    raise ConfigError(f"force.mode: expected 'zero', 'coeffs' or 'scaled', got {mode!r}")


@dataclass
class ScenarioConfig:
    domain: Domain = field(default_factory=lambda: Domain(0.0, math.pi, 16))
    kernel_block: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["kernel"]))
    force: ForceSpec = field(default_factory=ForceSpec)
    integrator: StepperConfig = field(default_factory=StepperConfig)
    backend: str = "quadrature"
    substeps: int = 1
    constants: StructuralConstants | None = None
    seed: int = 0
    output_dir: str = "out"
    output_stride: int = 1

    @property
    def kernel(self) -> Kernel:
        return kernel_from_config(self.kernel_block)

    def force_data(self) -> ForceData:
        return self.force.build(self.domain)

    def to_dict(self) -> dict:
        d = self.domain
        dom = {"a": d.a, "b": d.b, "N": d.N}
        if d.Ngrid != math.ceil(1.5 * d.N):
            dom["Ngrid"] = d.Ngrid
        return {
            "domain": dom,
            "kernel": copy.deepcopy(self.kernel_block),
            "force": self.force.to_dict(),
            "integrator": {"dt": self.integrator.dt, "scheme": self.integrator.scheme,
                           "T_final": self.integrator.T_final, "record_stride": self.integrator.record_stride,
                           "backend": self.backend, "substeps": self.substeps},
            "constants": None if self.constants is None else self.constants.to_dict(),
            "seed": self.seed,
            "output": {"directory": self.output_dir, "stride": self.output_stride},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_integrator(self, **changes) -> "ScenarioConfig":
        cur = self.integrator
        vals = {"dt": cur.dt, "scheme": cur.scheme, "T_final": cur.T_final, "record_stride": cur.record_stride}
        vals.update({k: v for k, v in changes.items() if v is not None})
        return ScenarioConfig(self.domain, copy.deepcopy(self.kernel_block), self.force, StepperConfig(**vals),
                              self.backend, self.substeps, self.constants, self.seed, self.output_dir,
                              self.output_stride)


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a decoded JSON object. Missing sections take ``DEFAULTS``."""
    _keys(data, _SECTIONS, "config")
    try:
        blk = data.get("domain", DEFAULTS["domain"])
        _keys(blk, _DOMAIN_KEYS, "domain")
        ngrid = blk.get("Ngrid")
        domain = Domain(_number(blk, "a", "domain", 0.0), _number(blk, "b", "domain", math.pi),
                        _number(blk, "N", "domain", 16, integer=True),
                        None if ngrid is None else _number(blk, "Ngrid", "domain", integer=True))
    except ConfigError:
        raise
    except (BBMError, ValueError) as exc:
        raise ConfigError(f"domain: {exc}") from exc

    kblock = data.get("kernel", DEFAULTS["kernel"])
    if not isinstance(kblock, dict):
        raise ConfigError("kernel: expected an object")
    try:
        kernel_from_config(kblock)
    except BBMError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith("kernel") else f"kernel: {msg}") from exc

    force = _parse_force(data.get("force", DEFAULTS["force"]))
    try:
        force.build(domain)
    except ConfigError:
        raise
    except (BBMError, ValueError) as exc:
        raise ConfigError(f"force: {exc}") from exc

    blk = dict(DEFAULTS["integrator"], **data.get("integrator", {}))
    _keys(blk, _INTEGRATOR_KEYS, "integrator")
    backend = blk["backend"]
    if backend not in BACKENDS:
        raise ConfigError(f"integrator.backend: expected one of {BACKENDS}, got {backend!r}")
    integ = StepperConfig(_number(blk, "dt", "integrator"), blk["scheme"], _number(blk, "T_final", "integrator"),
                          _number(blk, "record_stride", "integrator", integer=True))
    substeps = _number(blk, "substeps", "integrator", integer=True)
    if substeps < 1:
        raise ConfigError("integrator.substeps: must be >= 1")
    if integ.scheme == "rk4_explicit" and backend != "markovian":
        raise ConfigError("integrator.scheme: rk4_explicit requires integrator.backend = 'markovian'")

    cblk = data.get("constants")
    constants = None
    if cblk is not None:
        _keys(cblk, _CONSTANT_KEYS, "constants")
        vals = {k: _number(cblk, k, "constants") for k in ("c1", "c2", "c3", "eps0")}
        try:
            constants = StructuralConstants(**vals, source=cblk.get("source", "configured")).validate(domain.omega)
        except BBMError as exc:
            msg = str(exc)
            raise ConfigError(msg if msg.startswith("constants") else f"constants: {msg}") from exc

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a nonnegative integer, got {seed!r}")

    blk = dict(DEFAULTS["output"], **data.get("output", {}))
    _keys(blk, _OUTPUT_KEYS, "output")
    if not isinstance(blk["directory"], str):
        raise ConfigError("output.directory: expected a string")
    stride = _number(blk, "stride", "output", integer=True)
    if stride < 1:
        raise ConfigError("output.stride: must be >= 1")

    return ScenarioConfig(domain, copy.deepcopy(kblock), force, integ, backend, substeps, constants, seed,
                          blk["directory"], stride)


def loads(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return parse_config(data)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
