"""Binary state files and CSV/JSON helpers.

State file layout (all little endian)::

    magic   8s   b"BBMSTATE"
    version u4
    backend u4   0 = quadrature, 1 = markovian
    N       u4
    J       u4   last s-node index (number of kernel modes for markovian)
    a, b    f8   domain end points
    h       f8   s-spacing (0 for markovian)
    t       f8
    kernel  16s  kernel digest
    then float64 arrays: u (N), followed by eta, right, left ((J+1) x N each)
    or psi, q (modes x N each).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .dynamics import State
from .errors import ValidationError
from .memory import Kernel, MarkovianHistory, QuadratureHistory, SGrid
from .spectral import Domain

MAGIC = b"BBMSTATE"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIdddd16s")
_BACKEND_CODES = {"quadrature": 0, "markovian": 1}


def save_state(path, z: State, domain: Domain) -> None:
    h = z.eta
    if h.backend == "quadrature":
        J, step = h.grid.J, h.grid.h
        blocks = (h.eta, h.right, h.left)
    else:
        J, step = h.psi.shape[0], 0.0
        blocks = (h.psi, h.q)
    header = _HEADER.pack(MAGIC, VERSION, _BACKEND_CODES[h.backend], domain.N, J, domain.a, domain.b, step,
                          z.t, h.kernel.digest.encode())
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (z.u,) + blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_state(path, domain: Domain, kernel: Kernel) -> State:
    """Read a state saved with ``save_state``; the discretization must match exactly."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated state file")
    magic, version, code, N, J, a, b, step, t, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{path}: not a state file")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported state file version {version} (expected {VERSION})")
    if N != domain.N or a != domain.a or b != domain.b:
        raise ValidationError(f"{path}: saved on (a={a}, b={b}, N={N}), requested (a={domain.a}, b={domain.b}, "
                              f"N={domain.N})")
    if digest.decode() != kernel.digest:
        raise ValidationError(f"{path}: kernel digest {digest.decode()} does not match {kernel.digest}")
    backend = {v: k for k, v in _BACKEND_CODES.items()}.get(code)
    if backend is None:
        raise ValidationError(f"{path}: unknown backend code {code}")
    rows = [1] + ([J + 1] * 3 if backend == "quadrature" else [J] * 2)
    expected = _HEADER.size + 8 * N * sum(rows)
    if len(data) != expected:
        raise ValidationError(f"{path}: size {len(data)} does not match the header ({expected} bytes)")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    parts, pos = [], 0
    for r in rows:
        parts.append(flat[pos: pos + r * N].reshape(r, N).copy())
        pos += r * N
    u = parts[0][0]
    lam = domain.eigenvalues
    if backend == "quadrature":
        grid = SGrid(kernel, step, J)
        hist = QuadratureHistory(grid, lam, *parts[1:])
    else:
        if J != len(kernel.rates):
            raise ValidationError(f"{path}: {J} memory modes saved, kernel has {len(kernel.rates)}")
        hist = MarkovianHistory(kernel, lam, *parts[1:])
    return State(u, hist, t)


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
