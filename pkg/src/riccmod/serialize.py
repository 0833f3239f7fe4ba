"""JSON encoding of problem instances.

Matrices are row-major nested lists, dimensions plain integers. Infinite
bounds are stored as null (-inf for ``umin``, +inf for ``umax``).
"""
from __future__ import annotations

import json
from dataclasses import fields

import numpy as np

from .asqp import CftocProblem
from .uftoc import UftocProblem

_KINDS = {"uftoc": UftocProblem, "cftoc": CftocProblem}
_SCALARS = {"cN"}


def _encode(v):
    if isinstance(v, list):
        return [_encode(x) for x in v]
    if isinstance(v, np.ndarray):
        return [None if not np.isfinite(x) else float(x) for x in v.ravel()] \
            if v.ndim == 1 else v.tolist()
    return float(v)


def to_dict(p) -> dict:
    kind = next(k for k, cls in _KINDS.items() if isinstance(p, cls))
    out = {"kind": kind, "N": p.N, "nx": p.nx}
    nin = p.nw if kind == "uftoc" else p.nu
    out["nu"] = [int(nin(t)) for t in range(p.N)]
    for f in fields(p):
        out[f.name] = _encode(getattr(p, f.name))
    return out


def _matrix(v, shape):
    return np.array(v, dtype=float).reshape(shape)


def _vector(v, fill=np.nan):
    return np.array([fill if x is None else x for x in v], dtype=float)


def from_dict(d: dict):
    kind = d.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"unknown problem kind {kind!r}")
    N, nx, nu = int(d["N"]), int(d["nx"]), [int(n) for n in d["nu"]]
    mats = {
        "A": lambda t: (nx, nx), "B": lambda t: (nx, nu[t]), "Qx": lambda t: (nx, nx),
        "Qxw": lambda t: (nx, nu[t]), "Qw": lambda t: (nu[t], nu[t]),
        "Qxu": lambda t: (nx, nu[t]), "Qu": lambda t: (nu[t], nu[t]),
    }
    kw = {}
    for f in fields(_KINDS[kind]):
        v = d[f.name]
        if f.name in mats:
            kw[f.name] = [_matrix(v[t], mats[f.name](t)) for t in range(N)]
        elif f.name == "c":
            kw[f.name] = [float(x) for x in v]
        elif f.name == "umin":
            kw[f.name] = [_vector(x, -np.inf) for x in v]
        elif f.name == "umax":
            kw[f.name] = [_vector(x, np.inf) for x in v]
        elif f.name in _SCALARS:
            kw[f.name] = float(v)
        elif f.name == "QxN":
            kw[f.name] = _matrix(v, (nx, nx))
        elif f.name in ("x0", "lxN"):
            kw[f.name] = _vector(v)
        else:
            kw[f.name] = [_vector(x) for x in v]
    p = _KINDS[kind](**kw)
    p.validate()
    return p


def dump(p, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(p), fh)


def load(path):
    with open(path) as fh:
        return from_dict(json.load(fh))
