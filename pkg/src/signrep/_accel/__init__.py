"""Kernel backend selection.

Prefers the compiled Cython extension when it imported cleanly; otherwise
falls back to the numpy implementation. ``SIGNREP_FORCE_FALLBACK=1`` forces
the fallback (used by the parity tests and the benchmark).
"""

import os

import numpy as np

from . import _numpy_impl

_impl = _numpy_impl
_backend_name = "numpy"

if not os.environ.get("SIGNREP_FORCE_FALLBACK"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        _backend_name = "cython"


def backend():
    """Name of the active kernel backend: 'cython' or 'numpy'."""
    return _backend_name


def implementations():
    """Both backends keyed by name; the compiled one only if importable."""
    impls = {"numpy": _numpy_impl}
    try:
        from . import _kernels as compiled
    except ImportError:
        pass
    else:
        impls["cython"] = compiled
    return impls


def _flat(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype).reshape(-1)


def _rows(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def gelu_fwd(x):
    out = _impl.gelu_fwd(_flat(x, x.dtype))
    return np.asarray(out).reshape(x.shape)


def gelu_bwd(x, gy):
    out = _impl.gelu_bwd(_flat(x, x.dtype), _flat(gy, x.dtype))
    return np.asarray(out).reshape(x.shape)


def softmax_fwd(x):
    return _impl.softmax_fwd(_rows(x, x.dtype))


def softmax_bwd(y, gy):
    return _impl.softmax_bwd(_rows(y, y.dtype), _rows(gy, y.dtype))


def layernorm_fwd(x, gamma, beta, eps):
    x = _rows(x, x.dtype)
    return _impl.layernorm_fwd(x, _flat(gamma, x.dtype), _flat(beta, x.dtype),
                               float(eps))


def layernorm_bwd(x, gamma, mean, rstd, gy):
    x = _rows(x, x.dtype)
    return _impl.layernorm_bwd(x, _flat(gamma, x.dtype), _flat(mean, x.dtype),
                               _flat(rstd, x.dtype), _rows(gy, x.dtype))


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """In-place Adam step with decoupled weight decay on flat views of p/m/v."""
    if not (p.flags["C_CONTIGUOUS"] and m.flags["C_CONTIGUOUS"]
            and v.flags["C_CONTIGUOUS"]):
        raise ValueError("optimizer state must be contiguous")
    _impl.adamw_update(p.reshape(-1), _flat(np.asarray(g), p.dtype),
                       m.reshape(-1), v.reshape(-1), int(step), float(lr),
                       float(beta1), float(beta2), float(eps),
                       float(weight_decay))
