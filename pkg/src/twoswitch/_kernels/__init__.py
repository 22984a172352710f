"""Trajectory-simulation kernels: compiled core with a NumPy fallback.

The per-step filter recursions inside Monte Carlo loops dominate the
runtime of every experiment, so they are implemented twice with one
contract: a Cython extension (``_core``) looping per trial in C, and a
vectorized NumPy implementation batching across trials. The backend is
chosen once at import time; set ``TWOSWITCH_PURE_PYTHON=1`` to force the
NumPy kernels. ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _numpy_impl

if os.environ.get("TWOSWITCH_PURE_PYTHON"):
    _backend = _numpy_impl
    BACKEND_NAME = "numpy"
else:
    try:
        from . import _core as _backend
        BACKEND_NAME = "compiled"
    except ImportError:
        _backend = _numpy_impl
        BACKEND_NAME = "numpy"

simulate_open_loop = _backend.simulate_open_loop
simulate_closed_loop = _backend.simulate_closed_loop

numpy_backend = _numpy_impl

__all__ = [
    "BACKEND_NAME",
    "numpy_backend",
    "simulate_closed_loop",
    "simulate_open_loop",
]
