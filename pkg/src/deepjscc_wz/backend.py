"""Kernel backend selection.

The convolution inner loops (im2col / col2im) exist twice: a numba ``@njit``
implementation and a pure-numpy fallback. Set ``DEEPJSCC_WZ_BACKEND`` to
``numpy`` or ``numba`` to force one; by default numba is used when it imports
cleanly. Both paths produce bit-identical results (same gather layout, same
accumulation order), so the flag never changes numbers, only speed.

``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import os

ENV_VAR = "DEEPJSCC_WZ_BACKEND"


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def resolve_backend() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _numba_available():
            raise ImportError(
                f"{ENV_VAR}=numba requested but numba is not importable"
            )
        return "numba"
    if choice:
        raise ValueError(f"{ENV_VAR} must be 'numpy' or 'numba', got {choice!r}")
    return "numba" if _numba_available() else "numpy"


ACTIVE_BACKEND = resolve_backend()
