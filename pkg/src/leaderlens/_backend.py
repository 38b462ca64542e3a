"""Numba/NumPy backend selection for the hot numeric kernels.

The package ships two implementations of its inner loops (studentized-range
integration, t-SNE affinities and gradient descent): numba ``@njit`` kernels
and vectorized pure-numpy fallbacks.  Selection happens once, at import time,
through the ``LEADERLENS_BACKEND`` environment variable:

    LEADERLENS_BACKEND=numba   force numba (error if numba is missing)
    LEADERLENS_BACKEND=numpy   force the pure-numpy path
    unset                      numba when importable, numpy otherwise

Both paths compute the same quantities to within floating-point reduction
order; results are deterministic within a backend but not guaranteed
bit-identical across backends.  ``benchmarks/bench_backends.py`` compares
their speed and agreement.
"""

import os
import warnings

_ENV_VAR = "LEADERLENS_BACKEND"

try:
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        """Stand-in decorator so kernel sources still import without numba."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


def _resolve(choice: str, have_numba: bool) -> bool:
    choice = choice.strip().lower()
    if choice == "numpy":
        return False
    if choice == "numba":
        if not have_numba:
            raise ImportError(
                f"{_ENV_VAR}=numba requested but numba is not importable"
            )
        return True
    if choice not in ("", "auto"):
        warnings.warn(
            f"unknown {_ENV_VAR}={choice!r}; falling back to auto selection",
            stacklevel=2,
        )
    return have_numba


USE_NUMBA = _resolve(os.environ.get(_ENV_VAR, ""), HAVE_NUMBA)


def backend_name() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return "numba" if USE_NUMBA else "numpy"
