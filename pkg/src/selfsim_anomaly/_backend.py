"""Kernel backend selection.

Hot loops exist twice: a numba ``@njit`` version and a pure numpy version.
Set ``SELFSIM_ANOMALY_BACKEND=numpy`` to force the fallback; the default is
``numba`` when it imports, else ``numpy``.
"""
import os

ENV_VAR = "SELFSIM_ANOMALY_BACKEND"

try:
    import numba  # noqa: F401
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def get_backend(name=None):
    """Resolve a backend name ("numba" or "numpy")."""
    if name is None:
        name = os.environ.get(ENV_VAR, "numba" if HAVE_NUMBA else "numpy")
    name = name.strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}, expected 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        name = "numpy"
    return name
