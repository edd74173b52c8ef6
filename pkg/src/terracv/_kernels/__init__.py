"""Kernel backend selection.

The tree-growing inner loops (split search, leaf routing) exist twice: a
compiled Cython extension and a NumPy fallback with identical numerics.  The
compiled backend is used when the extension was built; set
``TERRACV_KERNELS=python`` or ``TERRACV_KERNELS=compiled`` to force one.
``set_backend`` switches at runtime (used by the benchmark and the
equivalence tests).
"""

import os

from . import _split_py

_BACKENDS = {"python": _split_py}
try:
    from . import _split_cy

    _BACKENDS["compiled"] = _split_cy
except ImportError:
    _split_cy = None

_ALIASES = {
    "python": "python",
    "py": "python",
    "compiled": "compiled",
    "c": "compiled",
    "cy": "compiled",
}


def available_backends():
    return tuple(sorted(_BACKENDS))


def _resolve(name):
    key = _ALIASES.get(name.strip().lower())
    if key is None:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {sorted(_ALIASES)}")
    if key not in _BACKENDS:
        raise ImportError(
            f"kernel backend {key!r} requested but the compiled extension is not "
            "available; rebuild the package or use TERRACV_KERNELS=python"
        )
    return key


_env = os.environ.get("TERRACV_KERNELS", "")
if _env:
    _active = _resolve(_env)
else:
    _active = "compiled" if "compiled" in _BACKENDS else "python"


def backend_name():
    """Name of the backend currently answering kernel calls."""
    return _active


def set_backend(name):
    """Switch kernel backend at runtime; returns the previous backend name."""
    global _active
    previous = _active
    _active = _resolve(name)
    return previous


def best_split(order, X, g, min_leaf):
    return _BACKENDS[_active].best_split(order, X, g, min_leaf)


def apply_tree(feature, threshold, left, right, value, X, out):
    return _BACKENDS[_active].apply_tree(feature, threshold, left, right, value, X, out)
