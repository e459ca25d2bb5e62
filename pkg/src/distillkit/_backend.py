"""Kernel backend selection.

The numeric hot loops (tree split search, cyclic boosting micro-steps,
expression-program evaluation) exist twice: a compiled Cython extension
(``distillkit._kernels``) and a pure NumPy fallback
(``distillkit._kernels_py``) with identical semantics.  The compiled module
is preferred when importable; ``DISTILLKIT_PURE_PYTHON=1`` forces the
fallback.  Both backends follow the same summation orders so that tree and
boosting outputs are bit-identical across them.
"""

import os

if os.environ.get("DISTILLKIT_PURE_PYTHON", "").strip() in ("1", "true", "yes"):
    from distillkit import _kernels_py as kernels

    _BACKEND_NAME = "python"
else:
    try:
        from distillkit import _kernels as kernels  # type: ignore[no-redef]

        _BACKEND_NAME = "cython"
    except ImportError:
        from distillkit import _kernels_py as kernels  # type: ignore[no-redef]

        _BACKEND_NAME = "python"


def backend_name() -> str:
    """Name of the active kernel backend: ``"cython"`` or ``"python"``."""
    return _BACKEND_NAME


__all__ = ["kernels", "backend_name"]
