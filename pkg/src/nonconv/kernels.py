"""Backend selection for the hot path kernels.

The compiled extension is used when it imported cleanly; the pure-Python
reference otherwise.  NONCONV_BACKEND=py forces the reference backend,
NONCONV_BACKEND=c insists on the compiled one (and fails loudly when it is
missing).  Both backends implement the same uniform-consumption protocol and
return bit-identical results, so the choice only affects speed.
"""
from __future__ import annotations

import os

from . import _kernels_py
from .errors import ValidationError

_requested = os.environ.get("NONCONV_BACKEND", "auto").strip().lower() or "auto"

if _requested not in ("auto", "c", "py"):
    raise ValidationError(
        f"NONCONV_BACKEND must be 'auto', 'c' or 'py', got {_requested!r}"
    )

_compiled = None
if _requested in ("auto", "c"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
    if _requested == "c" and _compiled is None:
        raise ImportError(
            "NONCONV_BACKEND=c but the compiled kernels are not available"
        )

BACKEND = "c" if _compiled is not None else "py"
_active = _compiled if _compiled is not None else _kernels_py

markov_scan = _active.markov_scan
ctmc_integrate = _active.ctmc_integrate


def backend_name() -> str:
    return BACKEND


def available_backends() -> dict:
    """Importable kernel modules by name, for benchmarks and equality tests."""
    out = {"py": _kernels_py}
    try:
        from . import _kernels  # noqa: F811

        out["c"] = _kernels
    except ImportError:
        pass
    return out
