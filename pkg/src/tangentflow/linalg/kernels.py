"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``TANGENTFLOW_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if os.environ.get("TANGENTFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

csr_matvec = _impl.csr_matvec
csr_matmat = _impl.csr_matmat
coo_to_csr = _impl.coo_to_csr


def implementations() -> dict:
    """All available kernel sets, keyed by backend name (used by the benchmark)."""
    out = {"python": _fallback}
    try:
        from . import _kernels
        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
