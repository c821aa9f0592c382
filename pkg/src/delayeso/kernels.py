"""Integrator backend selection.

The compiled extension is used when it imports; otherwise (or when the
environment variable ``DELAYESO_PURE_PYTHON`` is set to a truthy value) the
numpy implementation is used. Both expose the same ``integrate`` function.
"""

import os

from . import _fallback

BACKEND = "python"
integrate = _fallback.integrate

if os.environ.get("DELAYESO_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernel
    except ImportError:  # extension not built
        pass
    else:
        integrate = _kernel.integrate
        BACKEND = "cython"


def backends():
    """Map of available backend name to ``integrate`` callable."""
    out = {"python": _fallback.integrate}
    try:
        from . import _kernel
    except ImportError:
        return out
    out["cython"] = _kernel.integrate
    return out
