"""Backend selection for the sampling kernels.

The compiled extension is used when importable; set ``BELLSHADOW_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

BACKEND = "python"

if not os.environ.get("BELLSHADOW_PURE_PYTHON"):
    try:
        from bellshadow._kernels import binom_ppf, counter_uniforms
        BACKEND = "compiled"
    except ImportError:
        pass

if BACKEND == "python":
    from bellshadow._fallback import binom_ppf, counter_uniforms

__all__ = ["BACKEND", "binom_ppf", "counter_uniforms"]
