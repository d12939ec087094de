"""Backend selection for the ray-tracing kernels.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is loaded. Set ``MCST2CT_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("MCST2CT_PURE_PYTHON", "") not in ("", "0"):
    from . import _siddon_py as siddon
else:
    try:
        from . import _siddon as siddon
    except ImportError:  # extension not built
        from . import _siddon_py as siddon

BACKEND = "cython" if siddon.__name__.endswith("._siddon") else "python"

__all__ = ["BACKEND", "siddon"]
