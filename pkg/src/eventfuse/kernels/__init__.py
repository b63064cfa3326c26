"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time from the EVENTFUSE_NUMBA env var:

    EVENTFUSE_NUMBA=1      require numba (ImportError if missing)
    EVENTFUSE_NUMBA=0      force the pure-numpy fallback
    unset / "auto"         use numba when importable, else numpy

Both backends implement the same functions with identical semantics; they
may differ in the last float ulp (different summation order), never more.
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

_FLAG = os.environ.get("EVENTFUSE_NUMBA", "auto").strip().lower()

if _FLAG in ("0", "off", "false", "no"):
    from . import numpy_backend as _impl

    BACKEND = "numpy"
elif _FLAG in ("1", "on", "true", "yes"):
    from . import numba_backend as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        from . import numpy_backend as _impl

        BACKEND = "numpy"

gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
sigmoid_forward = _impl.sigmoid_forward
softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
layernorm_rows = _impl.layernorm_rows
layernorm_rows_backward = _impl.layernorm_rows_backward
adam_update = _impl.adam_update
ar1_path = _impl.ar1_path
rolling_stats = _impl.rolling_stats

__all__ = [
    "BACKEND",
    "gelu_forward",
    "gelu_backward",
    "sigmoid_forward",
    "softmax_rows",
    "softmax_rows_backward",
    "layernorm_rows",
    "layernorm_rows_backward",
    "adam_update",
    "ar1_path",
    "rolling_stats",
]
