"""Backend selection for the hot kernels.

The compiled extension ``corrhash._ckernels`` is used when it was built;
otherwise the numpy versions in ``corrhash._pykernels`` are used.  Setting
``CORRHASH_BACKEND=python`` forces the fallback.
"""

import os

from corrhash import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CORRHASH_BACKEND", "").lower() != "python":
    try:
        from corrhash import _ckernels as _impl  # noqa: F811
    except ImportError:
        _impl = _pykernels
    else:
        BACKEND = "cython"

hamming_to_all = _impl.hamming_to_all
topk_hamming = _impl.topk_hamming
topk_hamming_batch = _impl.topk_hamming_batch
enumerate_log_mass = _impl.enumerate_log_mass
mixture_logpmf = _impl.mixture_logpmf


def available_backends():
    """Map of backend name to kernel module, for tests and benchmarks."""
    out = {"python": _pykernels}
    try:
        from corrhash import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
