"""Kernel backend selection.

The hot loops (1D convolution and codebook nearest-neighbor search) have two
implementations: a compiled Cython core (fastcore) and a pure-numpy reference
(pyref). The compiled core is preferred when built; SYNMOTION_KERNELS can
force either one ("compiled" / "python" / "auto").
"""

import os

from . import pyref

try:
    from . import fastcore as _fastcore
except ImportError:
    _fastcore = None

_choice = os.environ.get("SYNMOTION_KERNELS", "auto").lower()
if _choice == "python":
    _impl = pyref
elif _choice == "compiled":
    if _fastcore is None:
        raise ImportError(
            "SYNMOTION_KERNELS=compiled but the fastcore extension is not built; "
            "run `pip install -e . --no-build-isolation`"
        )
    _impl = _fastcore
elif _choice == "auto":
    _impl = _fastcore if _fastcore is not None else pyref
else:
    raise ValueError(f"unknown SYNMOTION_KERNELS value {_choice!r}")

BACKEND = "compiled" if _impl is _fastcore and _fastcore is not None else "python"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
nearest_code = _impl.nearest_code


def backends():
    """Available backend modules, keyed by name (for tests and benchmarks)."""
    out = {"python": pyref}
    if _fastcore is not None:
        out["compiled"] = _fastcore
    return out
