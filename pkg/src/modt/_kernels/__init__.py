"""Kernel backend selection.

Imports the compiled extension when it is present and falls back to the
numpy implementations otherwise. Set MODT_KERNELS=numpy or MODT_KERNELS=compiled
to force a backend (the latter raises if the extension is missing).
"""

import os

from . import numpy_backend

_forced = os.environ.get("MODT_KERNELS", "").strip().lower()

if _forced == "numpy":
    impl = numpy_backend
elif _forced == "compiled":
    from . import core as impl  # noqa: F401  (ImportError here is intentional)
else:
    try:
        from . import core as impl
    except ImportError:
        impl = numpy_backend

BACKEND = impl.NAME

softmax_fwd = impl.softmax_fwd
softmax_bwd = impl.softmax_bwd
causal_softmax_fwd = impl.causal_softmax_fwd
causal_softmax_bwd = impl.causal_softmax_bwd
layernorm_fwd = impl.layernorm_fwd
layernorm_bwd = impl.layernorm_bwd
relu_fwd = impl.relu_fwd
relu_bwd = impl.relu_bwd
