"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
fallback. Set ``TRAJIMPUTE_PURE_PYTHON=1`` to force the fallback, or call
:func:`use` at run time.
"""

import os

from . import _pykernels as python

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

BACKENDS = ("python",) + (("cython",) if compiled is not None else ())


def use(name: str) -> None:
    """Switch every kernel to the ``"python"`` or ``"cython"`` backend."""
    global BACKEND, stay_labels, dtw_accumulate, placement_scores
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {', '.join(BACKENDS)}")
    impl = compiled if name == "cython" else python
    BACKEND = impl.BACKEND
    stay_labels = impl.stay_labels
    dtw_accumulate = impl.dtw_accumulate
    placement_scores = impl.placement_scores


use("cython" if compiled is not None and not os.environ.get("TRAJIMPUTE_PURE_PYTHON") else "python")
