"""Hot-kernel backend selection.

The compiled extension (``_speedups``, Cython) and the pure-Python module
(``_py``) expose identical signatures for the two loop-bound kernels:

- ``dijkstra_csr(indptr, indices, weights, source, out)``
- ``bh_forces(Y, indptr, indices, pvals, theta, attr_out, rep_out) -> Z``

The compiled backend is preferred when importable; set ``MG_NO_EXT=1`` to
force the pure-Python fallback. ``BACKEND`` records which one is active.
"""

import os

from . import _py

_force_py = os.environ.get("MG_NO_EXT", "").strip().lower() in ("1", "true", "yes")

if not _force_py:
    try:
        from . import _speedups as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _py
        BACKEND = "python"
else:
    _impl = _py
    BACKEND = "python"

dijkstra_csr = _impl.dijkstra_csr
bh_forces = _impl.bh_forces
