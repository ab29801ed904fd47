"""Selects the compiled kernels when available, else the numpy fallback."""

import os

if os.environ.get("HYPERBEAM_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels as impl
    except ImportError:  # extension not built
        from . import _kernels_py as impl

BACKEND = "compiled" if impl.__name__.endswith("._kernels") else "numpy"

update_h = impl.update_h
update_e = impl.update_e
pennes_step = impl.pennes_step
