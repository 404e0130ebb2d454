"""Select the compiled core when it is importable, else the numpy fallback.

Set ``BNNOOD_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _core_py

core = _core_py
BACKEND = "python"

if os.environ.get("BNNOOD_PURE_PYTHON") != "1":
    try:
        from . import _core as core  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass
