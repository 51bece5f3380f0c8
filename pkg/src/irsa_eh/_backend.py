"""Kernel selection: the compiled core when it imports, else pure Python.

Set ``IRSA_EH_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _reference

try:
    from . import _compiled
except ImportError:  # extension not built
    _compiled = None

if os.environ.get("IRSA_EH_PURE_PYTHON", "") not in ("", "0"):
    DEFAULT = _reference
else:
    DEFAULT = _compiled if _compiled is not None else _reference

NAME = DEFAULT.NAME


def available():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get(name=None):
    if name is None:
        return DEFAULT
    if name == "python":
        return _reference
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled core is not available; rebuild the package with Cython")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
