"""Kernel backend selection.

The hot numeric kernels (tanh-MLP forward/backward, GAE recursion) exist
twice: a Cython extension (`_core`) and a pure-numpy fallback (`_ref`).
The extension is preferred when importable; set PUSHLAB_KERNELS=python or
PUSHLAB_KERNELS=cython to force one side (forcing cython raises if the
extension was not built).
"""

from __future__ import annotations

import os

from . import _ref

_requested = os.environ.get("PUSHLAB_KERNELS", "auto").lower()
if _requested not in ("auto", "cython", "python"):
    raise RuntimeError(f"PUSHLAB_KERNELS must be auto|cython|python, got {_requested!r}")

if _requested == "python":
    _impl = _ref
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "cython":
            raise RuntimeError("PUSHLAB_KERNELS=cython but the extension is not built")
        _impl = _ref

BACKEND = _impl.NAME
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
gae_advantages = _impl.gae_advantages


def available_backends():
    """Names of the importable backends (always includes 'python')."""
    names = ["python"]
    try:
        from . import _core  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the backend module for an explicit name ('python'|'cython')."""
    if name == "python":
        return _ref
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
