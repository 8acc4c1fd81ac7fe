"""Kernel backend selection.

The compiled ``_core`` extension is used when importable; otherwise the
pure-Python ``_pycore`` is used. Setting ``LFI_FORGE_PURE=1`` forces the
fallback.
"""

import os

from lfi_forge import _pycore

try:
    if os.environ.get("LFI_FORGE_PURE", "") not in ("", "0"):
        raise ImportError("pure-Python backend forced")
    from lfi_forge import _core as kernels
    BACKEND = "cython"
except ImportError:
    kernels = _pycore
    BACKEND = "python"


def get_kernels(name=None):
    """Return the kernel module for ``name`` ('cython' or 'python'), or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pycore
    if name == "cython":
        from lfi_forge import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
