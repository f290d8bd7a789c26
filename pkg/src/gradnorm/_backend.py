"""Kernel backend selection.

The compiled extension is used when it has been built; otherwise the numpy
fallback is loaded.  ``GRADNORM_BACKEND=python`` forces the fallback and
``GRADNORM_BACKEND=compiled`` makes a missing extension an import error.
"""

import importlib
import os
import warnings

_CHOICES = ("auto", "compiled", "python")


def load(choice=None):
    choice = (choice or os.environ.get("GRADNORM_BACKEND", "auto")).lower()
    if choice not in _CHOICES:
        raise ValueError(f"GRADNORM_BACKEND must be one of {_CHOICES}, got {choice!r}")
    if choice == "python":
        return importlib.import_module("gradnorm._fallback")
    try:
        return importlib.import_module("gradnorm._kernels")
    except ImportError:
        if choice == "compiled":
            raise
        warnings.warn("compiled kernels unavailable; using the numpy fallback", RuntimeWarning, stacklevel=2)
        return importlib.import_module("gradnorm._fallback")


kernels = load()
