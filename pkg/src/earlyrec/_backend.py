"""Selects the LSTM kernel implementation at import time.

The compiled extension is used when it was built; set
``EARLYREC_BACKEND=python`` to force the numpy fallback.
"""
import os

from . import _lstm_py

BACKEND = "python"
_impl = _lstm_py

if os.environ.get("EARLYREC_BACKEND", "").lower() != "python":
    try:
        from . import _lstm_ext as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
