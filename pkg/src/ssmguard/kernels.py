"""Backend selection for the recurrence scan.

Prefers the compiled Cython kernel when it was built; falls back to the
pure-numpy twin otherwise.  Set SSMGUARD_PURE=1 to force the fallback (used
by the benchmark and the backend-parity test).
"""

from __future__ import annotations

import os

from . import _scan_py

if os.environ.get("SSMGUARD_PURE") == "1":
    _impl = _scan_py
    BACKEND = "python"
else:
    try:
        from . import _scan_cy as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _scan_py
        BACKEND = "python"

scan = _impl.scan
