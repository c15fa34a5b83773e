"""Event-core selection: compiled extension if built, pure Python otherwise.

Set ``PCSQ_PURE=1`` in the environment to force the pure core even when the
extension is installed (used by the cross-core equality tests and the
benchmark).  Both cores implement the same algorithm and are required to
produce bit-identical RawRun contents.
"""

from __future__ import annotations

import os

if os.environ.get("PCSQ_PURE") == "1":
    from ._corepy import simulate
else:
    try:
        from ._corecy import simulate  # type: ignore[no-redef]
    except ImportError:
        from ._corepy import simulate


def core_name() -> str:
    """Which core `simulate` resolves to: 'compiled' or 'pure'."""
    return "compiled" if simulate.__module__.endswith("_corecy") else "pure"


__all__ = ["simulate", "core_name"]
