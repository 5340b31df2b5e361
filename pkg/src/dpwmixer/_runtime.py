"""Process-level tuning for many short-lived mid-sized numpy temporaries.

glibc serves allocations above its mmap threshold (128 KiB by default) with
fresh mappings, so every temporary of a few hundred KiB pays page faults on
first touch. Raising the threshold keeps those buffers on the heap and makes
the training step several times faster. Set ``DPWMIXER_NO_MALLOC_TUNING=1``
to leave the allocator alone.
"""

import ctypes
import ctypes.util
import os
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_LIMIT = 1 << 30

_done = False


def tune_allocator() -> bool:
    global _done
    if _done or not sys.platform.startswith("linux") or os.environ.get("DPWMIXER_NO_MALLOC_TUNING"):
        return _done
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    _done = bool(mallopt(_M_MMAP_THRESHOLD, _LIMIT)) and bool(mallopt(_M_TRIM_THRESHOLD, _LIMIT))
    return _done
