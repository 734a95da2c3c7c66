"""Allocator tuning for the large short-lived arrays a training epoch creates.

glibc serves big allocations with fresh mmap'd pages and returns them on
free, so every epoch pays page faults for the same buffers again. Raising
the mmap and trim thresholds keeps them on the heap. No-op off glibc.
"""

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3

_done = False


def tune_malloc() -> bool:
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        mallopt = libc.mallopt
    except (OSError, AttributeError):
        return False
    ok = bool(mallopt(_M_MMAP_THRESHOLD, 1 << 30))
    ok &= bool(mallopt(_M_TRIM_THRESHOLD, (1 << 31) - 1))
    ok &= bool(mallopt(_M_TOP_PAD, 256 << 20))
    _done = ok
    return ok
