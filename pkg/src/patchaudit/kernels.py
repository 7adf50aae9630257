"""Backend selection for the hot metric kernels.

The compiled extension is used when it imported cleanly; otherwise the
numpy fallback takes over.  Set ``PATCHAUDIT_KERNELS=python`` (or ``c``)
to force a backend.  Both backends compute identical integer
intermediates, so switching never changes results, only speed.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:  # pragma: no cover - depends on the build
    _kernels_c = None

_BACKENDS = {"python": _kernels_py}
if _kernels_c is not None:
    _BACKENDS["c"] = _kernels_c

_requested = os.environ.get("PATCHAUDIT_KERNELS", "").strip().lower()
if _requested and _requested not in _BACKENDS:
    raise ImportError(
        f"PATCHAUDIT_KERNELS={_requested!r} is not available; "
        f"choose from {sorted(_BACKENDS)}"
    )
_active = _BACKENDS[_requested or ("c" if "c" in _BACKENDS else "python")]


def backend() -> str:
    """Name of the active backend, ``"c"`` or ``"python"``."""
    for name, mod in _BACKENDS.items():
        if mod is _active:
            return name
    raise RuntimeError("no active kernel backend")


def available() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]


def _as_labels(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.uint8)


def _as_index(idx):
    if idx is None:
        return None
    return np.ascontiguousarray(idx, dtype=np.int64)


def confusion_counts(truth, pred, idx=None) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) over the records, optionally resampled by index."""
    return _active.confusion_counts(_as_labels(truth), _as_labels(pred), _as_index(idx))


def rank_auc(truth, score, idx=None) -> float:
    """Rank-based AUC with tie half-credit; nan when a class is absent."""
    s = np.ascontiguousarray(score, dtype=np.float64)
    return _active.rank_auc(_as_labels(truth), s, _as_index(idx))


def box_downsample(src, out_h: int, out_w: int) -> np.ndarray:
    """Exact box-average downsample of a uint8/uint16 image."""
    src = np.ascontiguousarray(src)
    if src.dtype not in (np.dtype(np.uint8), np.dtype(np.uint16)):
        raise TypeError("box_downsample expects uint8 or uint16 pixels")
    return _active.box_downsample(src, int(out_h), int(out_w))
