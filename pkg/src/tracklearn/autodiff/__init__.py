"""Reverse-mode autodiff over small dense matrices, with two tape backends.

The compiled backend (_ctape, Cython) is picked by default when the
extension built; the pure numpy backend is always available and produces the
same results.  Selection can be forced with the TRACKLEARN_TAPE environment
variable ("pure" or "compiled") or per call via make_tape(backend=...).
"""

from __future__ import annotations

import os

from .api import (
    Var,
    absval,
    atan2,
    backward,
    block,
    cho_solve,
    cols,
    concat_cols,
    concat_rows,
    cos,
    exp,
    finite_difference,
    item,
    log,
    logdet,
    logsumexp,
    matmul,
    rows,
    scale_template,
    sigmoid,
    sin,
    sqrt,
    tanh,
    transpose,
    vsum,
)
from .optim import GradientOptimizer, adam_step, clip_by_global_norm
from .pure import PyTape

try:
    from ._ctape import CTape

    _HAVE_COMPILED = True
except ImportError:
    CTape = None
    _HAVE_COMPILED = False


def available_backends() -> list[str]:
    return ["pure", "compiled"] if _HAVE_COMPILED else ["pure"]


def default_backend() -> str:
    env = os.environ.get("TRACKLEARN_TAPE", "").strip().lower()
    if env in ("pure", "compiled"):
        if env == "compiled" and not _HAVE_COMPILED:
            raise RuntimeError("TRACKLEARN_TAPE=compiled but the extension is not built")
        return env
    return "compiled" if _HAVE_COMPILED else "pure"


def make_tape(backend: str | None = None):
    """New empty tape on the requested (or default) backend."""
    backend = backend or default_backend()
    if backend == "pure":
        return PyTape()
    if backend == "compiled":
        if not _HAVE_COMPILED:
            raise RuntimeError("compiled tape backend is not available")
        return CTape()
    raise ValueError(f"unknown tape backend {backend!r}")


def var(tape, value) -> Var:
    """New differentiable leaf."""
    return Var(tape, tape.leaf(value))


def const(tape, value) -> Var:
    """New constant node (no gradient accumulated into it)."""
    return Var(tape, tape.const(value))
