"""Reference tape: reverse-mode autodiff over 2-D float64 arrays, numpy-backed.

Every node is a matrix (scalars are 1x1).  The record order is the
topological order; backward walks it once in reverse.  The compiled backend
in _ctape.pyx implements the same surface with C storage and loops.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve as _cho_solve
from scipy.linalg import solve_triangular

from ..errors import NumericsError
from . import ops

_UNARY_FNS = {
    ops.EXP: np.exp,
    ops.TANH: np.tanh,
    ops.SIN: np.sin,
    ops.COS: np.cos,
    ops.ABS: np.abs,
    ops.NEG: np.negative,
    ops.TRANSPOSE: lambda a: np.ascontiguousarray(a.T),
}


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"tape values are 2-D, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class PyTape:
    """Pure-Python tape backend."""

    name = "pure"

    def __init__(self):
        self._vals: list[np.ndarray] = []
        self._ops: list[tuple[int, int, int, object]] = []
        self._grads: list[np.ndarray | None] | None = None

    # -- recording ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self._vals)

    def _push(self, opcode: int, a: int, b: int, aux, value: np.ndarray) -> int:
        if self._grads is not None:
            raise RuntimeError("tape already ran backward; record on a fresh tape")
        self._vals.append(value)
        self._ops.append((opcode, a, b, aux))
        return len(self._vals) - 1

    def value(self, i: int) -> np.ndarray:
        return self._vals[i]

    def grad(self, i: int) -> np.ndarray:
        if self._grads is None:
            raise RuntimeError("backward has not run")
        g = self._grads[i]
        return g if g is not None else np.zeros_like(self._vals[i])

    def is_leaf(self, i: int) -> bool:
        return self._ops[i][0] == ops.LEAF

    # -- node constructors ---------------------------------------------------

    def leaf(self, value) -> int:
        return self._push(ops.LEAF, -1, -1, None, _as_matrix(value).copy())

    def const(self, value) -> int:
        return self._push(ops.CONST, -1, -1, None, _as_matrix(value).copy())

    def add(self, a: int, b: int) -> int:
        return self._push(ops.ADD, a, b, None, self._vals[a] + self._vals[b])

    def sub(self, a: int, b: int) -> int:
        return self._push(ops.SUB, a, b, None, self._vals[a] - self._vals[b])

    def neg(self, a: int) -> int:
        return self._push(ops.NEG, a, -1, None, -self._vals[a])

    def mul(self, a: int, b: int) -> int:
        return self._push(ops.MUL, a, b, None, self._vals[a] * self._vals[b])

    def div(self, a: int, b: int) -> int:
        return self._push(ops.DIV, a, b, None, self._vals[a] / self._vals[b])

    def smul(self, a: int, b: int) -> int:
        return self._push(ops.SMUL, a, b, None, self._vals[a][0, 0] * self._vals[b])

    def sdiv(self, a: int, b: int) -> int:
        return self._push(ops.SDIV, a, b, None, self._vals[a] / self._vals[b][0, 0])

    def addc(self, a: int, c: float) -> int:
        return self._push(ops.ADDC, a, -1, float(c), self._vals[a] + c)

    def mulc(self, a: int, c: float) -> int:
        return self._push(ops.MULC, a, -1, float(c), self._vals[a] * c)

    def exp(self, a: int) -> int:
        return self._push(ops.EXP, a, -1, None, np.exp(self._vals[a]))

    def log(self, a: int) -> int:
        v = self._vals[a]
        if np.any(v <= 0.0):
            raise ValueError("log of non-positive value")
        return self._push(ops.LOG, a, -1, None, np.log(v))

    def tanh(self, a: int) -> int:
        return self._push(ops.TANH, a, -1, None, np.tanh(self._vals[a]))

    def sigmoid(self, a: int) -> int:
        v = self._vals[a]
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return self._push(ops.SIGMOID, a, -1, None, out)

    def sqrt(self, a: int) -> int:
        v = self._vals[a]
        if np.any(v <= 0.0):
            raise ValueError("sqrt of non-positive value")
        return self._push(ops.SQRT, a, -1, None, np.sqrt(v))

    def sin(self, a: int) -> int:
        return self._push(ops.SIN, a, -1, None, np.sin(self._vals[a]))

    def cos(self, a: int) -> int:
        return self._push(ops.COS, a, -1, None, np.cos(self._vals[a]))

    def absv(self, a: int) -> int:
        return self._push(ops.ABS, a, -1, None, np.abs(self._vals[a]))

    def atan2(self, a: int, b: int) -> int:
        return self._push(ops.ATAN2, a, b, None, np.arctan2(self._vals[a], self._vals[b]))

    def matmul(self, a: int, b: int) -> int:
        return self._push(ops.MATMUL, a, b, None, self._vals[a] @ self._vals[b])

    def transpose(self, a: int) -> int:
        return self._push(ops.TRANSPOSE, a, -1, None, np.ascontiguousarray(self._vals[a].T))

    def vsum(self, a: int) -> int:
        return self._push(ops.SUM, a, -1, None, np.array([[self._vals[a].sum()]]))

    def slice(self, a: int, r0: int, r1: int, c0: int, c1: int) -> int:
        val = np.ascontiguousarray(self._vals[a][r0:r1, c0:c1])
        return self._push(ops.SLICE, a, -1, (r0, r1, c0, c1), val)

    def embed(self, a: int, rows: int, cols: int, r0: int, c0: int) -> int:
        src = self._vals[a]
        val = np.zeros((rows, cols))
        val[r0 : r0 + src.shape[0], c0 : c0 + src.shape[1]] = src
        return self._push(ops.EMBED, a, -1, (rows, cols, r0, c0), val)

    def scale_template(self, a: int, template) -> int:
        tmpl = _as_matrix(template).copy()
        return self._push(ops.SCALE_TMPL, a, -1, tmpl, self._vals[a][0, 0] * tmpl)

    def cho_solve(self, a: int, b: int) -> int:
        try:
            low = np.linalg.cholesky(self._vals[a])
        except np.linalg.LinAlgError as exc:
            raise NumericsError(f"matrix is not positive definite: {exc}") from exc
        sol = _cho_solve((low, True), self._vals[b])
        return self._push(ops.CHO_SOLVE, a, b, [low, sol], sol)

    def logdet(self, a: int) -> int:
        try:
            low = np.linalg.cholesky(self._vals[a])
        except np.linalg.LinAlgError as exc:
            raise NumericsError(f"matrix is not positive definite: {exc}") from exc
        val = 2.0 * np.sum(np.log(np.diag(low)))
        return self._push(ops.LOGDET, a, -1, [low], np.array([[val]]))

    # -- backward ------------------------------------------------------------

    def backward(self, root: int) -> None:
        if self._grads is not None:
            raise RuntimeError("backward already ran on this tape")
        if self._vals[root].shape != (1, 1):
            raise ValueError("backward root must be a 1x1 scalar")
        grads: list[np.ndarray | None] = [None] * len(self._vals)
        grads[root] = np.ones((1, 1))
        vals = self._vals

        def acc(i: int, g):
            if grads[i] is None:
                grads[i] = np.zeros_like(vals[i])
            grads[i] += g

        for i in range(root, -1, -1):
            g = grads[i]
            if g is None:
                continue
            opcode, a, b, aux = self._ops[i]
            if opcode in (ops.LEAF, ops.CONST):
                continue
            elif opcode == ops.ADD:
                acc(a, g)
                acc(b, g)
            elif opcode == ops.SUB:
                acc(a, g)
                acc(b, -g)
            elif opcode == ops.NEG:
                acc(a, -g)
            elif opcode == ops.MUL:
                acc(a, g * vals[b])
                acc(b, g * vals[a])
            elif opcode == ops.DIV:
                acc(a, g / vals[b])
                acc(b, -g * vals[i] / vals[b])
            elif opcode == ops.SMUL:
                acc(a, np.array([[np.sum(g * vals[b])]]))
                acc(b, vals[a][0, 0] * g)
            elif opcode == ops.SDIV:
                s = vals[b][0, 0]
                acc(a, g / s)
                acc(b, np.array([[-np.sum(g * vals[i]) / s]]))
            elif opcode == ops.ADDC:
                acc(a, g)
            elif opcode == ops.MULC:
                acc(a, g * aux)
            elif opcode == ops.EXP:
                acc(a, g * vals[i])
            elif opcode == ops.LOG:
                acc(a, g / vals[a])
            elif opcode == ops.TANH:
                acc(a, g * (1.0 - vals[i] ** 2))
            elif opcode == ops.SIGMOID:
                acc(a, g * vals[i] * (1.0 - vals[i]))
            elif opcode == ops.SQRT:
                acc(a, g * 0.5 / vals[i])
            elif opcode == ops.SIN:
                acc(a, g * np.cos(vals[a]))
            elif opcode == ops.COS:
                acc(a, -g * np.sin(vals[a]))
            elif opcode == ops.ABS:
                acc(a, g * np.sign(vals[a]))
            elif opcode == ops.ATAN2:
                denom = vals[a] ** 2 + vals[b] ** 2
                acc(a, g * vals[b] / denom)
                acc(b, -g * vals[a] / denom)
            elif opcode == ops.MATMUL:
                acc(a, g @ vals[b].T)
                acc(b, vals[a].T @ g)
            elif opcode == ops.TRANSPOSE:
                acc(a, np.ascontiguousarray(g.T))
            elif opcode == ops.SUM:
                acc(a, np.full_like(vals[a], g[0, 0]))
            elif opcode == ops.SLICE:
                r0, r1, c0, c1 = aux
                ga = np.zeros_like(vals[a])
                ga[r0:r1, c0:c1] = g
                acc(a, ga)
            elif opcode == ops.EMBED:
                _, _, r0, c0 = aux
                ra, ca = vals[a].shape
                acc(a, np.ascontiguousarray(g[r0 : r0 + ra, c0 : c0 + ca]))
            elif opcode == ops.SCALE_TMPL:
                acc(a, np.array([[np.sum(g * aux)]]))
            elif opcode == ops.CHO_SOLVE:
                low, sol = aux
                gb = _cho_solve((low, True), g)
                acc(b, gb)
                acc(a, -gb @ sol.T)
            elif opcode == ops.LOGDET:
                (low,) = aux
                n = low.shape[0]
                inv_low = solve_triangular(low, np.eye(n), lower=True)
                acc(a, g[0, 0] * (inv_low.T @ inv_low))
            else:
                raise AssertionError(f"unhandled opcode {opcode}")
        self._grads = grads
