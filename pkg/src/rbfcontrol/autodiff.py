"""Reverse-mode automatic differentiation over numpy arrays.

A small tape tailored to the solver pipelines: elementwise arithmetic,
a few reductions, matrix products, gather/scatter plumbing, and a
linear-solve node whose adjoint rule solves the transposed system.
Every op is a free function that accepts plain arrays or `Var`s. With
plain arrays it simply computes numpy values, so the same pipeline code
serves both unrecorded evaluation (finite-difference probes, adjoint
loops) and recorded evaluation (exact reverse-mode gradients).

Matrix factorizations used by `linear_solve` are cached per tape, so
repeated solves against one matrix (projection sub-iterations) factor
it only once, and the backward pass reuses the same factors transposed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeMismatchError
from .rbf import Factorized


def value_of(x):
    """Underlying numpy value of a Var, or the input unchanged."""
    return x.value if isinstance(x, Var) else x


class Var:
    """Handle to one recorded value on a tape."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)


@dataclass
class _Node:
    op: str
    out_idx: int
    out_value: np.ndarray
    var_args: tuple      # ((position, var_idx, forward_value), ...)
    aux: dict = field(default_factory=dict)


class Tape:
    """Append-only record of operations, replayed once per backward."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._count = 0
        self._lu_cache: dict[object, Factorized] = {}

    def var(self, value) -> Var:
        """Create a leaf variable (an input to differentiate against)."""
        v = np.asarray(value, dtype=float)
        idx = self._count
        self._count += 1
        return Var(self, idx, v)

    def _record(self, op, out_value, var_args, aux=None) -> Var:
        idx = self._count
        self._count += 1
        self.nodes.append(_Node(op, idx, out_value, tuple(var_args), aux or {}))
        return Var(self, idx, out_value)

    def factorization(self, key, matrix) -> Factorized:
        fact = self._lu_cache.get(key)
        if fact is None:
            fact = matrix if isinstance(matrix, Factorized) else Factorized(matrix)
            self._lu_cache[key] = fact
        return fact

    def backward(self, out: Var, wrt: list[Var]) -> list[np.ndarray]:
        """Gradients of a scalar output for each requested leaf.

        Deterministic reverse sweep; may be called repeatedly on the
        same tape and yields identical results each time.
        """
        if out.tape is not self:
            raise ContractError("output does not belong to this tape")
        if np.shape(out.value) != ():
            raise ContractError("backward requires a scalar output")
        grads: dict[int, np.ndarray] = {out.idx: np.asarray(1.0)}
        for node in reversed(self.nodes):
            cot = grads.get(node.out_idx)
            if cot is None:
                continue
            for pos, var_idx, contrib in _adjoint(self, node, cot):
                if contrib is None:
                    continue
                if var_idx in grads:
                    grads[var_idx] = grads[var_idx] + contrib
                else:
                    grads[var_idx] = contrib
        out_list = []
        for v in wrt:
            g = grads.get(v.idx)
            if g is None:
                g = np.zeros_like(np.asarray(v.value, dtype=float))
            out_list.append(np.asarray(g, dtype=float))
        return out_list


def _tape_of(*args):
    tapes = {a.tape for a in args if isinstance(a, Var)}
    if not tapes:
        return None
    if len(tapes) > 1:
        raise ContractError("operands recorded on different tapes")
    return tapes.pop()


def _mixed(op, args, forward, aux=None):
    """Compute forward; record if any argument is a Var."""
    tape = _tape_of(*args)
    values = [value_of(a) for a in args]
    out = forward(*values)
    if tape is None:
        return out
    var_args = tuple((pos, a.idx, values[pos])
                     for pos, a in enumerate(args) if isinstance(a, Var))
    full_aux = dict(aux or {})
    full_aux["consts"] = {pos: values[pos] for pos, a in enumerate(args)
                          if not isinstance(a, Var)}
    return tape._record(op, out, var_args, full_aux)


def _check_elementwise(a, b):
    sa, sb = np.shape(a), np.shape(b)
    if sa != sb and sa != () and sb != ():
        raise ShapeMismatchError(f"elementwise op on shapes {sa} vs {sb}")


def _unbroadcast(grad, shape):
    if shape == ():
        return np.sum(grad)
    return grad


# elementwise -----------------------------------------------------------

def add(a, b):
    _check_elementwise(value_of(a), value_of(b))
    return _mixed("add", (a, b), lambda x, y: x + y)


def sub(a, b):
    _check_elementwise(value_of(a), value_of(b))
    return _mixed("sub", (a, b), lambda x, y: x - y)


def mul(a, b):
    _check_elementwise(value_of(a), value_of(b))
    return _mixed("mul", (a, b), lambda x, y: x * y)


def div(a, b):
    _check_elementwise(value_of(a), value_of(b))
    return _mixed("div", (a, b), lambda x, y: x / y)


def power(a, p):
    if isinstance(p, Var):
        raise ContractError("exponent must be a constant")
    return _mixed("pow", (a,), lambda x: x ** p, aux={"p": p})


def sin(a):
    return _mixed("sin", (a,), np.sin)


def cos(a):
    return _mixed("cos", (a,), np.cos)


def exp(a):
    return _mixed("exp", (a,), np.exp)


def tanh(a):
    return _mixed("tanh", (a,), np.tanh)


# reductions and products -----------------------------------------------

def asum(a):
    """Sum of all elements -> scalar."""
    return _mixed("sum", (a,), np.sum)


def sumsq(a):
    """Sum of squared elements -> scalar."""
    return _mixed("sumsq", (a,), lambda x: np.sum(x * x))


def dot(a, b):
    va, vb = value_of(a), value_of(b)
    if np.shape(va) != np.shape(vb) or np.ndim(va) != 1:
        raise ShapeMismatchError(
            f"dot requires equal-length vectors, got {np.shape(va)} and "
            f"{np.shape(vb)}")
    return _mixed("dot", (a, b), np.dot)


def matvec(a, x):
    va, vx = value_of(a), value_of(x)
    if np.ndim(va) != 2 or np.ndim(vx) != 1 or va.shape[1] != vx.shape[0]:
        raise ShapeMismatchError(
            f"matvec shapes {np.shape(va)} @ {np.shape(vx)}")
    return _mixed("matvec", (a, x), lambda m, v: m @ v)


def matmul(a, b):
    va, vb = value_of(a), value_of(b)
    if np.ndim(va) != 2 or np.ndim(vb) != 2 or va.shape[1] != vb.shape[0]:
        raise ShapeMismatchError(
            f"matmul shapes {np.shape(va)} @ {np.shape(vb)}")
    return _mixed("matmul", (a, b), lambda m, n_: m @ n_)


# structural ops ---------------------------------------------------------

def concat(*parts):
    return _mixed("concat", parts, lambda *vs: np.concatenate(vs),
                  aux={"sizes": [np.shape(value_of(p))[0] for p in parts]})


def take(a, idx):
    """Gather a[idx] for a constant index array (generalized slice)."""
    idx = np.asarray(idx, dtype=int)
    return _mixed("take", (a,), lambda x: x[idx], aux={"idx": idx})


def scatter(a, idx, size):
    """Vector of `size` zeros with a placed at positions idx."""
    idx = np.asarray(idx, dtype=int)
    if len(idx) != np.shape(value_of(a))[0]:
        raise ShapeMismatchError("scatter index length mismatch")

    def fwd(x):
        out = np.zeros(size)
        out[idx] = x
        return out

    return _mixed("scatter", (a,), fwd, aux={"idx": idx, "size": size})


def add_rows_scaled(base, rows, s, m_const):
    """base with diag(s) @ m_const added into the given rows.

    Builds operator matrices whose rows depend on a recorded field (the
    frozen advecting velocity) without materializing per-entry nodes.
    """
    rows = np.asarray(rows, dtype=int)
    m_const = np.asarray(m_const, dtype=float)
    if np.shape(value_of(s)) != (len(rows),) or m_const.shape[0] != len(rows):
        raise ShapeMismatchError("add_rows_scaled row/vector mismatch")

    def fwd(b, sv):
        out = np.array(b, dtype=float, copy=True)
        out[rows] += sv[:, None] * m_const
        return out

    return _mixed("rows_scaled", (base, s), fwd,
                  aux={"rows": rows, "m": m_const})


def add_rowvec(a, b):
    """Matrix plus row vector broadcast over rows (affine layer bias)."""
    va, vb = value_of(a), value_of(b)
    if np.ndim(va) != 2 or np.shape(vb) != (va.shape[1],):
        raise ShapeMismatchError(
            f"add_rowvec shapes {np.shape(va)} + {np.shape(vb)}")
    return _mixed("add_rowvec", (a, b), lambda m, v: m + v[None, :])


def linear_solve(a, b):
    """Solve a x = b; adjoint solves the transposed system.

    `a` may be a Var matrix, a constant matrix, or a pre-built
    `Factorized`. Factorizations are cached on the tape, keyed by the
    matrix Var (or the constant object), so sub-iterations that reuse a
    matrix pay for one LU only. Singular matrices raise immediately.
    """
    vb = value_of(b)
    va = a.a if isinstance(a, Factorized) else value_of(a)
    if np.ndim(va) != 2 or va.shape[0] != va.shape[1] or \
            np.shape(vb) != (va.shape[0],):
        raise ShapeMismatchError(
            f"linear_solve shapes {np.shape(va)} \\ {np.shape(vb)}")
    tape = _tape_of(*(x for x in (a, b) if isinstance(x, Var)))
    if tape is None:
        fact = a if isinstance(a, Factorized) else Factorized(va)
        return fact.solve(vb)
    key = ("var", a.idx) if isinstance(a, Var) else ("const", id(a))
    fact = tape.factorization(key, a if isinstance(a, Factorized) else va)
    x = fact.solve(vb)
    var_args = tuple((pos, z.idx, value_of(z))
                     for pos, z in enumerate((a, b)) if isinstance(z, Var))
    return tape._record("linear_solve", x, var_args,
                        {"fact": fact, "consts": {}})


# backward rules ---------------------------------------------------------

def _adjoint(tape, node, cot):
    """Yield (arg_position, var_idx, gradient_contribution) triples."""
    op = node.op
    aux = node.aux
    consts = aux.get("consts", {})
    vals = {pos: v for pos, _, v in node.var_args}
    vals.update(consts)

    def shape_at(pos):
        return np.shape(vals[pos])

    out = []
    if op == "add":
        for pos, var_idx, _ in node.var_args:
            out.append((pos, var_idx, _unbroadcast(cot, shape_at(pos))))
    elif op == "sub":
        for pos, var_idx, _ in node.var_args:
            g = cot if pos == 0 else -cot
            out.append((pos, var_idx, _unbroadcast(g, shape_at(pos))))
    elif op == "mul":
        for pos, var_idx, _ in node.var_args:
            other = vals[1 - pos]
            out.append((pos, var_idx, _unbroadcast(cot * other, shape_at(pos))))
    elif op == "div":
        x, y = vals[0], vals[1]
        for pos, var_idx, _ in node.var_args:
            g = cot / y if pos == 0 else -cot * x / (y * y)
            out.append((pos, var_idx, _unbroadcast(g, shape_at(pos))))
    elif op == "pow":
        p = aux["p"]
        (pos, var_idx, x), = node.var_args
        out.append((pos, var_idx, cot * p * x ** (p - 1)))
    elif op == "sin":
        (pos, var_idx, x), = node.var_args
        out.append((pos, var_idx, cot * np.cos(x)))
    elif op == "cos":
        (pos, var_idx, x), = node.var_args
        out.append((pos, var_idx, -cot * np.sin(x)))
    elif op == "exp":
        (pos, var_idx, _), = node.var_args
        out.append((pos, var_idx, cot * node.out_value))
    elif op == "tanh":
        (pos, var_idx, _), = node.var_args
        out.append((pos, var_idx, cot * (1.0 - node.out_value ** 2)))
    elif op == "sum":
        (pos, var_idx, x), = node.var_args
        out.append((pos, var_idx, np.broadcast_to(cot, np.shape(x)).copy()))
    elif op == "sumsq":
        (pos, var_idx, x), = node.var_args
        out.append((pos, var_idx, 2.0 * cot * x))
    elif op == "dot":
        for pos, var_idx, _ in node.var_args:
            out.append((pos, var_idx, cot * vals[1 - pos]))
    elif op == "matvec":
        a, x = vals[0], vals[1]
        for pos, var_idx, _ in node.var_args:
            if pos == 0:
                out.append((pos, var_idx, np.outer(cot, x)))
            else:
                out.append((pos, var_idx, a.T @ cot))
    elif op == "matmul":
        a, b = vals[0], vals[1]
        for pos, var_idx, _ in node.var_args:
            if pos == 0:
                out.append((pos, var_idx, cot @ b.T))
            else:
                out.append((pos, var_idx, a.T @ cot))
    elif op == "concat":
        sizes = aux["sizes"]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for pos, var_idx, _ in node.var_args:
            out.append((pos, var_idx, cot[offsets[pos]:offsets[pos + 1]]))
    elif op == "take":
        (pos, var_idx, x), = node.var_args
        g = np.zeros_like(np.asarray(x, dtype=float))
        np.add.at(g, aux["idx"], cot)
        out.append((pos, var_idx, g))
    elif op == "scatter":
        (pos, var_idx, _), = node.var_args
        out.append((pos, var_idx, cot[aux["idx"]]))
    elif op == "rows_scaled":
        rows, m = aux["rows"], aux["m"]
        for pos, var_idx, _ in node.var_args:
            if pos == 0:
                out.append((pos, var_idx, cot))
            else:
                out.append((pos, var_idx, np.sum(cot[rows] * m, axis=1)))
    elif op == "add_rowvec":
        for pos, var_idx, _ in node.var_args:
            g = cot if pos == 0 else np.sum(cot, axis=0)
            out.append((pos, var_idx, g))
    elif op == "linear_solve":
        fact = aux["fact"]
        w = fact.solve(cot, transposed=True)
        for pos, var_idx, _ in node.var_args:
            if pos == 0:
                out.append((pos, var_idx, -np.outer(w, node.out_value)))
            else:
                out.append((pos, var_idx, w))
    else:  # pragma: no cover
        raise ContractError(f"no adjoint rule for op {op!r}")
    return out


def gradient(f, x0):
    """Record f at x0 and return (value, gradient) via one backward pass."""
    tape = Tape()
    x = tape.var(np.asarray(x0, dtype=float))
    y = f(x)
    if not isinstance(y, Var):
        return float(y), np.zeros_like(np.asarray(x0, dtype=float))
    (g,) = tape.backward(y, [x])
    return float(y.value), g


# finite-difference checking ---------------------------------------------

@dataclass
class GradCheckReport:
    """Central-difference comparison against a reverse-mode gradient."""

    h: float
    analytic: np.ndarray
    fd: np.ndarray
    rel_errors: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(np.max(self.rel_errors)) if len(self.rel_errors) else 0.0

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("component,analytic,fd,rel_error\n")
            for i, (a, f_, e) in enumerate(
                    zip(self.analytic, self.fd, self.rel_errors)):
                fh.write(f"{i},{a!r},{f_!r},{e!r}\n")


def grad_check(f, x0, h=1e-5) -> GradCheckReport:
    """Compare reverse-mode and central-difference gradients of scalar f.

    Relative error per component uses denominator max(1, |analytic|).
    Raises ContractError naming the component if any probe is non-finite.
    """
    x0 = np.asarray(x0, dtype=float)
    value, analytic = gradient(f, x0)
    if not np.isfinite(value):
        raise ContractError("function value is non-finite at x0")
    fd = np.zeros_like(x0)
    for i in range(len(x0)):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        fp, fm = float(value_of(fp)), float(value_of(fm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ContractError(f"non-finite probe at component {i}")
        fd[i] = (fp - fm) / (2.0 * h)
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic))[0])
        raise ContractError(f"non-finite analytic gradient at component {bad}")
    rel = np.abs(analytic - fd) / np.maximum(1.0, np.abs(analytic))
    return GradCheckReport(h=h, analytic=analytic, fd=fd, rel_errors=rel)
