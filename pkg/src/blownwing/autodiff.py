"""Reverse-mode automatic differentiation on float64 numpy arrays.

A ``Tape`` is an append-only list of primitive records.  Each record stores
the primitive name, its operands (handles of earlier nodes, or inline
constants), the forward value, and whatever the primitive needs to produce
local partials during the reverse sweep.  ``backward`` walks the tape once,
in reverse, accumulating adjoints.

The module-level math functions (``sin``, ``matmul``, ``linear_solve``, ...)
dispatch on their arguments: if any argument is a ``Node`` the operation is
recorded on that node's tape, otherwise it is evaluated directly with numpy.
Physics code written against these functions therefore runs identically in
plain-value mode and in recording mode.

Conventions:
  * every stored value is a float64 ndarray (0-d for scalars),
  * clamped primitives (maximum/minimum/abs) use subgradient 0 at the kink,
  * the linear solve is a first-class primitive whose adjoint reuses the LU
    factorization from the forward solve (one transposed solve), with
    adjoint_A = -adjoint_b . gamma^T.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import expit


class AutodiffError(Exception):
    pass


class DomainError(AutodiffError):
    """A primitive was recorded with arguments outside its domain."""


class LinearSolveError(AutodiffError):
    """Linear solve failed or produced an unacceptable residual."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def is_node(x):
    return isinstance(x, Node)


def value_of(x):
    """Plain float64 value of a Node or array-like."""
    return x.value if isinstance(x, Node) else _f64(x)


class Node:
    """Handle to one tape position. Cheap to copy, never mutated."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape._records[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"

    # arithmetic sugar; mixed Node/array operands dispatch through the
    # module-level functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)


class _Record:
    __slots__ = ("op", "args", "value", "params")

    def __init__(self, op, args, value, params):
        self.op = op
        self.args = args          # tuple of int handles or ndarray constants
        self.value = value
        self.params = params


class Tape:
    """Append-only record of primitives; one forward pass per tape.

    A tape is single-owner: it must not be shared across concurrent
    contexts.  Independent tapes may run concurrently.
    """

    def __init__(self):
        self._records = []

    def __len__(self):
        return len(self._records)

    def input(self, value):
        """Create a leaf node (an input whose adjoint can be queried)."""
        val = _f64(value)
        self._records.append(_Record("input", (), val, None))
        return Node(self, len(self._records) - 1)

    # `constant` is an alias kept for readability at call sites
    constant = input

    def record(self, primitive, operands, **params):
        """Record one primitive application and return the result node.

        Operands may be live nodes of this tape or constants; constants are
        stored inline.  Forward value is computed immediately.
        """
        fwd = _FORWARD.get(primitive)
        if fwd is None:
            raise AutodiffError(f"unknown primitive {primitive!r}")
        args = []
        vals = []
        for op in operands:
            if isinstance(op, Node):
                if op.tape is not self:
                    raise AutodiffError("operand belongs to a different tape")
                args.append(op.index)
                vals.append(op.value)
            else:
                c = _f64(op)
                args.append(c)
                vals.append(c)
        _check_domain(primitive, vals, len(self._records))
        val, params = fwd(vals, params)
        self._records.append(_Record(primitive, tuple(args), val, params))
        return Node(self, len(self._records) - 1)

    def replay(self):
        """Recompute every forward value from the records; returns True when
        the replayed values are bit-identical to the stored ones."""
        ok = True
        for rec in self._records:
            if rec.op == "input":
                continue
            vals = [
                self._records[a].value if isinstance(a, int) else a
                for a in rec.args
            ]
            new_val, _ = _FORWARD[rec.op](vals, dict(rec.params or {}))
            if new_val.shape != rec.value.shape or not np.array_equal(
                new_val, rec.value
            ):
                ok = False
        return ok


class Gradient:
    """Adjoint per tape node from one reverse sweep.

    Nodes with no path to the seeded output get a zero adjoint.
    """

    def __init__(self, tape, adjoints):
        self._tape = tape
        self._adjoints = adjoints

    def wrt(self, node):
        if node.tape is not self._tape:
            raise AutodiffError("node belongs to a different tape")
        if node.index < len(self._adjoints):
            g = self._adjoints[node.index]
            if g is not None:
                return g
        return np.zeros_like(node.value)


def backward(tape, output):
    """Single reverse sweep seeding d(output)/d(output) = 1.

    ``output`` must be scalar-valued.  Deterministic: repeated sweeps over
    the same tape produce bit-identical adjoints.
    """
    if not isinstance(output, Node) or output.tape is not tape:
        raise AutodiffError("output must be a node of this tape")
    if output.value.ndim != 0:
        raise AutodiffError("backward requires a scalar output node")
    records = tape._records
    adj = [None] * (output.index + 1)
    adj[output.index] = np.ones((), dtype=np.float64)
    for i in range(output.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        rec = records[i]
        if rec.op == "input" or not rec.args:
            continue
        arg_vals = [
            records[a].value if isinstance(a, int) else a for a in rec.args
        ]
        contribs = _VJP[rec.op](g, arg_vals, rec.value, rec.params)
        for slot, contrib in zip(rec.args, contribs):
            if contrib is None or not isinstance(slot, int):
                continue
            if adj[slot] is None:
                adj[slot] = contrib
            else:
                adj[slot] = adj[slot] + contrib
    return Gradient(tape, adj)


# ---------------------------------------------------------------------------
# primitive forwards and vector-Jacobian products
# ---------------------------------------------------------------------------

def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    g = _f64(g)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_domain(op, vals, position):
    if op == "sqrt" and np.any(vals[0] < 0.0):
        raise DomainError(f"sqrt of negative value (tape position {position})")
    if op == "log" and np.any(vals[0] <= 0.0):
        raise DomainError(f"log of non-positive value (tape position {position})")


def _fw_elementwise(fn):
    def fw(vals, params):
        return _f64(fn(*vals)), params
    return fw


def _fw_sum(vals, params):
    axis = params.get("axis")
    keepdims = params.get("keepdims", False)
    params["shape"] = vals[0].shape
    return _f64(np.sum(vals[0], axis=axis, keepdims=keepdims)), params


def _vjp_sum(g, vals, out, params):
    shape = params["shape"]
    axis = params.get("axis")
    keepdims = params.get("keepdims", False)
    if axis is None:
        return [np.broadcast_to(g, shape).astype(np.float64)]
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return [np.broadcast_to(g, shape).astype(np.float64)]


def _fw_reshape(vals, params):
    params["shape"] = vals[0].shape
    return vals[0].reshape(params["newshape"]), params


def _fw_take(vals, params):
    params["shape"] = vals[0].shape
    return _f64(vals[0][params["idx"]]), params


def _vjp_take(g, vals, out, params):
    z = np.zeros(params["shape"], dtype=np.float64)
    np.add.at(z, params["idx"], g)
    return [z]


def _fw_concat(vals, params):
    axis = params.get("axis", 0)
    params["sizes"] = [v.shape[axis] for v in vals]
    return np.concatenate(vals, axis=axis), params


def _vjp_concat(g, vals, out, params):
    axis = params.get("axis", 0)
    splits = np.cumsum(params["sizes"][:-1])
    return list(np.split(g, splits, axis=axis))


def _fw_stack(vals, params):
    return np.stack(vals, axis=params.get("axis", 0)), params


def _vjp_stack(g, vals, out, params):
    axis = params.get("axis", 0)
    return [np.take(g, i, axis=axis) for i in range(len(vals))]


def _fw_matmul(vals, params):
    return np.matmul(vals[0], vals[1]), params


def _vjp_matmul(g, vals, out, params):
    a, b = vals
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]


def _fw_matvec(vals, params):
    return np.einsum("...ij,...j->...i", vals[0], vals[1]), params


def _vjp_matvec(g, vals, out, params):
    a, x = vals
    ga = np.einsum("...i,...j->...ij", g, x)
    gx = np.einsum("...ij,...i->...j", a, g)
    return [_unbroadcast(ga, a.shape), _unbroadcast(gx, x.shape)]


def _fw_dot(vals, params):
    return _f64(np.dot(vals[0], vals[1])), params


def _fw_cross(vals, params):
    return np.cross(vals[0], vals[1]), params


def _vjp_cross(g, vals, out, params):
    a, b = vals
    return [
        _unbroadcast(np.cross(b, g), a.shape),
        _unbroadcast(np.cross(g, a), b.shape),
    ]


def _fw_where(vals, params):
    mask = params["mask"]
    return np.where(mask, vals[0], vals[1]).astype(np.float64), params


def _vjp_where(g, vals, out, params):
    mask = params["mask"]
    return [
        _unbroadcast(np.where(mask, g, 0.0), vals[0].shape),
        _unbroadcast(np.where(mask, 0.0, g), vals[1].shape),
    ]


_RESIDUAL_TOL = 1e-10
_COND_LIMIT = 1e13


def _factorize(a):
    """LU factors for a single matrix or a stack of matrices."""
    if a.ndim == 2:
        return lu_factor(a, check_finite=False)
    return [lu_factor(a[k], check_finite=False) for k in range(a.shape[0])]


def _lu_apply(factors, rhs, trans):
    if isinstance(factors, tuple):
        return lu_solve(factors, rhs, trans=trans, check_finite=False)
    return np.stack(
        [
            lu_solve(factors[k], rhs[k], trans=trans, check_finite=False)
            for k in range(len(factors))
        ]
    )


def _fw_linear_solve(vals, params):
    a, b = vals
    if a.shape[-1] != a.shape[-2]:
        raise LinearSolveError("matrix must be square")
    if a.ndim not in (2, 3):
        raise LinearSolveError("expected a matrix or a stack of matrices")
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise LinearSolveError("non-finite entries in linear system")
    factors = _factorize(a)
    x = _lu_apply(factors, b, trans=0)
    resid = np.einsum("...ij,...j->...i", a, x) - b
    bnorm = np.linalg.norm(b, axis=-1)
    rel = np.linalg.norm(resid, axis=-1) / np.maximum(bnorm, 1e-300)
    # a zero RHS has an exact zero solution; the relative test is vacuous
    rel = np.where(bnorm == 0.0, 0.0, rel)
    worst = float(np.max(rel)) if np.size(rel) else 0.0
    if not np.isfinite(x).all() or worst > _RESIDUAL_TOL:
        conds = (
            float(np.linalg.cond(a))
            if a.ndim == 2
            else float(np.max([np.linalg.cond(a[k]) for k in range(a.shape[0])]))
        )
        raise LinearSolveError(
            f"linear solve residual {worst:.3e} exceeds {_RESIDUAL_TOL:.0e} "
            f"(condition estimate {conds:.3e})",
            condition=conds,
        )
    params["factors"] = factors
    params["residual"] = worst
    return x, params


def _vjp_linear_solve(g, vals, out, params):
    adj_a, adj_b = linear_solve_adjoint(params["factors"], out, g)
    return [adj_a, adj_b]


def linear_solve_adjoint(factors_or_matrix, gamma, adjoint_gamma):
    """Adjoint of ``x = solve(A, b)``.

    * ``adjoint_b`` is one transposed solve (reusing LU factors when given),
    * ``adjoint_A = -adjoint_b . gamma^T`` (outer product, batched).
    """
    if isinstance(factors_or_matrix, (tuple, list)):
        factors = factors_or_matrix
    else:
        factors = _factorize(_f64(factors_or_matrix))
    gamma = _f64(gamma)
    adjoint_gamma = _f64(adjoint_gamma)
    adj_b = _lu_apply(factors, adjoint_gamma, trans=1)
    adj_a = -np.einsum("...i,...j->...ij", adj_b, gamma)
    return adj_a, adj_b


_FORWARD = {
    "add": _fw_elementwise(np.add),
    "sub": _fw_elementwise(np.subtract),
    "mul": _fw_elementwise(np.multiply),
    "div": _fw_elementwise(np.divide),
    "neg": _fw_elementwise(np.negative),
    "pow": lambda vals, p: (_f64(np.power(vals[0], p["exponent"])), p),
    "sin": _fw_elementwise(np.sin),
    "cos": _fw_elementwise(np.cos),
    "tan": _fw_elementwise(np.tan),
    "sqrt": _fw_elementwise(np.sqrt),
    "exp": _fw_elementwise(np.exp),
    "log": _fw_elementwise(np.log),
    "tanh": _fw_elementwise(np.tanh),
    "softplus": _fw_elementwise(lambda x: np.logaddexp(0.0, x)),
    "atan2": _fw_elementwise(np.arctan2),
    "maximum": _fw_elementwise(np.maximum),
    "minimum": _fw_elementwise(np.minimum),
    "abs": _fw_elementwise(np.abs),
    "sum": _fw_sum,
    "reshape": _fw_reshape,
    "take": _fw_take,
    "concat": _fw_concat,
    "stack": _fw_stack,
    "matmul": _fw_matmul,
    "matvec": _fw_matvec,
    "dot": _fw_dot,
    "cross": _fw_cross,
    "where": _fw_where,
    "linear_solve": _fw_linear_solve,
}

_VJP = {
    "add": lambda g, v, o, p: [
        _unbroadcast(g, v[0].shape),
        _unbroadcast(g, v[1].shape),
    ],
    "sub": lambda g, v, o, p: [
        _unbroadcast(g, v[0].shape),
        _unbroadcast(-g, v[1].shape),
    ],
    "mul": lambda g, v, o, p: [
        _unbroadcast(g * v[1], v[0].shape),
        _unbroadcast(g * v[0], v[1].shape),
    ],
    "div": lambda g, v, o, p: [
        _unbroadcast(g / v[1], v[0].shape),
        _unbroadcast(-g * v[0] / (v[1] * v[1]), v[1].shape),
    ],
    "neg": lambda g, v, o, p: [-g],
    "pow": lambda g, v, o, p: [
        g * p["exponent"] * np.power(v[0], p["exponent"] - 1)
    ],
    "sin": lambda g, v, o, p: [g * np.cos(v[0])],
    "cos": lambda g, v, o, p: [-g * np.sin(v[0])],
    "tan": lambda g, v, o, p: [g * (1.0 + o * o)],
    "sqrt": lambda g, v, o, p: [g * 0.5 / o],
    "exp": lambda g, v, o, p: [g * o],
    "log": lambda g, v, o, p: [g / v[0]],
    "tanh": lambda g, v, o, p: [g * (1.0 - o * o)],
    "softplus": lambda g, v, o, p: [g * expit(v[0])],
    "atan2": lambda g, v, o, p: [
        _unbroadcast(g * v[1] / (v[0] ** 2 + v[1] ** 2), v[0].shape),
        _unbroadcast(-g * v[0] / (v[0] ** 2 + v[1] ** 2), v[1].shape),
    ],
    "maximum": lambda g, v, o, p: [
        _unbroadcast(g * (v[0] > v[1]), v[0].shape),
        _unbroadcast(g * (v[1] > v[0]), v[1].shape),
    ],
    "minimum": lambda g, v, o, p: [
        _unbroadcast(g * (v[0] < v[1]), v[0].shape),
        _unbroadcast(g * (v[1] < v[0]), v[1].shape),
    ],
    "abs": lambda g, v, o, p: [g * np.sign(v[0])],
    "sum": _vjp_sum,
    "reshape": lambda g, v, o, p: [g.reshape(p["shape"])],
    "take": _vjp_take,
    "concat": _vjp_concat,
    "stack": _vjp_stack,
    "matmul": _vjp_matmul,
    "matvec": _vjp_matvec,
    "dot": lambda g, v, o, p: [g * v[1], g * v[0]],
    "cross": _vjp_cross,
    "where": _vjp_where,
    "linear_solve": _vjp_linear_solve,
}


# ---------------------------------------------------------------------------
# dual-dispatch math API (Node-aware, numpy otherwise)
# ---------------------------------------------------------------------------

def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _apply(op, *xs, **params):
    tape = _tape_of(*xs)
    if tape is not None:
        return tape.record(op, xs, **params)
    vals = [_f64(x) for x in xs]
    _check_domain(op, vals, -1)
    val, _ = _FORWARD[op](vals, dict(params))
    return val


def add(a, b):
    return _apply("add", a, b)


def subtract(a, b):
    return _apply("sub", a, b)


def multiply(a, b):
    return _apply("mul", a, b)


def divide(a, b):
    return _apply("div", a, b)


def negative(a):
    return _apply("neg", a)


def power(a, exponent):
    return _apply("pow", a, exponent=float(exponent))


def sin(a):
    return _apply("sin", a)


def cos(a):
    return _apply("cos", a)


def tan(a):
    return _apply("tan", a)


def sqrt(a):
    return _apply("sqrt", a)


def exp(a):
    return _apply("exp", a)


def log(a):
    return _apply("log", a)


def tanh(a):
    return _apply("tanh", a)


def softplus(a):
    return _apply("softplus", a)


def atan2(y, x):
    return _apply("atan2", y, x)


def maximum(a, b):
    return _apply("maximum", a, b)


def minimum(a, b):
    return _apply("minimum", a, b)


def absolute(a):
    return _apply("abs", a)


def clip(a, lo, hi):
    return minimum(maximum(a, lo), hi)


def asum(a, axis=None, keepdims=False):
    return _apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None):
    n = np.prod(value_of(a).shape) if axis is None else value_of(a).shape[axis]
    return divide(asum(a, axis=axis), float(n))


def reshape(a, newshape):
    return _apply("reshape", a, newshape=newshape)


def take(a, idx):
    return _apply("take", a, idx=idx)


def concat(parts, axis=0):
    return _apply("concat", *parts, axis=axis)


def stack(parts, axis=0):
    return _apply("stack", *parts, axis=axis)


def matmul(a, b):
    return _apply("matmul", a, b)


def matvec(a, x):
    return _apply("matvec", a, x)


def dot(a, b):
    return _apply("dot", a, b)


def cross(a, b):
    return _apply("cross", a, b)


def where(mask, a, b):
    return _apply("where", a, b, mask=np.asarray(mask, dtype=bool))


def linear_solve(a, b):
    """Solve A x = b (single system or a leading-axis stack of systems).

    Raises ``LinearSolveError`` with a condition estimate when the system is
    singular/ill-conditioned or the relative residual exceeds 1e-10.
    """
    return _apply("linear_solve", a, b)


def vnorm(a, axis=None):
    """Euclidean norm built from primitives (differentiable away from 0)."""
    return sqrt(asum(multiply(a, a), axis=axis))


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def gradcheck(func, x0, step=1e-6, absolute_floor=1e-8):
    """Compare reverse-mode gradients of ``func`` against central differences.

    ``func(tape, x_node) -> scalar Node`` where ``x_node`` is the 1-D input
    vector recorded as a tape input.  The finite-difference step for
    component ``i`` is ``step * max(1, |x0[i]|)``.

    Returns ``(max_rel_error, worst_index)``.  A component where both the
    analytic and numeric derivative are below ``absolute_floor`` counts as
    an exact match (error 0), so a constant function reports error 0.
    """
    x0 = _f64(x0).ravel()

    tape = Tape()
    xn = tape.input(x0)
    out = func(tape, xn)
    grad = backward(tape, out).wrt(xn)

    worst = 0.0
    worst_idx = 0
    for i in range(x0.size):
        h = step * max(1.0, abs(float(x0[i])))
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        tp = Tape()
        fp = float(func(tp, tp.input(xp)).value)
        tm = Tape()
        fm = float(func(tm, tm.input(xm)).value)
        fd = (fp - fm) / (2.0 * h)
        ad = float(grad[i])
        scale = max(abs(ad), abs(fd))
        if scale < absolute_floor:
            err = 0.0
        else:
            err = abs(ad - fd) / scale
        if err > worst:
            worst = err
            worst_idx = i
    return worst, worst_idx
