"""Tape based reverse-mode automatic differentiation over dense float64 arrays.

A Tape is an append-only list of Nodes. Every op computes its forward value
with numpy, records it, and returns the new node id (an int). backward()
walks the tape once in decreasing id order and applies each node's adjoint
rule. Adjoint rules live in a registry filled by the @adjoint decorator, so
other modules can add ops of their own (kernel.py adds the ARD RBF gram).

Example:
    tape = Tape()
    x = tape.parameter('x', 3.0)
    y = tape.mul(x, x)
    tape.backward(y)[x]  ==> [[6.0]]
"""
import logging

import numpy as np
from scipy import linalg
from scipy import special

from .errors import NonScalarRoot, NotPositiveDefinite, ShapeMismatch

logger = logging.getLogger(__name__)

# diagonal jitter levels tried by stable_cholesky, relative to mean(diag(A))
JITTER_LEVELS = (1e-6, 1e-4)

# op-kind -> adjoint rule, see @adjoint
_adjoints = {}


def adjoint(op):
    """adjoint(op) - register the adjoint rule of an op kind

    The rule is called as rule(node, g, tape) with g the adjoint of the node's
    value and returns one adjoint per parent (None for "no contribution").

    Example:
        @adjoint('neg')
        def _neg(node, g, tape):
            return (-g,)
    """
    def inner_decorator(f):
        _adjoints[op] = f
        return f
    return inner_decorator


def as_matrix(value):
    """coerce value to a float64 array with at least two dimensions
    (scalars become 1x1, vectors become a single row)"""
    value = np.asarray(value, dtype=np.float64)
    if value.ndim == 0:
        return value.reshape(1, 1)
    if value.ndim == 1:
        return value.reshape(1, -1)
    return value


class Node:
    """one recorded operation: kind, parent ids, forward value, cached intermediates"""
    __slots__ = ('id', 'op', 'parents', 'value', 'cache')

    def __init__(self, id, op, parents, value, cache):
        self.id = id
        self.op = op
        self.parents = parents
        self.value = value
        self.cache = cache

    def __repr__(self):
        return f"Node({self.id}: {self.op}{list(self.parents)} {self.value.shape})"


def _broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}() - incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g, shape):
    """sum g down to shape, undoing numpy broadcasting"""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _tril_solve(L, B):
    """L^{-1} B for lower-triangular L"""
    return linalg.solve_triangular(L, B, lower=True, check_finite=False)


def _tril_solve_t(L, B):
    """L^{-T} B for lower-triangular L"""
    return linalg.solve_triangular(L, B, lower=True, trans='T', check_finite=False)


class Tape:
    """append-only computation graph; rebuild one per forward evaluation"""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def __len__(self):
        return len(self.nodes)

    def record(self, op, parents, value, cache=None):
        """record(op, parents, value) - append a node and return its id"""
        n = len(self.nodes)
        for p in parents:
            if not 0 <= p < n:
                raise ValueError(f"record({op}) - parent {p} is not on the tape")
        self.nodes.append(Node(n, op, tuple(parents), as_matrix(value), cache))
        return n

    def value(self, i):
        return self.nodes[i].value

    def scalar(self, i):
        """the float held by a 1x1 node"""
        return float(self.nodes[i].value[0, 0])

    def constant(self, value):
        return self.record('constant', [], value)

    def parameter(self, name, value):
        """a trainable leaf; backward() reports its adjoint"""
        i = self.record('parameter', [], value, cache=name)
        self.params[name] = i
        return i

    def backward(self, root):
        """backward(root) - adjoints of the scalar root w.r.t. every parameter leaf

        Returns:
            dict: parameter node id -> adjoint array (zeros when unreached)
        """
        value = self.nodes[root].value
        if value.shape != (1, 1):
            raise NonScalarRoot(f"backward() - root {root} has shape {value.shape}, expected (1, 1)")
        adj = {root: np.ones((1, 1))}
        grads = {}
        for node in reversed(self.nodes[:root + 1]):
            g = adj.pop(node.id, None)
            if node.op == 'parameter':
                grads[node.id] = g if g is not None else np.zeros_like(node.value)
                continue
            if g is None or node.op == 'constant':
                continue
            parent_adj = _adjoints[node.op](node, g, self)
            for p, pg in zip(node.parents, parent_adj):
                if pg is None:
                    continue
                if p in adj:
                    adj[p] = adj[p] + pg
                else:
                    adj[p] = pg
        for name, i in self.params.items():
            if i not in grads:
                grads[i] = np.zeros_like(self.nodes[i].value)
        return grads

    def gradients(self, root):
        """backward(root) keyed by parameter name"""
        grads = self.backward(root)
        return {name: grads[i] for name, i in self.params.items()}

    # elementwise arithmetic, numpy broadcasting rules
    def add(self, a, b):
        va, vb = self.value(a), self.value(b)
        _broadcast('add', va, vb)
        return self.record('add', [a, b], va + vb)

    def sub(self, a, b):
        va, vb = self.value(a), self.value(b)
        _broadcast('sub', va, vb)
        return self.record('sub', [a, b], va - vb)

    def mul(self, a, b):
        va, vb = self.value(a), self.value(b)
        _broadcast('mul', va, vb)
        return self.record('mul', [a, b], va * vb)

    def div(self, a, b):
        va, vb = self.value(a), self.value(b)
        _broadcast('div', va, vb)
        return self.record('div', [a, b], va / vb)

    def neg(self, a):
        return self.record('neg', [a], -self.value(a))

    def scale(self, a, c):
        """multiply by a python float"""
        return self.record('scale', [a], self.value(a) * c, cache=float(c))

    def shift(self, a, c):
        """add a python float"""
        return self.record('shift', [a], self.value(a) + c)

    def exp(self, a):
        return self.record('exp', [a], np.exp(self.value(a)))

    def log(self, a):
        return self.record('log', [a], np.log(self.value(a)))

    def square(self, a):
        return self.record('square', [a], np.square(self.value(a)))

    def sqrt(self, a):
        return self.record('sqrt', [a], np.sqrt(self.value(a)))

    def clip_min(self, a, lo):
        return self.record('clip_min', [a], np.maximum(self.value(a), lo), cache=lo)

    def log_sigmoid(self, a):
        v = self.value(a)
        return self.record('log_sigmoid', [a], -np.logaddexp(0.0, -v))

    def lgamma(self, a):
        return self.record('lgamma', [a], special.gammaln(self.value(a)))

    # reductions and reshaping
    def sum(self, a):
        return self.record('sum', [a], np.sum(self.value(a)))

    def sum_axis(self, a, axis):
        return self.record('sum_axis', [a], np.sum(self.value(a), axis=axis, keepdims=True), cache=axis)

    def transpose(self, a):
        """swap the last two axes"""
        return self.record('transpose', [a], np.swapaxes(self.value(a), -1, -2))

    def permute(self, a, axes):
        return self.record('permute', [a], np.transpose(self.value(a), axes), cache=tuple(axes))

    def reshape(self, a, shape):
        v = self.value(a)
        try:
            out = v.reshape(shape)
        except ValueError:
            raise ShapeMismatch(f"reshape() - cannot reshape {v.shape} into {shape}")
        return self.record('reshape', [a], out, cache=v.shape)

    def take_cols(self, a, cols):
        """select columns (last axis) by index list"""
        cols = np.asarray(cols, dtype=int)
        return self.record('take_cols', [a], self.value(a)[..., cols], cache=cols)

    def concat_cols(self, parts):
        values = [self.value(p) for p in parts]
        try:
            out = np.concatenate(values, axis=-1)
        except ValueError:
            raise ShapeMismatch(f"concat_cols() - shapes {[v.shape for v in values]} do not line up")
        return self.record('concat_cols', parts, out, cache=[v.shape[-1] for v in values])

    def diag_part(self, a):
        """diagonal of a (batch of) square matrices; 2-D input gives a column"""
        v = self.value(a)
        d = np.diagonal(v, axis1=-2, axis2=-1)
        if v.ndim == 2:
            d = d.reshape(-1, 1)
        return self.record('diag_part', [a], d)

    # linear algebra
    def matmul(self, a, b):
        va, vb = self.value(a), self.value(b)
        if va.shape[-1] != vb.shape[-2]:
            raise ShapeMismatch(f"matmul() - inner dimensions differ: {va.shape} @ {vb.shape}")
        return self.record('matmul', [a, b], np.matmul(va, vb))

    def trisolve(self, L, B):
        """L^{-1} B for a lower-triangular 2-D L (upper triangle is ignored)"""
        vl, vb = self.value(L), self.value(B)
        if vl.ndim != 2 or vb.ndim != 2 or vl.shape[0] != vl.shape[1] or vl.shape[1] != vb.shape[0]:
            raise ShapeMismatch(f"trisolve() - cannot solve {vl.shape} against {vb.shape}")
        return self.record('trisolve', [L, B], _tril_solve(vl, vb))

    def lower_from_packed(self, W):
        """lower-triangular factor with a positive diagonal from packed storage:
        strictly-lower part of W as is, diagonal exponentiated, upper part ignored"""
        v = self.value(W)
        out = np.tril(v, -1)
        n = v.shape[-1]
        idx = np.arange(n)
        out[..., idx, idx] = np.exp(v[..., idx, idx])
        return self.record('lower_from_packed', [W], out)

    def cholesky(self, a):
        """L with L L^T = a (a read from its lower triangle)"""
        v = self.value(a)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeMismatch(f"cholesky() - expected a square matrix, got {v.shape}")
        try:
            L = np.linalg.cholesky(v)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(f"cholesky() - {v.shape[0]}x{v.shape[0]} matrix is not positive definite")
        if not np.all(np.isfinite(L)):
            raise NotPositiveDefinite("cholesky() - factorization produced non-finite entries")
        return self.record('cholesky', [a], L)

    def jitter(self, a, scale):
        """a + scale * mean(diag(a)) * I"""
        v = self.value(a)
        n = v.shape[-1]
        out = v + scale * np.mean(np.diag(v)) * np.eye(n)
        return self.record('jitter', [a], out, cache=scale)

    def logdet(self, a):
        """log|a| of an SPD matrix through its Cholesky factor"""
        L = self.cholesky(a)
        return self.scale(self.sum(self.log(self.diag_part(L))), 2.0)

    def softmax_rows(self, a):
        v = self.value(a)
        return self.record('softmax_rows', [a], special.softmax(v, axis=-1))

    def log_softmax_rows(self, a):
        v = self.value(a)
        return self.record('log_softmax_rows', [a], special.log_softmax(v, axis=-1))


def stable_cholesky(tape, a):
    """stable_cholesky(tape, a) - Cholesky factor of a with the jitter policy

    tries a + 1e-6 * mean(diag(a)) * I first and a + 1e-4 * mean(diag(a)) * I
    next; raises NotPositiveDefinite when both fail.
    """
    for level in JITTER_LEVELS:
        try:
            return tape.cholesky(tape.jitter(a, level))
        except NotPositiveDefinite:
            logger.debug("cholesky failed with jitter %g, escalating", level)
    raise NotPositiveDefinite(f"stable_cholesky() - matrix not positive definite after jitter {JITTER_LEVELS[-1]}")


def jittered_cholesky(A):
    """numpy counterpart of stable_cholesky for code that needs no gradients"""
    A = np.asarray(A, dtype=np.float64)
    bump = np.mean(np.diag(A)) * np.eye(A.shape[0])
    for level in JITTER_LEVELS:
        try:
            return np.linalg.cholesky(A + level * bump)
        except np.linalg.LinAlgError:
            logger.debug("cholesky failed with jitter %g, escalating", level)
    raise NotPositiveDefinite(f"jittered_cholesky() - matrix not positive definite after jitter {JITTER_LEVELS[-1]}")


@adjoint('add')
def _add(node, g, tape):
    a, b = node.parents
    return _unbroadcast(g, tape.value(a).shape), _unbroadcast(g, tape.value(b).shape)


@adjoint('sub')
def _sub(node, g, tape):
    a, b = node.parents
    return _unbroadcast(g, tape.value(a).shape), _unbroadcast(-g, tape.value(b).shape)


@adjoint('mul')
def _mul(node, g, tape):
    a, b = node.parents
    va, vb = tape.value(a), tape.value(b)
    return _unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)


@adjoint('div')
def _div(node, g, tape):
    a, b = node.parents
    va, vb = tape.value(a), tape.value(b)
    return _unbroadcast(g / vb, va.shape), _unbroadcast(-g * va / vb ** 2, vb.shape)


@adjoint('neg')
def _neg(node, g, tape):
    return (-g,)


@adjoint('scale')
def _scale(node, g, tape):
    return (g * node.cache,)


@adjoint('shift')
def _shift(node, g, tape):
    return (g,)


@adjoint('exp')
def _exp(node, g, tape):
    return (g * node.value,)


@adjoint('log')
def _log(node, g, tape):
    return (g / tape.value(node.parents[0]),)


@adjoint('square')
def _square(node, g, tape):
    return (2.0 * g * tape.value(node.parents[0]),)


@adjoint('sqrt')
def _sqrt(node, g, tape):
    # zero where the value is zero; clamped variances land there
    out = np.zeros_like(node.value)
    np.divide(g, 2.0 * node.value, out=out, where=node.value > 0)
    return (out,)


@adjoint('clip_min')
def _clip_min(node, g, tape):
    return (g * (tape.value(node.parents[0]) > node.cache),)


@adjoint('log_sigmoid')
def _log_sigmoid(node, g, tape):
    return (g * special.expit(-tape.value(node.parents[0])),)


@adjoint('lgamma')
def _lgamma(node, g, tape):
    return (g * special.digamma(tape.value(node.parents[0])),)


@adjoint('sum')
def _sum(node, g, tape):
    return (np.full(tape.value(node.parents[0]).shape, g[0, 0]),)


@adjoint('sum_axis')
def _sum_axis(node, g, tape):
    return (np.broadcast_to(g, tape.value(node.parents[0]).shape).copy(),)


@adjoint('transpose')
def _transpose(node, g, tape):
    return (np.swapaxes(g, -1, -2),)


@adjoint('permute')
def _permute(node, g, tape):
    return (np.transpose(g, np.argsort(node.cache)),)


@adjoint('reshape')
def _reshape(node, g, tape):
    return (g.reshape(node.cache),)


@adjoint('take_cols')
def _take_cols(node, g, tape):
    out = np.zeros_like(tape.value(node.parents[0]))
    # moveaxis gives a view, so add.at scatters straight into out
    np.add.at(np.moveaxis(out, -1, 0), node.cache, np.moveaxis(g, -1, 0))
    return (out,)


@adjoint('concat_cols')
def _concat_cols(node, g, tape):
    splits = np.cumsum(node.cache)[:-1]
    return tuple(np.split(g, splits, axis=-1))


@adjoint('diag_part')
def _diag_part(node, g, tape):
    v = tape.value(node.parents[0])
    n = v.shape[-1]
    idx = np.arange(n)
    out = np.zeros_like(v)
    out[..., idx, idx] = g.reshape(v.shape[:-2] + (n,))
    return (out,)


@adjoint('matmul')
def _matmul(node, g, tape):
    a, b = node.parents
    va, vb = tape.value(a), tape.value(b)
    ga = np.matmul(g, np.swapaxes(vb, -1, -2))
    gb = np.matmul(np.swapaxes(va, -1, -2), g)
    return _unbroadcast(ga, va.shape), _unbroadcast(gb, vb.shape)


@adjoint('trisolve')
def _trisolve(node, g, tape):
    L = tape.value(node.parents[0])
    gb = _tril_solve_t(L, g)
    gl = np.tril(-gb @ node.value.T)
    return gl, gb


@adjoint('lower_from_packed')
def _lower_from_packed(node, g, tape):
    n = g.shape[-1]
    idx = np.arange(n)
    out = np.tril(g, -1)
    out[..., idx, idx] = g[..., idx, idx] * node.value[..., idx, idx]
    return (out,)


@adjoint('cholesky')
def _cholesky(node, g, tape):
    # symmetric adjoint: with P = Phi(L^T G), S = L^{-T} P L^{-1}, dA = (S + S^T)/2
    L = node.value
    P = np.tril(L.T @ g)
    P[np.diag_indices_from(P)] *= 0.5
    R = _tril_solve_t(L, P.T).T
    S = _tril_solve_t(L, R)
    return (0.5 * (S + S.T),)


@adjoint('jitter')
def _jitter(node, g, tape):
    n = g.shape[-1]
    return (g + node.cache * np.trace(g) / n * np.eye(n),)


@adjoint('softmax_rows')
def _softmax_rows(node, g, tape):
    s = node.value
    return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)


@adjoint('log_softmax_rows')
def _log_softmax_rows(node, g, tape):
    s = np.exp(node.value)
    return (g - s * np.sum(g, axis=-1, keepdims=True),)


def numeric_gradient(f, x, h=1e-5):
    """numeric_gradient(f, x, h) - central differences of the scalar function f at array x

    Example:
        numeric_gradient(lambda v: float(np.sum(v ** 2)), np.array([1.0, 2.0])) ==> ~[2, 4]
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """largest |a - n| / max(|a|, |n|) over entries where either exceeds floor"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    keep = scale > floor
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(analytic - numeric)[keep] / scale[keep]))


def check_gradients(build, params, h=1e-5, floor=1e-8):
    """check_gradients(build, params) - backward() against central differences

    build(tape, nodes) records a scalar function of the parameter nodes and
    returns its root; params maps names to initial arrays.

    Returns:
        dict: parameter name -> largest relative error
    """
    params = {name: as_matrix(value) for name, value in params.items()}

    def evaluate(values):
        tape = Tape()
        nodes = {name: tape.parameter(name, v) for name, v in values.items()}
        root = build(tape, nodes)
        return tape, root

    tape, root = evaluate(params)
    analytic = tape.gradients(root)
    errors = {}
    for name in params:
        def f(x, name=name):
            t, r = evaluate({**params, name: x})
            return t.scalar(r)
        errors[name] = relative_error(analytic[name], numeric_gradient(f, params[name], h), floor)
    return errors
