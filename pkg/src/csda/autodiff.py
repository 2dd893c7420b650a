"""Dense float64 arrays with a reverse-mode differentiation graph.

Only the operations needed by the discriminant losses and the encoder-decoder
networks are provided. There is no implicit broadcasting: apart from
multiplication by a Python scalar, operand shapes must match exactly.
"""

import itertools
import math

import numpy as np

_node_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""


class DomainError(ValueError):
    """An operation was evaluated outside its domain (e.g. log of x <= 0)."""


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


class Tensor:
    """An n-d array of float64 values with optional gradient tracking.

    Attributes:
        data: the values, always a float64 ndarray of rank 0 to 4.
        grad: gradient filled in by :func:`backward` for tracked leaves.
        requires_grad: whether gradients flow to or through this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"tensor rank must be at most 4, got {arr.ndim}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._id = next(_node_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if _is_scalar(other):
            return scale(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not _is_scalar(other):
            raise TypeError("division is only defined by a Python scalar")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer)) and not isinstance(x, bool)


def as_tensor(x):
    """Wrap ``x`` as an untracked tensor unless it already is one."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# --- graph traversal -------------------------------------------------------


def backward(loss):
    """Propagate d(loss)/d(leaf) to every tracked leaf of ``loss``'s graph.

    Nodes are visited in exact reverse creation order. Gradients of leaves
    used more than once are summed. Returns a dict mapping each tracked leaf
    to its gradient array; the same arrays are stored on ``leaf.grad``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in nodes:
            continue
        nodes[t._id] = t
        stack.extend(p for p in t._parents if p.requires_grad)

    grads = {loss._id: np.ones_like(loss.data)}
    leaves = {}
    for node_id in sorted(nodes, reverse=True):
        t = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if t.is_leaf:
            leaves[t] = g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg

    for leaf, g in leaves.items():
        leaf.grad = g
    return leaves


# --- elementwise and linear algebra ----------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("add", a.shape, b.shape)
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scale(a, c):
    """Multiply a tensor by a Python scalar (the only broadcast allowed)."""
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def shift(a, c):
    """Add a Python scalar to every element."""
    c = float(c)
    return _node(a.data + c, (a,), lambda g: (g,), "shift")


def hadamard(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("hadamard", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "hadamard")


def power(a, exponent):
    """Elementwise ``a ** exponent`` for a scalar exponent; requires ``a >= 0``."""
    p = float(exponent)
    ad = a.data
    if np.any(ad < 0):
        raise DomainError("power: base must be non-negative")

    def grad_fn(g):
        return (g * p * ad ** (p - 1.0),)

    return _node(ad**p, (a,), grad_fn, "power")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def outer(a, b):
    if a.ndim != 1 or b.ndim != 1:
        raise _shape_error("outer", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _node(np.outer(ad, bd), (a, b), lambda g: (g @ bd, g.T @ ad), "outer")


def transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def trace(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"trace: expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    return _node(np.trace(a.data), (a,), lambda g: (g * np.eye(n),), "trace")


def total(a):
    """Sum of all elements, as a scalar tensor."""
    shape = a.shape
    return _node(a.data.sum(), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(a, axis=None):
    """Mean over all elements, or over one axis."""
    shape = a.shape
    if axis is None:
        n = a.data.size
        return _node(a.data.mean(), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")
    n = shape[axis]

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _node(a.data.mean(axis=axis), (a,), grad_fn, "mean")


def log(a):
    if np.any(a.data <= 0):
        raise DomainError(f"log: argument must be positive, min value is {a.data.min()!r}")
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,), "log")


# Keeps sigmoid outputs strictly inside (0, 1) in float64.
SIGMOID_CLIP = 1e-12


def sigmoid(a):
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    s = np.clip(s, SIGMOID_CLIP, 1.0 - SIGMOID_CLIP)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def relu(a):
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def leaky_relu(a, slope=0.1):
    """``x`` for positive inputs, ``slope * x`` otherwise. ``slope=0`` is plain relu."""
    if slope == 0:
        return relu(a)
    k = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * k, (a,), lambda g: (g * k,), "leaky_relu")


# --- shape manipulation ----------------------------------------------------


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", old, shape) from None
    return _node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def take_rows(a, index):
    """Select rows of a matrix by integer index (a gather along axis 0)."""
    if a.ndim != 2:
        raise ShapeError(f"take_rows: expected a matrix, got shape {a.shape}")
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), grad_fn, "take_rows")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise _shape_error("concat", ref, t.shape)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors, grad_fn, "concat")


# --- convolutional layers (NHWC layout) ------------------------------------


def conv2d(x, weight, bias):
    """Stride-1 convolution with zero 'same' padding.

    Args:
        x: (N, H, W, Cin) input.
        weight: (k, k, Cin, Cout) kernel with odd k.
        bias: (Cout,) bias.
    """
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2] != x.shape[3]:
        raise _shape_error("conv2d", x.shape, weight.shape)
    k = weight.shape[0]
    if weight.shape[1] != k or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {weight.shape}")
    if bias.shape != (weight.shape[3],):
        raise _shape_error("conv2d", weight.shape, bias.shape)
    n, h, w, cin = x.shape
    cout = weight.shape[3]
    r = k // 2
    taps = [(i, j) for i in range(k) for j in range(k)]
    wd = weight.data
    xp = np.pad(x.data, ((0, 0), (r, r), (r, r), (0, 0))) if r else x.data
    # one small matmul per kernel tap beats building the full im2col matrix
    out = np.broadcast_to(bias.data, (n, h, w, cout)).copy()
    for i, j in taps:
        out += xp[:, i : i + h, j : j + w, :] @ wd[i, j]

    def grad_fn(g):
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.empty(wd.shape)
            for i, j in taps:
                gw[i, j] = np.tensordot(xp[:, i : i + h, j : j + w, :], g, axes=([0, 1, 2], [0, 1, 2]))
        if bias.requires_grad:
            gb = g.reshape(-1, cout).sum(axis=0)
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (r, r), (r, r), (0, 0))) if r else g
            gx = np.zeros(x.shape)
            for i, j in taps:
                gx += gp[:, 2 * r - i : 2 * r - i + h, 2 * r - j : 2 * r - j + w, :] @ wd[i, j].T
        return gx, gw, gb

    return _node(out, (x, weight, bias), grad_fn, "conv2d")


def upconv2x(x, weight, bias):
    """2x upsampling by a stride-2, 2x2 transposed convolution.

    Args:
        x: (N, H, W, Cin) input.
        weight: (2, 2, Cin, Cout) kernel.
        bias: (Cout,) bias.
    """
    if x.ndim != 4 or weight.shape[:3] != (2, 2, x.shape[3]):
        raise _shape_error("upconv2x", x.shape, weight.shape)
    if bias.shape != (weight.shape[3],):
        raise _shape_error("upconv2x", weight.shape, bias.shape)
    n, h, w, cin = x.shape
    cout = weight.shape[3]
    xm = x.data.reshape(-1, cin)
    wmat = weight.data.transpose(2, 0, 1, 3).reshape(cin, 4 * cout)
    y = (xm @ wmat).reshape(n, h, w, 2, 2, cout).transpose(0, 1, 3, 2, 4, 5)
    out = y.reshape(n, 2 * h, 2 * w, cout) + bias.data

    def grad_fn(g):
        g6 = g.reshape(n, h, 2, w, 2, cout).transpose(0, 1, 3, 2, 4, 5).reshape(-1, 4 * cout)
        gx = (g6 @ wmat.T).reshape(x.shape) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = (xm.T @ g6).reshape(cin, 2, 2, cout).transpose(1, 2, 0, 3)
        gb = g.reshape(-1, cout).sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _node(out, (x, weight, bias), grad_fn, "upconv2x")


def maxpool2x(x):
    """2x2 max-pool with stride 2. Ties route the gradient to the first maximum."""
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"maxpool2x: spatial extent must be even, got shape {x.shape}")
    n, h, w, c = x.shape
    blocks = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return (gb.reshape(n, h, w, c),)

    return _node(out, (x,), grad_fn, "maxpool2x")


# --- gradient verification -------------------------------------------------


def finite_difference_check(f, x, h=1e-5):
    """Compare autodiff against central differences for a scalar function.

    Args:
        f: callable taking a tracked :class:`Tensor` and returning a scalar tensor.
        x: point of evaluation (array or tensor); it is copied, not modified.
        h: finite-difference step.

    Returns:
        max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("finite_difference_check: step must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    _check_finite(out)
    grads = backward(out)
    analytic = grads.get(leaf, np.zeros_like(x0))

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = f(Tensor(xp.reshape(x0.shape)))
        fm = f(Tensor(xm.reshape(x0.shape)))
        _check_finite(fp)
        _check_finite(fm)
        flat[i] = (fp.item() - fm.item()) / (2.0 * h)

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0


def _check_finite(t):
    if t.data.size != 1:
        raise ShapeError(f"finite_difference_check: function must return a scalar, got {t.shape}")
    if not math.isfinite(t.item()):
        raise DomainError("finite_difference_check: function returned a non-finite value")
