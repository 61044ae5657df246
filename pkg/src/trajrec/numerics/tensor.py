"""Dense float64 tensors with reverse-mode differentiation.

Each op builds a node that keeps references to its parents and a closure
mapping the output gradient to parent gradients. ``Tensor.backward`` walks
the graph once in reverse topological order and then frees it.

Broadcasting is deliberately narrow: elementwise ops need equal shapes,
except ``add_bias`` (vector over the last axis) and python scalars.
Use ``expand`` when a tensor has to be repeated along a new axis.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class GraphConsumedError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def backward(self) -> None:
        """Populate ``.grad`` on every leaf that requires it.

        The graph is released afterwards; calling again raises
        ``GraphConsumedError``.
        """
        if self._consumed:
            raise GraphConsumedError("backward already ran on this graph; rebuild it with a new forward pass")
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if g is not None and node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node._consumed = True
            backward_fn, parents = node._backward, node._parents
            node._backward, node._parents = None, ()
            if g is None:
                continue
            for parent, pg in zip(parents, backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._consumed = True


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _wrap(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        c = float(b)
        return _node(a.data + c, (a,), lambda g: (g,))
    b = _wrap(b)
    _check_same("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x, bias: Tensor) -> Tensor:
    """x[..., n] + bias[n]; the only broadcasting add."""
    x, bias = _wrap(x), _wrap(bias)
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ValueError(f"add_bias: shape mismatch {x.shape} vs {bias.shape}")

    def back(g):
        return g, g.reshape(-1, bias.shape[0]).sum(axis=0)

    return _node(x.data + bias.data, (x, bias), back)


def neg(a) -> Tensor:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _wrap(a)
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    b = _wrap(b)
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = _wrap(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _wrap(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * factor, (a,), lambda g: (g * factor,))


def softplus(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    y = np.logaddexp(0.0, x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(y, (a,), lambda g: (g * s,))


def cos(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    return _node(np.cos(x), (a,), lambda g: (-g * np.sin(x),))


def sin(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    return _node(np.sin(x), (a,), lambda g: (g * np.cos(x),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """2-D matrix product, or a batch of rows ``(..., k) @ (k, n)``."""
    a, b = _wrap(a), _wrap(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(ad @ bd, (a, b), back)


def bmm(a, b) -> Tensor:
    """Batched product of 3-D tensors ``(n, p, k) @ (n, k, q)``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"bmm: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _node(ad @ bd, (a, b), back)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"reshape: shape mismatch {old} vs {tuple(shape)}") from exc
    return _node(y, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ValueError(f"concat: shape mismatch {ref} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), back)


def expand(a, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``n`` times along it."""
    a = _wrap(a)
    y = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    return _node(y, (a,), lambda g: (g.sum(axis=axis),))


def index(a, key) -> Tensor:
    a = _wrap(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, key, g)
        return (out,)

    return _node(np.array(a.data[key], dtype=DTYPE), (a,), back)


def embedding(table, ids, padding_idx: int | None = None) -> Tensor:
    """Row lookup ``table[ids]``; rows at ``padding_idx`` get no gradient."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ValueError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table of {table.shape[0]} rows")
    n_rows = table.shape[0]

    def back(g):
        flat_ids = ids.reshape(-1)
        flat_g = g.reshape(flat_ids.size, -1)
        if padding_idx is not None:
            keep = flat_ids != padding_idx
            flat_ids, flat_g = flat_ids[keep], flat_g[keep]
        out = np.zeros((n_rows, g.shape[-1]), dtype=DTYPE)
        np.add.at(out, flat_ids, flat_g)
        return (out,)

    return _node(table.data[ids], (table,), back)


# ---------------------------------------------------------------- reductions

def sum_all(a) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    return _node(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = _wrap(a)
    shape, n = a.shape, a.data.size
    return _node(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def sum_axis(a, axis: int) -> Tensor:
    a = _wrap(a)
    shape = a.shape
    ax = axis % len(shape)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _node(a.data.sum(axis=ax), (a,), back)


# ---------------------------------------------------------------- normalisation & losses

def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. ``mask`` (True = keep) broadcasts against ``a``."""
    a = _wrap(a)
    x = a.data
    if mask is not None:
        keep = np.broadcast_to(mask, x.shape)
        x = np.where(keep, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), back)


def layer_norm(a, gain, bias, eps: float = 1e-10) -> Tensor:
    a, gain, bias = _wrap(a), _wrap(gain), _wrap(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm: shape mismatch {a.shape} vs {gain.shape}/{bias.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        lead = g.reshape(-1, d)
        g_gain = (lead * xhat.reshape(-1, d)).sum(axis=0)
        g_bias = lead.sum(axis=0)
        gx = g * gd
        gx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return gx, g_gain, g_bias

    return _node(xhat * gd + bias.data, (a, gain, bias), back)


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under row-wise softmax."""
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy: shape mismatch {logits.shape} vs {targets.shape}")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    rows = np.arange(x.shape[0])
    n = x.shape[0]
    loss = float((lse - x[rows, targets]).mean())

    def back(g):
        p = np.exp(x - lse[:, None])
        p[rows, targets] -= 1.0
        return (p * (float(g) / n),)

    return _node(np.array(loss), (logits,), back)
