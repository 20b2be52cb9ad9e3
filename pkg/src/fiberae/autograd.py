"""Minimal tape-based reverse-mode differentiation over real and complex numpy arrays.

Every primitive below works in two modes:

* no active tape, or all inputs are plain ndarrays -> eager numpy computation,
  plain ndarray returned (zero overhead for inference paths);
* an active :class:`Tape` and at least one :class:`Tensor` input -> the result is
  recorded on the tape together with a vector-Jacobian closure.

Gradient conventions
--------------------
Internally, the cotangent flowing through the tape is the *packed real
gradient*: for a complex node ``w = a + ib`` it is ``dL/da + i dL/db``, for a
real node simply ``dL/dx``.  This convention composes uniformly through mixed
real/complex graphs.  The public :meth:`Tape.gradient` divides complex-leaf
gradients by two before returning them, so callers receive the Wirtinger
cogradient ``dL/dw-bar`` (for ``L = |w|^2`` the returned gradient is ``w``).
The descent direction for a complex parameter is minus that cogradient.

The FFT pair uses the unnormalized forward / 1/N inverse convention of
``scipy.fft``; the adjoint of ``fft`` is therefore ``N * ifft`` and vice versa.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import fft as sp_fft


class AutogradError(ValueError):
    """Raised on malformed primitive applications (shape/dtype mismatches)."""


class Tensor:
    """A value recorded on a tape, or a trainable leaf."""

    __slots__ = ("data", "parents", "vjp", "op", "trainable")

    def __init__(self, data, trainable: bool = False):
        self.data = np.asarray(data)
        self.parents: tuple = ()
        self.vjp: Callable | None = None
        self.op: str = "leaf"
        self.trainable = trainable

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, dtype={self.data.dtype})"


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications (topological by construction)."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def gradient(self, loss: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
        """Backpropagate a real scalar loss; return one gradient per leaf.

        Complex-leaf gradients are Wirtinger cogradients dL/dw-bar; real-leaf
        gradients are plain dL/dx.
        """
        if not isinstance(loss, Tensor):
            raise AutogradError("backward: loss is not on the tape")
        ld = np.asarray(loss.data)
        if ld.size != 1 or np.iscomplexobj(ld):
            raise AutogradError("backward: loss must be a real scalar")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(ld)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or node.vjp is None:
                continue
            parts = node.vjp(g)
            for parent, pg in zip(node.parents, parts):
                if parent is None or pg is None:
                    continue
                if not np.iscomplexobj(parent.data) and np.iscomplexobj(pg):
                    pg = pg.real
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        out = []
        for leaf in leaves:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            elif np.iscomplexobj(leaf.data):
                g = g / 2.0
            out.append(np.asarray(g))
        return out


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _emit(op: str, out: np.ndarray, parents: tuple, vjp: Callable):
    tape = _active_tape()
    if tape is None or not any(isinstance(p, Tensor) for p in parents):
        return out
    node = Tensor(out)
    node.parents = tuple(p if isinstance(p, Tensor) else None for p in parents)
    node.vjp = vjp
    node.op = op
    tape.nodes.append(node)
    return node


def value(x) -> np.ndarray:
    """The plain ndarray behind a Tensor (identity on ndarrays)."""
    return _data(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, *shapes):
    try:
        np.broadcast_shapes(*shapes)
    except ValueError as e:
        raise AutogradError(f"{op}: incompatible shapes {shapes}") from e


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    ad, bd = _data(a), _data(b)
    _check_broadcast("add", ad.shape, bd.shape)
    out = ad + bd
    return _emit("add", out, (a, b),
                 lambda g: (_unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)))


def sub(a, b):
    ad, bd = _data(a), _data(b)
    _check_broadcast("sub", ad.shape, bd.shape)
    out = ad - bd
    return _emit("sub", out, (a, b),
                 lambda g: (_unbroadcast(g, ad.shape), -_unbroadcast(g, bd.shape)))


def neg(a):
    return _emit("neg", -_data(a), (a,), lambda g: (-g,))


def mul(a, b):
    ad, bd = _data(a), _data(b)
    _check_broadcast("mul", ad.shape, bd.shape)
    out = ad * bd
    return _emit("mul", out, (a, b),
                 lambda g: (_unbroadcast(g * np.conj(bd), ad.shape),
                            _unbroadcast(g * np.conj(ad), bd.shape)))


def div(a, b):
    ad, bd = _data(a), _data(b)
    _check_broadcast("div", ad.shape, bd.shape)
    out = ad / bd
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / np.conj(bd), ad.shape),
                            _unbroadcast(-g * np.conj(ad / (bd * bd)), bd.shape)))


def conj(a):
    return _emit("conj", np.conj(_data(a)), (a,), lambda g: (np.conj(g),))


def real(a):
    return _emit("real", _data(a).real, (a,), lambda g: (g.astype(complex),))


def imag(a):
    return _emit("imag", _data(a).imag, (a,), lambda g: (1j * g,))


def pack_complex(re, im):
    rd, id_ = _data(re), _data(im)
    _check_broadcast("pack_complex", rd.shape, id_.shape)
    out = rd + 1j * id_
    return _emit("pack_complex", out, (re, im),
                 lambda g: (_unbroadcast(g.real, rd.shape), _unbroadcast(g.imag, id_.shape)))


def abs2(a):
    """|a|^2, real-valued output."""
    ad = _data(a)
    out = (ad * np.conj(ad)).real
    return _emit("abs2", out, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a):
    ad = _data(a)
    if np.iscomplexobj(ad):
        raise AutogradError("sqrt: real input expected")
    out = np.sqrt(ad)
    return _emit("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def log(a):
    ad = _data(a)
    if np.iscomplexobj(ad):
        raise AutogradError("log: real input expected")
    return _emit("log", np.log(ad), (a,), lambda g: (g / ad,))


def expi(a):
    """exp(i a) for real-valued a."""
    ad = _data(a)
    if np.iscomplexobj(ad):
        raise AutogradError("expi: real input expected")
    out = np.exp(1j * ad)
    return _emit("expi", out, (a,),
                 lambda g: (_unbroadcast((np.conj(g) * 1j * out).real, ad.shape),))


def maximum(a, floor: float):
    """Elementwise max with a real constant (used as a clamp)."""
    ad = _data(a)
    out = np.maximum(ad, floor)
    mask = ad >= floor
    return _emit("maximum", out, (a,), lambda g: (g * mask,))


def relu(a):
    ad = _data(a)
    mask = ad > 0
    return _emit("relu", ad * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions / shaping


def _sum_vjp(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    ad = _data(a)
    out = ad.sum(axis=axis, keepdims=keepdims)
    return _emit("sum", out, (a,), lambda g: (_sum_vjp(g, ad.shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False):
    ad = _data(a)
    out = ad.mean(axis=axis, keepdims=keepdims)
    count = ad.size if axis is None else ad.shape[axis]
    return _emit("mean", out, (a,),
                 lambda g: (_sum_vjp(g, ad.shape, axis, keepdims) / count,))


def reshape(a, shape):
    ad = _data(a)
    return _emit("reshape", ad.reshape(shape), (a,), lambda g: (g.reshape(ad.shape),))


def roll(a, shift: int, axis: int = -1):
    ad = _data(a)
    return _emit("roll", np.roll(ad, shift, axis=axis), (a,),
                 lambda g: (np.roll(g, -shift, axis=axis),))


def stack(items):
    """Stack 1-D-compatible tensors along a new leading axis."""
    datas = [_data(it) for it in items]
    out = np.stack(datas)

    def vjp(g):
        return tuple(g[i] for i in range(len(datas)))

    return _emit("stack", out, tuple(items), vjp)


def gather(a, idx):
    """Select entries along axis 0 with an integer index array."""
    ad = _data(a)
    idx = np.asarray(idx)

    def vjp(g):
        z = np.zeros_like(ad, dtype=np.result_type(ad.dtype, g.dtype))
        np.add.at(z, idx, g)
        return (z,)

    return _emit("gather", ad[idx], (a,), vjp)


def take_label(p, labels):
    """Row-wise select: out[i] = p[i, labels[i]]."""
    pd = _data(p)
    labels = np.asarray(labels)
    if labels.ndim != 1 or pd.shape[0] != labels.shape[0]:
        raise AutogradError("take_label: labels must be 1-D matching rows")
    rows = np.arange(pd.shape[0])

    def vjp(g):
        z = np.zeros_like(pd, dtype=np.result_type(pd.dtype, g.dtype))
        z[rows, labels] = g
        return (z,)

    return _emit("take_label", pd[rows, labels], (p,), vjp)


# ---------------------------------------------------------------------------
# linear algebra / NN


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.shape[-1] != bd.shape[0]:
        raise AutogradError(f"matmul: inner dims differ {ad.shape} @ {bd.shape}")
    out = ad @ bd
    return _emit("matmul", out, (a, b),
                 lambda g: (g @ np.conj(bd).T, np.conj(ad).T @ g))


def softmax(a, axis=-1):
    ad = _data(a)
    shifted = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


# ---------------------------------------------------------------------------
# signal processing


def fft(a, axis=-1):
    ad = _data(a)
    n = ad.shape[axis]
    out = sp_fft.fft(ad, axis=axis)
    return _emit("fft", out, (a,), lambda g: (sp_fft.ifft(g, axis=axis) * n,))


def ifft(a, axis=-1):
    ad = _data(a)
    n = ad.shape[axis]
    out = sp_fft.ifft(ad, axis=axis)
    return _emit("ifft", out, (a,), lambda g: (sp_fft.fft(g, axis=axis) / n,))


def circular_convolve(a, kernel_spectrum, axis=-1):
    """Circular convolution with a fixed kernel given by its FFT spectrum."""
    return ifft(mul(fft(a, axis=axis), kernel_spectrum), axis=axis)


def upsample(a, factor: int, axis: int = -1):
    """Zero-insertion upsampling along `axis`."""
    ad = _data(a)
    shape = list(ad.shape)
    shape[axis] *= factor
    sl = [slice(None)] * ad.ndim
    sl[axis] = slice(None, None, factor)
    sl = tuple(sl)

    out = np.zeros(shape, dtype=ad.dtype)
    out[sl] = ad
    return _emit("upsample", out, (a,), lambda g: (g[sl],))


def downsample(a, factor: int, axis: int = -1, offset: int = 0):
    """Keep every `factor`-th sample starting at `offset`."""
    ad = _data(a)
    sl = [slice(None)] * ad.ndim
    sl[axis] = slice(offset, None, factor)
    sl = tuple(sl)

    def vjp(g):
        z = np.zeros_like(ad, dtype=np.result_type(ad.dtype, g.dtype))
        z[sl] = g
        return (z,)

    return _emit("downsample", ad[sl], (a,), vjp)


def kerr(u, pol_axis: int = -2):
    """Elementwise cubic Kerr term ||u||^2 u, with the norm over `pol_axis`."""
    ud = _data(u)
    p = (ud * np.conj(ud)).real.sum(axis=pol_axis, keepdims=True)
    out = p * ud

    def vjp(g):
        s = 2.0 * (g * np.conj(ud)).real.sum(axis=pol_axis, keepdims=True)
        return (ud * s + g * p,)

    return _emit("kerr", out, (u,), vjp)


# ---------------------------------------------------------------------------
# verification


def gradient_check(fn, args, eps: float = 1e-6) -> float:
    """Max relative error between tape gradients of `fn` and central differences.

    `fn` maps the argument arrays to a real scalar (Tensor when taped, ndarray
    otherwise).  All real coordinates of every argument are perturbed.
    """
    leaves = [Tensor(np.array(_data(a)), trainable=True) for a in args]
    with Tape() as tape:
        loss = fn(*leaves)
    grads = tape.gradient(loss, leaves)

    def eval_plain():
        return float(value(fn(*[leaf.data for leaf in leaves])))

    max_err = 0.0
    for leaf, g in zip(leaves, grads):
        if np.iscomplexobj(leaf.data):
            analytic = np.concatenate([2 * g.real.ravel(), 2 * g.imag.ravel()])
            flat = leaf.data.ravel()
            coords = [("r", i) for i in range(flat.size)] + [("i", i) for i in range(flat.size)]
        else:
            analytic = g.ravel().astype(float)
            flat = leaf.data.ravel()
            coords = [("r", i) for i in range(flat.size)]
        fd = np.empty(len(coords))
        for k, (part, i) in enumerate(coords):
            step = eps if part == "r" else 1j * eps
            orig = flat[i]
            flat[i] = orig + step
            fp = eval_plain()
            flat[i] = orig - step
            fm = eval_plain()
            flat[i] = orig
            fd[k] = (fp - fm) / (2 * eps)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-8)
        err = np.abs(fd - analytic) / scale
        max_err = max(max_err, float(err.max(initial=0.0)))
    return max_err
