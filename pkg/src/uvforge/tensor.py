"""Dense float tensors with a reverse-mode autodiff tape.

Values are stored as row-major numpy arrays, float32 by default; float64 is
supported for shadow-mode gradient verification. Operations are pure
functions over immutable inputs. When a Tape is active (``with Tape() as
tape:``) every op involving a grad-requiring tensor appends one node to the
tape; ``tape.backward(loss)`` walks the nodes once, in reverse creation
order (a topological order by construction), accumulating gradients into
``Tensor.grad``.

Every op output is checked for NaN/Inf and raises InvariantError on the
first non-finite value; disable via ``set_finite_checks(False)`` only for
profiling.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InvariantError

DEFAULT_DTYPE = np.float32

_FINITE_CHECKS = True
_TAPE_STACK: list["Tape"] = []


def set_finite_checks(enabled):
    """Toggle post-op NaN/Inf validation; returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def _check_finite(arr, op_name):
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise InvariantError(f"{op_name}: produced non-finite values")


class Tensor:
    """Dense n-d float array, optionally tracking a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        _check_finite(self.data, "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g
        if self.grad.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {self.grad.shape} != value shape {self.data.shape}"
            )

    def detach(self):
        return Tensor(self.data, requires_grad=False, dtype=self.dtype)

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        grad = "grad" if self.requires_grad else "const"
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, {grad})"

    # light operator sugar; the module-level functions are the real API
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Append-only record of op nodes; reverse order is topological."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, op, inputs, output, backward):
        self.nodes.append(_Node(op, inputs, output, backward))

    def backward(self, root, seed=None):
        """Accumulate d(root)/d(leaf) into every grad-requiring leaf.

        ``root`` must be scalar unless an explicit ``seed`` gradient of the
        same shape is given. Each node is visited exactly once.
        """
        if seed is None:
            if root.size != 1:
                raise DimensionError("backward root must be scalar (or pass seed=)")
            seed = np.ones_like(root.data)
        grads = {id(root): np.asarray(seed, dtype=root.dtype)}
        for node in reversed(self.nodes):
            gout = grads.pop(id(node.output), None)
            if gout is None:
                continue
            gins = node.backward(gout)
            for tensor, g in zip(node.inputs, gins):
                if g is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] += g
                else:
                    grads[key] = np.array(g, copy=True)
        # what is left in the dict belongs to leaves (no producing node on tape)
        by_id = {}
        for node in self.nodes:
            for tensor in node.inputs:
                by_id[id(tensor)] = tensor
        by_id[id(root)] = root
        for key, g in grads.items():
            leaf = by_id.get(key)
            if leaf is not None and leaf.requires_grad:
                leaf.accumulate_grad(g)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _wrap(data, op, inputs, backward):
    """Build the op output, recording a tape node when gradients are needed."""
    _check_finite(data, op)
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    if needs:
        tape.record(op, inputs, out, backward)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return _wrap(a.data + b.data, "add", [a, b], lambda g: (g, g))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _wrap(a.data - b.data, "sub", [a, b], lambda g: (g, -g))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _wrap(ad * bd, "mul", [a, b], lambda g: (g * bd, g * ad))


def scale(x, s):
    x = _as_tensor(x)
    s = float(s)
    return _wrap(x.data * np.array(s, dtype=x.dtype), "scale", [x], lambda g: (g * s,))


def mul_mask_hw(x, mask):
    """[C,H,W] times a constant boolean [H,W] mask broadcast over channels."""
    x = _as_tensor(x)
    if x.data.ndim != 3 or mask.shape != x.shape[1:]:
        raise DimensionError(f"mul_mask_hw: {x.shape} vs mask {mask.shape}")
    m = mask.astype(x.dtype)
    return _wrap(x.data * m, "mul_mask_hw", [x], lambda g: (g * m,))


def add_bias(x, b):
    """x[..., C] + b[C], broadcasting over all leading axes."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: {x.shape} vs bias {b.shape}")
    lead = tuple(range(x.data.ndim - 1))
    return _wrap(x.data + b.data, "add_bias", [x, b], lambda g: (g, g.sum(axis=lead)))


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    return _wrap(np.where(mask, x.data, 0), "relu", [x], lambda g: (g * mask,))


def silu(x):
    x = _as_tensor(x)
    # branch on sign so exp never sees a large positive argument
    pos = x.data >= 0
    e = np.exp(np.where(pos, -x.data, x.data))
    sig = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
    out = x.data * sig
    # d/dx x*sig(x) = sig * (1 + x * (1 - sig))
    return _wrap(out, "silu", [x], lambda g: (g * sig * (1.0 + x.data * (1.0 - sig)),))


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.shape
    data = x.data.reshape(shape)
    return _wrap(data, "reshape", [x], lambda g: (g.reshape(old),))


def transpose(x, axes):
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _wrap(
        np.ascontiguousarray(x.data.transpose(axes)),
        "transpose",
        [x],
        lambda g: (g.transpose(inv),),
    )


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _wrap(
        np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, backward
    )


def tsum(x):
    x = _as_tensor(x)
    shape = x.shape
    return _wrap(
        np.asarray(x.data.sum(), dtype=x.dtype),
        "sum",
        [x],
        lambda g: (np.broadcast_to(g, shape).astype(x.dtype, copy=True),),
    )


def tmean(x):
    return scale(tsum(x), 1.0 / x.size)


# ---------------------------------------------------------------------------
# matmul / softmax


def matmul(a, b):
    """2-d matrix product or 3-d batched product with a shared batch axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul: inner dims {ad.shape} x {bd.shape}")
        return _wrap(
            ad @ bd, "matmul", [a, b], lambda g: (g @ bd.T, ad.T @ g)
        )
    if ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise DimensionError(f"matmul: batched dims {ad.shape} x {bd.shape}")
        return _wrap(
            np.matmul(ad, bd),
            "matmul",
            [a, b],
            lambda g: (
                np.matmul(g, bd.transpose(0, 2, 1)),
                np.matmul(ad.transpose(0, 2, 1), g),
            ),
        )
    raise DimensionError(f"matmul: unsupported ranks {ad.ndim} x {bd.ndim}")


def softmax_lastdim(x):
    """Row softmax over the last axis, shifted by the row max for stability."""
    x = _as_tensor(x)
    if x.data.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError("softmax_lastdim: needs a non-empty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _wrap(y, "softmax_lastdim", [x], backward)


# ---------------------------------------------------------------------------
# spatial ops on [C, H, W] maps


def conv2d(x, w, b=None, stride=1, pad=0):
    """Cross-correlation of x[C,H,W] with w[O,C,k,k], zero padding."""
    x, w = _as_tensor(x), _as_tensor(w)
    if b is not None:
        b = _as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: need x[C,H,W], w[O,C,k,k]; got {x.shape}, {w.shape}")
    C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise DimensionError(f"conv2d: input channels {C} != kernel channels {Cw}")
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    k, s, p = kh, int(stride), int(pad)
    Ho = (H + 2 * p - k) // s + 1
    Wo = (W + 2 * p - k) // s + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d: empty output for input {x.shape}, k={k}, stride={s}")

    if p:
        xp = np.zeros((C, H + 2 * p, W + 2 * p), dtype=x.dtype)
        xp[:, p : p + H, p : p + W] = x.data
    else:
        xp = x.data
    if k == 1:
        cols = xp[:, ::s, ::s].reshape(C, Ho * Wo).T
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        cols = win[:, ::s, ::s].transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, C * k * k)
    w2 = w.data.reshape(O, C * k * k)
    out = (cols @ w2.T).T.reshape(O, Ho, Wo)
    if b is not None:
        if b.shape != (O,):
            raise DimensionError(f"conv2d: bias shape {b.shape} != ({O},)")
        out = out + b.data[:, None, None]

    def backward(g):
        gm = g.reshape(O, Ho * Wo).T
        dw = (gm.T @ cols).reshape(O, C, k, k)
        dcols = gm @ w2
        dxp = np.zeros_like(xp)
        if k == 1:
            dxp[:, ::s, ::s] += dcols.T.reshape(C, Ho, Wo)
        else:
            d5 = dcols.reshape(Ho, Wo, C, k, k)
            for ky in range(k):
                for kx in range(k):
                    dxp[:, ky : ky + s * Ho : s, kx : kx + s * Wo : s] += d5[
                        :, :, :, ky, kx
                    ].transpose(2, 0, 1)
        dx = dxp[:, p : p + H, p : p + W] if p else dxp
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(1, 2))

    inputs = [x, w] if b is None else [x, w, b]
    return _wrap(np.ascontiguousarray(out), "conv2d", inputs, backward)


def pixel_unshuffle(x, r):
    """[C,H,W] -> [C*r*r, H/r, W/r]; out channel index = c*r*r + dy*r + dx."""
    x = _as_tensor(x)
    C, H, W = x.shape
    r = int(r)
    if H % r or W % r:
        raise DimensionError(f"pixel_unshuffle: {H}x{W} not divisible by r={r}")
    data = (
        x.data.reshape(C, H // r, r, W // r, r)
        .transpose(0, 2, 4, 1, 3)
        .reshape(C * r * r, H // r, W // r)
    )

    def backward(g):
        return (
            np.ascontiguousarray(
                g.reshape(C, r, r, H // r, W // r)
                .transpose(0, 3, 1, 4, 2)
                .reshape(C, H, W)
            ),
        )

    return _wrap(np.ascontiguousarray(data), "pixel_unshuffle", [x], backward)


def pixel_shuffle(x, r):
    """Exact inverse of pixel_unshuffle: [C*r*r, H, W] -> [C, H*r, W*r]."""
    x = _as_tensor(x)
    Crr, H, W = x.shape
    r = int(r)
    if Crr % (r * r):
        raise DimensionError(f"pixel_shuffle: {Crr} channels not divisible by r*r={r * r}")
    C = Crr // (r * r)
    data = (
        x.data.reshape(C, r, r, H, W).transpose(0, 3, 1, 4, 2).reshape(C, H * r, W * r)
    )

    def backward(g):
        return (
            np.ascontiguousarray(
                g.reshape(C, H, r, W, r).transpose(0, 2, 4, 1, 3).reshape(Crr, H, W)
            ),
        )

    return _wrap(np.ascontiguousarray(data), "pixel_shuffle", [x], backward)


def upsample_nearest(x, r):
    """[C,H,W] -> [C, H*r, W*r] by pixel replication."""
    x = _as_tensor(x)
    C, H, W = x.shape
    r = int(r)
    data = np.repeat(np.repeat(x.data, r, axis=1), r, axis=2)

    def backward(g):
        return (g.reshape(C, H, r, W, r).sum(axis=(2, 4)),)

    return _wrap(data, "upsample_nearest", [x], backward)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam over a fixed parameter list; state is checkpointable."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# finite-difference gradient checking


def gradcheck(f, inputs, h=None, max_coords=64, rng=None):
    """Compare tape gradients of scalar f(*inputs) against central differences.

    Returns the max relative error over the sampled coordinates of every
    grad-requiring input; relative to the largest gradient magnitude seen.
    In float32 use the default h=1e-3; float64 verification uses h=1e-6.
    """
    inputs = list(inputs)
    dtype = inputs[0].dtype
    if h is None:
        h = 1e-3 if dtype == np.float32 else 1e-6
    rng = rng or np.random.default_rng(0)

    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = f(*inputs)
        if out.size != 1:
            raise DimensionError("gradcheck: f must return a scalar")
        tape.backward(out)

    worst_abs = 0.0
    scale_ref = 1e-6
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        idx = (
            np.arange(n)
            if n <= max_coords
            else rng.choice(n, size=max_coords, replace=False)
        )
        for i in idx:
            orig = flat[i]
            step = h * max(1.0, abs(float(orig)))
            flat[i] = orig + step
            f_plus = float(f(*inputs).data)
            flat[i] = orig - step
            f_minus = float(f(*inputs).data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            an = float(analytic.reshape(-1)[i])
            worst_abs = max(worst_abs, abs(fd - an))
            scale_ref = max(scale_ref, abs(fd), abs(an))
    return worst_abs / scale_ref
