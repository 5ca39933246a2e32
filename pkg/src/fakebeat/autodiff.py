"""Dense-tensor reverse-mode autodiff.

Exactly the op set the attention/classifier stack needs: conv2d, batch norm,
LSTM step, pooling, dense algebra, two cross-entropy losses, plus the Adam
optimizer and a finite-difference gradient checker. No broadcasting beyond
the documented bias/scale cases, no GPU, no graph rewriting.

Arrays are plain numpy. Training code uses float32; the gradient checker is
meant to be run on float64 tensors so central differences stay meaningful.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class Tensor:
    """An n-d array with an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar root."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(data, parents, backward):
    """Wrap an op result; the closure is kept only if a parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / shape ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(a, c):
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _result(a.data * c, (a,), backward)


def add_bias(x, b):
    """Add a per-channel bias along axis 1 of x ((B,C), (B,C,L) or (B,C,H,W))."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"add_bias: bias {b.shape} does not match axis 1 of {x.shape}")
    bshape = (1, b.data.shape[0]) + (1,) * (x.data.ndim - 2)
    reduce_axes = tuple(i for i in range(x.data.ndim) if i != 1)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=reduce_axes))

    return _result(x.data + b.data.reshape(bshape), (x, b), backward)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward)


def reshape(x, shape):
    x = _as_tensor(x)
    old = x.data.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(old))

    return _result(x.data.reshape(shape), (x,), backward)


def transpose(x, axes):
    x = _as_tensor(x)
    inv = np.argsort(axes)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.transpose(inv))

    return _result(x.data.transpose(axes), (x,), backward)


def slice_axis1(x, start, stop):
    """x[:, start:stop]; gradient zero-pads the complement."""
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            x._accumulate(full)

    return _result(x.data[:, start:stop], (x,), backward)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reduce_sum(x):
    x = _as_tensor(x)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, g))

    return _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)


def reduce_mean(x, axes):
    """Mean over the given axes (kept deterministic: numpy sum order)."""
    x = _as_tensor(x)
    axes = tuple(axes)
    n = int(np.prod([x.data.shape[a] for a in axes]))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axes) / n, x.data.shape))

    return _result(x.data.mean(axis=axes), (x,), backward)


def reduce_max(x, axis):
    """Max over one axis; gradient flows to the first argmax (ties broken low)."""
    x = _as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            x._accumulate(full)

    return _result(out, (x,), backward)


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _result(x.data * mask, (x,), backward)


def sigmoid(x):
    x = _as_tensor(x)
    y = expit(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * y * (1.0 - y))

    return _result(y, (x,), backward)


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - y * y))

    return _result(y, (x,), backward)


# ---------------------------------------------------------------------------
# convolution / pooling


def _im2col(x, kh, kw, stride, ph, pw):
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    b, c, h, w = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (b, c, ho, wo, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3)
    )
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(gcols, xshape, kh, kw, stride, ph, pw, ho, wo):
    b, c, h, w = xshape
    gx = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=gcols.dtype)
    g6 = gcols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += g6[..., i, j]
    return gx[:, :, ph : ph + h, pw : pw + w]


def conv2d(x, kernels, stride=1, padding=(0, 0)):
    """Cross-correlation of x (Cin,H,W or B,Cin,H,W) with kernels (Cout,Cin,kh,kw).

    Output spatial size is (H + 2*pad - k) // stride + 1 per axis.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.data.ndim != 4:
        raise ValueError("conv2d expects (B,Cin,H,W) input and (Cout,Cin,kh,kw) kernels")
    co, ci, kh, kw = kernels.data.shape
    if xd.shape[1] != ci:
        raise ValueError(f"conv2d: input channels {xd.shape[1]} != kernel channels {ci}")
    ph, pw = padding
    if xd.shape[2] + 2 * ph < kh or xd.shape[3] + 2 * pw < kw:
        raise ValueError("conv2d: kernel larger than padded input")
    cols, ho, wo = _im2col(xd, kh, kw, stride, ph, pw)
    kmat = kernels.data.reshape(co, ci * kh * kw)
    out = (cols @ kmat.T).transpose(0, 2, 1).reshape(-1, co, ho, wo)
    if squeeze:
        out = out[0]

    def backward(g):
        gb = g[None] if squeeze else g
        gmat = gb.reshape(-1, co, ho * wo).transpose(0, 2, 1)
        if kernels.requires_grad:
            gk = np.tensordot(gmat, cols, axes=([0, 1], [0, 1]))
            kernels._accumulate(gk.reshape(co, ci, kh, kw))
        if x.requires_grad:
            gcols = gmat @ kmat
            gx = _col2im(gcols, xd.shape, kh, kw, stride, ph, pw, ho, wo)
            x._accumulate(gx[0] if squeeze else gx)

    return _result(out, (x, kernels), backward)


def max_pool2d(x, size):
    """Non-overlapping size x size max pool; spatial dims must divide evenly.

    Within a window the gradient goes to the first maximal element.
    """
    x = _as_tensor(x)
    b, c, h, w = x.data.shape
    if h % size or w % size:
        raise ValueError(f"max_pool2d: {h}x{w} not divisible by {size}")
    ho, wo = h // size, w // size
    win = x.data.reshape(b, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, size * size)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        if x.requires_grad:
            gwin = np.zeros_like(win)
            np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
            gx = gwin.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
            x._accumulate(gx)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------------------
# batch norm


@dataclass
class RunningStats:
    """Per-channel running mean/var for batch-norm eval mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def create(cls, channels, dtype=np.float32, momentum=0.1):
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype), momentum)


def batch_norm(x, gamma, beta, running, eps=1e-5, train=True):
    """Normalize per channel (axis 1) over all other axes.

    Train mode uses biased batch statistics and updates the running stats;
    eval mode is a fixed affine map from the running stats.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.data.shape[1]
    axes = tuple(i for i in range(x.data.ndim) if i != 1)
    cshape = (1, c) + (1,) * (x.data.ndim - 2)
    gview = gamma.data.reshape(cshape)

    if train:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running.mean += running.momentum * (mu.astype(running.mean.dtype) - running.mean)
        running.var += running.momentum * (var.astype(running.var.dtype) - running.var)
    else:
        mu = running.mean.astype(x.data.dtype)
        var = running.var.astype(x.data.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(cshape)) * inv.reshape(cshape)
    out = xhat * gview + beta.data.reshape(cshape)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            if train:
                gm = g.mean(axis=axes).reshape(cshape)
                gxm = (g * xhat).mean(axis=axes).reshape(cshape)
                gx = gview * inv.reshape(cshape) * (g - gm - xhat * gxm)
            else:
                gx = g * gview * inv.reshape(cshape)
            x._accumulate(gx)

    return _result(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits, labels):
    """Cross entropy of softmax(logits) against integer labels.

    logits (K,) with a scalar label gives the single-example loss
    -log softmax(logits)[label]; logits (B,K) with labels (B,) gives the
    batch mean. Gradient is softmax - one_hot (scaled by 1/B for the mean).
    """
    logits = _as_tensor(logits)
    single = logits.data.ndim == 1
    z = logits.data[None] if single else logits.data
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, k = z.shape
    zs = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(zs).sum(axis=1))
    loss = (logsum - zs[np.arange(b), lab]).mean()
    probs = np.exp(zs) / np.exp(zs).sum(axis=1, keepdims=True)

    def backward(g):
        if logits.requires_grad:
            gz = probs.copy()
            gz[np.arange(b), lab] -= 1.0
            gz *= g / b
            logits._accumulate(gz[0] if single else gz)

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


def sigmoid_cross_entropy(logits, labels):
    """Mean binary cross entropy of sigmoid(logits) against 0/1 labels."""
    logits = _as_tensor(logits)
    z = logits.data.reshape(-1)
    y = np.asarray(labels, dtype=z.dtype).reshape(-1)
    if z.shape != y.shape:
        raise ValueError("sigmoid_cross_entropy: logits/labels length mismatch")
    # stable: max(z,0) - z*y + log(1 + exp(-|z|))
    loss = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    p = expit(z)

    def backward(g):
        if logits.requires_grad:
            logits._accumulate(((p - y) * (g / z.size)).reshape(logits.data.shape))

    return _result(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# LSTM step


def lstm_step(x_t, h_prev, c_prev, wx, wh, b):
    """One gated-recurrence step.

    x_t (B,D), h_prev/c_prev (B,H); wx (D,4H), wh (H,4H), b (4H,) with gate
    order [input, forget, candidate, output]. Returns (h_t, c_t).
    """
    hdim = h_prev.data.shape[1] if isinstance(h_prev, Tensor) else h_prev.shape[1]
    z = add_bias(add(matmul(x_t, wx), matmul(h_prev, wh)), b)
    gi = sigmoid(slice_axis1(z, 0, hdim))
    gf = sigmoid(slice_axis1(z, hdim, 2 * hdim))
    gc = tanh(slice_axis1(z, 2 * hdim, 3 * hdim))
    go = sigmoid(slice_axis1(z, 3 * hdim, 4 * hdim))
    c_t = add(mul(gf, c_prev), mul(gi, gc))
    h_t = mul(go, tanh(c_t))
    return h_t, c_t


# ---------------------------------------------------------------------------
# attention scaling


def attention_scale(x, t, s):
    """x (B,T,N,C) scaled by the rank-1 weights t (B,T) x s (B,N).

    Computes (t[b,i] * s[b,n]) * x[b,i,n,c], i.e. the outer-product weight is
    formed first, matching the materialized-matrix evaluation bit for bit.
    """
    x, t, s = _as_tensor(x), _as_tensor(t), _as_tensor(s)
    bsz, tlen, nblk, _ = x.data.shape
    if t.data.shape != (bsz, tlen) or s.data.shape != (bsz, nblk):
        raise ValueError("attention_scale: dimension mismatch")
    w = t.data[:, :, None] * s.data[:, None, :]
    out = x.data * w[..., None]

    def backward(g):
        gx_w = g * x.data
        if t.requires_grad:
            t._accumulate(np.einsum("binc,bn->bi", gx_w, s.data))
        if s.requires_grad:
            s._accumulate(np.einsum("binc,bi->bn", gx_w, t.data))
        if x.requires_grad:
            x._accumulate(g * w[..., None])

    return _result(out, (x, t, s), backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments plus hyperparameters (decoupled weight decay)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply decoupled weight decay then one bias-corrected Adam update.

    params is a dict name -> Tensor (updated in place), grads a dict
    name -> array. Returns (params, state).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, inputs, h=1e-4, max_coords=None, seed=0, refine=2):
    """Max relative error between reverse-mode and central-difference grads.

    f maps the input Tensors to a scalar Tensor. Inputs should be float64 for
    the differences to resolve below the default tolerances. When max_coords
    is given, at most that many coordinates per tensor are probed (chosen by
    a seeded rng); otherwise every coordinate is checked. Relative error is
    |a - n| / max(|a|, |n|, 1e-8).

    A central difference whose interval straddles a relu/max kink says nothing
    about the gradient at the point itself, so a coordinate whose error
    exceeds 1e-6 is re-probed at h/4 up to `refine` times and the smallest
    error wins: kink artifacts collapse under a shrinking step while a real
    gradient defect persists at every step.
    """
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    out = f(*inputs)
    out.backward()
    analytic = [np.array(t.grad, dtype=np.float64, copy=True) for t in inputs]
    rng = np.random.default_rng(seed)

    def probe(t, i, a_i, step):
        orig = t.data.flat[i]
        t.data.flat[i] = orig + step
        fp = float(f(*inputs).data)
        t.data.flat[i] = orig - step
        fm = float(f(*inputs).data)
        t.data.flat[i] = orig
        num = (fp - fm) / (2.0 * step)
        return abs(a_i - num) / max(abs(a_i), abs(num), 1e-8)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        n_coords = t.data.size
        if max_coords is not None and n_coords > max_coords:
            coords = np.sort(rng.choice(n_coords, size=max_coords, replace=False))
        else:
            coords = range(n_coords)
        for i in coords:
            err = probe(t, i, a.flat[i], h)
            step = h
            for _ in range(refine):
                if err <= 1e-6:
                    break
                step /= 4.0
                err = min(err, probe(t, i, a.flat[i], step))
            worst = max(worst, err)
    return worst
