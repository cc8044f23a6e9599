"""Dense float64 grids with taped reverse-mode gradients.

The operator set is the closure of what the detection pipeline needs:
2-d cross-correlation, stride-k transposed convolution, element-wise
add/relu, a bidirectional tanh recurrence over feature-map columns,
smooth-L1, two-class softmax cross-entropy, plus the gather/reduce/pool
helpers used by the losses and the box-refinement head.

All values are float64 internally; narrowing to float32 happens only
when a model is serialized (see modelio).
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ConfigError, FusionShapeError, UsageError


class Grid:
    """N-d float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        # ascontiguousarray would promote 0-d scalars to 1-d, so guard by ndim
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() needs a single-element grid, got shape %r" % (self.shape,))
        return float(self.data.reshape(-1)[0])

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        tag = self.name or "grid"
        return "Grid(%s, shape=%r, requires_grad=%r)" % (tag, self.shape, self.requires_grad)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Grid:
    """Weight init: uniform(-k, k) with k = 1/sqrt(fan_in)."""
    if fan_in <= 0:
        raise ConfigError("fan_in must be positive, got %d" % fan_in)
    k = 1.0 / np.sqrt(float(fan_in))
    return Grid(rng.uniform(-k, k, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: str | None = None) -> Grid:
    return Grid(np.zeros(shape), requires_grad=True, name=name)


class TapeRecord:
    __slots__ = ("name", "inputs", "output", "backward_fn")

    def __init__(self, name, inputs, output, backward_fn):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of forward ops, replayed in reverse by backward()."""

    def __init__(self):
        self.records: list[TapeRecord] = []

    def record(self, name, inputs, output, backward_fn) -> None:
        self.records.append(TapeRecord(name, inputs, output, backward_fn))

    def __len__(self) -> int:
        return len(self.records)


_ACTIVE_TAPES: list[Tape] = []


@contextlib.contextmanager
def recording(tape: Tape | None = None):
    """Context manager that makes `tape` (or a fresh one) record ops."""
    tape = tape if tape is not None else Tape()
    _ACTIVE_TAPES.append(tape)
    try:
        yield tape
    finally:
        _ACTIVE_TAPES.pop()


def _tracked(inputs) -> bool:
    return bool(_ACTIVE_TAPES) and any(g.requires_grad for g in inputs)


def _emit(name, inputs, out_data, backward_fn) -> Grid:
    """Build the output grid and record the op when gradients are live."""
    tracked = _tracked(inputs)
    out = Grid(out_data, requires_grad=tracked)
    if tracked:
        _ACTIVE_TAPES[-1].record(name, inputs, out, backward_fn)
    return out


def backward(loss: Grid, tape: Tape) -> None:
    """Replay `tape` once, in reverse order, seeding d(loss)/d(loss) = 1."""
    if loss.data.size != 1:
        raise UsageError("backward() needs a scalar loss, got shape %r" % (loss.shape,))
    if not tape.records:
        raise UsageError("backward() before any recorded forward op")
    loss.ensure_grad().fill(0.0)
    loss.grad.reshape(-1)[0] = 1.0
    for rec in reversed(tape.records):
        if rec.output.grad is None:
            continue  # output never reached the loss
        rec.backward_fn(rec.output.grad)


def zero_grads(grids) -> None:
    for g in grids:
        g.zero_grad()


# ---------------------------------------------------------------------------
# element-wise ops


def add(a: Grid, b: Grid) -> Grid:
    if a.shape != b.shape:
        raise FusionShapeError("add() shape mismatch: %r vs %r" % (a.shape, b.shape))

    def bwd(g):
        if a.requires_grad:
            a.ensure_grad()
            a.grad += g
        if b.requires_grad:
            b.ensure_grad()
            b.grad += g

    return _emit("add", (a, b), a.data + b.data, bwd)


def sub(a: Grid, b: Grid) -> Grid:
    if a.shape != b.shape:
        raise FusionShapeError("sub() shape mismatch: %r vs %r" % (a.shape, b.shape))

    def bwd(g):
        if a.requires_grad:
            a.ensure_grad()
            a.grad += g
        if b.requires_grad:
            b.ensure_grad()
            b.grad -= g

    return _emit("sub", (a, b), a.data - b.data, bwd)


def mul(a: Grid, b: Grid) -> Grid:
    if a.shape != b.shape:
        raise FusionShapeError("mul() shape mismatch: %r vs %r" % (a.shape, b.shape))

    def bwd(g):
        if a.requires_grad:
            a.ensure_grad()
            a.grad += g * b.data
        if b.requires_grad:
            b.ensure_grad()
            b.grad += g * a.data

    return _emit("mul", (a, b), a.data * b.data, bwd)


def relu(x: Grid) -> Grid:
    mask = x.data > 0.0

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g * mask

    return _emit("relu", (x,), np.where(mask, x.data, 0.0), bwd)


def scale(x: Grid, c: float) -> Grid:
    c = float(c)

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g * c

    return _emit("scale", (x,), x.data * c, bwd)


def reshape(x: Grid, shape) -> Grid:
    shape = tuple(int(s) for s in shape)

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g.reshape(x.shape)

    return _emit("reshape", (x,), x.data.reshape(shape), bwd)


def take(x: Grid, indices) -> Grid:
    """Gather elements of the flattened grid; gradient scatter-adds back."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.size):
        raise ConfigError("take() index out of range for grid of size %d" % x.data.size)
    flat = x.data.reshape(-1)

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            np.add.at(x.grad.reshape(-1), idx.reshape(-1), g.reshape(-1))

    return _emit("take", (x,), flat[idx], bwd)


def reduce_sum(x: Grid) -> Grid:
    if x.data.size == 0:
        raise UsageError("reduce_sum() of an empty grid is undefined")

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g.reshape(())

    return _emit("reduce_sum", (x,), np.asarray(x.data.sum()), bwd)


def reduce_mean(x: Grid) -> Grid:
    n = x.data.size
    if n == 0:
        raise UsageError("reduce_mean() of an empty grid is undefined")

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g.reshape(()) / n

    return _emit("reduce_mean", (x,), np.asarray(x.data.mean()), bwd)


# ---------------------------------------------------------------------------
# convolution family


def conv2d(x: Grid, kernel: Grid, bias: Grid | None = None, stride: int = 1, pad: int = 0) -> Grid:
    """2-d cross-correlation.

    x: [N, C, H, W], kernel: [K, C, kh, kw], bias: [K] or None.
    Output height is floor((H + 2*pad - kh) / stride) + 1, same for width.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ConfigError("conv2d() expects 4-d input and kernel")
    n, c, h, w = x.shape
    k, ck, kh, kw = kernel.shape
    if ck != c:
        raise ConfigError("conv2d() channel mismatch: input has %d, kernel expects %d" % (c, ck))
    if stride < 1 or pad < 0:
        raise ConfigError("conv2d() needs stride >= 1 and pad >= 0")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise ConfigError("conv2d() kernel (%d, %d) larger than padded input (%d, %d)" % (kh, kw, hp, wp))
    if bias is not None and bias.shape != (k,):
        raise ConfigError("conv2d() bias shape %r does not match %d output channels" % (bias.shape, k))

    xp = x.data
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, ho, wo, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(k, c * kh * kw)
    out = cols @ wmat.T  # [N, L, K]
    out = out.transpose(0, 2, 1).reshape(n, k, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n, ho * wo, k)
        if kernel.requires_grad:
            kernel.ensure_grad()
            kernel.grad += np.einsum("nlk,nlc->kc", g2, cols).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            bias.ensure_grad()
            bias.grad += g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            x.ensure_grad()
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
            if pad:
                x.grad += dxp[:, :, pad:pad + h, pad:pad + w]
            else:
                x.grad += dxp

    return _emit("conv2d", inputs, out, bwd)


def transposed_conv2d(x: Grid, kernel: Grid, stride: int = 2) -> Grid:
    """Stride-k transposed convolution for 2x-style upsampling.

    x: [N, C, H, W], kernel: [C, K, s, s] with spatial extent equal to the
    stride, so the output is exactly [N, K, H*s, W*s] with no overlap.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ConfigError("transposed_conv2d() expects 4-d input and kernel")
    n, c, h, w = x.shape
    ck, k, sh, sw = kernel.shape
    if ck != c:
        raise ConfigError("transposed_conv2d() channel mismatch: input has %d, kernel expects %d" % (c, ck))
    if sh != stride or sw != stride:
        raise ConfigError(
            "transposed_conv2d() kernel spatial extent %r must equal the stride %d" % ((sh, sw), stride))

    out6 = np.einsum("ncij,ckab->nkiajb", x.data, kernel.data)
    out = out6.reshape(n, k, h * stride, w * stride)

    def bwd(g):
        g6 = g.reshape(n, k, h, stride, w, stride)
        if x.requires_grad:
            x.ensure_grad()
            x.grad += np.einsum("nkiajb,ckab->ncij", g6, kernel.data)
        if kernel.requires_grad:
            kernel.ensure_grad()
            kernel.grad += np.einsum("ncij,nkiajb->ckab", x.data, g6)

    return _emit("transposed_conv2d", (x, kernel), out, bwd)


# ---------------------------------------------------------------------------
# recurrence over feature-map columns


def birnn_width(x: Grid, wx_f: Grid, wh_f: Grid, b_f: Grid,
                wx_b: Grid, wh_b: Grid, b_b: Grid) -> Grid:
    """Bidirectional plain tanh RNN over the width axis.

    Every (sample, row) pair is an independent sequence whose steps are the
    W columns of x [N, C, H, W]. Forward and backward hidden states are
    concatenated on the channel axis: output is [N, 2*hidden, H, W].
    """
    if x.data.ndim != 4:
        raise ConfigError("birnn_width() expects a 4-d input")
    n, c, h, w = x.shape
    hid = wx_f.shape[1]
    for name, p, want in (("wx_f", wx_f, (c, hid)), ("wh_f", wh_f, (hid, hid)), ("b_f", b_f, (hid,)),
                          ("wx_b", wx_b, (c, hid)), ("wh_b", wh_b, (hid, hid)), ("b_b", b_b, (hid,))):
        if p.shape != want:
            raise ConfigError("birnn_width() %s has shape %r, expected %r" % (name, p.shape, want))

    b = n * h
    xs = np.ascontiguousarray(x.data.transpose(3, 0, 2, 1)).reshape(w, b, c)

    hf = np.zeros((w, b, hid))
    prev = np.zeros((b, hid))
    for t in range(w):
        prev = np.tanh(xs[t] @ wx_f.data + prev @ wh_f.data + b_f.data)
        hf[t] = prev
    hb = np.zeros((w, b, hid))
    prev = np.zeros((b, hid))
    for t in range(w - 1, -1, -1):
        prev = np.tanh(xs[t] @ wx_b.data + prev @ wh_b.data + b_b.data)
        hb[t] = prev

    out = np.concatenate([hf, hb], axis=2)  # [W, B, 2*hid]
    out = out.reshape(w, n, h, 2 * hid).transpose(1, 3, 2, 0)

    inputs = (x, wx_f, wh_f, b_f, wx_b, wh_b, b_b)

    def bwd(g):
        gseq = np.ascontiguousarray(g.transpose(3, 0, 2, 1)).reshape(w, b, 2 * hid)
        gf, gb = gseq[:, :, :hid], gseq[:, :, hid:]
        dxs = np.zeros((w, b, c)) if x.requires_grad else None

        def run(direction, gout, wx, wh, bb, hs):
            order = range(w - 1, -1, -1) if direction > 0 else range(w)
            dh_next = np.zeros((b, hid))
            for t in order:
                dh = gout[t] + dh_next
                dpre = dh * (1.0 - hs[t] ** 2)
                # the step before the first one has zero hidden state
                first = (t == 0) if direction > 0 else (t == w - 1)
                if wx.requires_grad:
                    wx.ensure_grad()
                    wx.grad += xs[t].T @ dpre
                if wh.requires_grad and not first:
                    wh.ensure_grad()
                    wh.grad += hs[t - direction].T @ dpre
                if bb.requires_grad:
                    bb.ensure_grad()
                    bb.grad += dpre.sum(axis=0)
                if dxs is not None:
                    dxs[t] += dpre @ wx.data.T
                dh_next = dpre @ wh.data.T

        run(+1, gf, wx_f, wh_f, b_f, hf)
        run(-1, gb, wx_b, wh_b, b_b, hb)
        if dxs is not None:
            x.ensure_grad()
            x.grad += dxs.reshape(w, n, h, c).transpose(1, 3, 2, 0)

    return _emit("birnn_width", inputs, out, bwd)


# ---------------------------------------------------------------------------
# losses


def smooth_l1(x):
    """Smooth-L1: 0.5*x^2 when |x| < 1, |x| - 0.5 otherwise.

    Accepts a Grid (taped, element-wise) or a plain float/ndarray.
    """
    if not isinstance(x, Grid):
        v = np.asarray(x, dtype=np.float64)
        out = np.where(np.abs(v) < 1.0, 0.5 * v * v, np.abs(v) - 0.5)
        return float(out) if np.isscalar(x) or out.ndim == 0 else out

    inner = np.abs(x.data) < 1.0
    out = np.where(inner, 0.5 * x.data * x.data, np.abs(x.data) - 0.5)

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g * np.where(inner, x.data, np.sign(x.data))

    return _emit("smooth_l1", (x,), out, bwd)


def softmax_cross_entropy(logits: Grid, labels) -> Grid:
    """Mean two-class cross-entropy with max-subtraction stabilisation.

    logits: [M, 2]; labels: int array of 0/1 with shape [M].
    """
    if logits.data.ndim != 2 or logits.shape[1] != 2:
        raise ConfigError("softmax_cross_entropy() expects [M, 2] logits, got %r" % (logits.shape,))
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    m = logits.shape[0]
    if lab.shape[0] != m:
        raise ConfigError("softmax_cross_entropy() got %d labels for %d rows" % (lab.shape[0], m))
    if m == 0:
        raise UsageError("softmax_cross_entropy() on an empty batch is undefined")
    if lab.min() < 0 or lab.max() > 1:
        raise ConfigError("softmax_cross_entropy() labels must be 0 or 1")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    prob = ez / ez.sum(axis=1, keepdims=True)
    nll = -np.log(prob[np.arange(m), lab])
    out = np.asarray(nll.mean())

    def bwd(g):
        if logits.requires_grad:
            logits.ensure_grad()
            d = prob.copy()
            d[np.arange(m), lab] -= 1.0
            logits.grad += g.reshape(()) * d / m

    return _emit("softmax_cross_entropy", (logits,), out, bwd)


# ---------------------------------------------------------------------------
# dense heads


def linear(x: Grid, w: Grid, b: Grid | None = None) -> Grid:
    """Affine map: x [B, F] @ w [F, O] (+ b [O])."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ConfigError("linear() shape mismatch: x %r vs w %r" % (x.shape, w.shape))
    if b is not None and b.shape != (w.shape[1],):
        raise ConfigError("linear() bias shape %r does not match %d outputs" % (b.shape, w.shape[1]))
    out = x.data @ w.data
    if b is not None:
        out = out + b.data[None, :]
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            x.grad += g @ w.data.T
        if w.requires_grad:
            w.ensure_grad()
            w.grad += x.data.T @ g
        if b is not None and b.requires_grad:
            b.ensure_grad()
            b.grad += g.sum(axis=0)

    return _emit("linear", inputs, out, bwd)


def region_max_pool(x: Grid, cells: tuple[int, int, int, int], bins: int = 4) -> Grid:
    """Max-pool a cell-aligned region of x [1, C, H, W] into bins x bins.

    `cells` is (x0, y0, x1, y1) in whole feature cells, half-open. Each bin
    covers an integer sub-range of the region (never empty; small regions
    reuse cells). Output is [1, C, bins, bins].
    """
    if x.data.ndim != 4 or x.shape[0] != 1:
        raise ConfigError("region_max_pool() expects a [1, C, H, W] grid")
    _, c, h, w = x.shape
    x0, y0, x1, y1 = (int(v) for v in cells)
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ConfigError("region_max_pool() cells %r outside grid %r" % (cells, (h, w)))
    lh, lw = y1 - y0, x1 - x0

    out = np.zeros((1, c, bins, bins))
    arg_r = np.zeros((c, bins, bins), dtype=np.int64)
    arg_c = np.zeros((c, bins, bins), dtype=np.int64)
    for bi in range(bins):
        r0 = y0 + (bi * lh) // bins
        r1 = max(r0 + 1, y0 + ((bi + 1) * lh) // bins)
        for bj in range(bins):
            c0 = x0 + (bj * lw) // bins
            c1 = max(c0 + 1, x0 + ((bj + 1) * lw) // bins)
            patch = x.data[0, :, r0:r1, c0:c1].reshape(c, -1)
            flat = np.argmax(patch, axis=1)
            rr, cc = np.unravel_index(flat, (r1 - r0, c1 - c0))
            out[0, :, bi, bj] = patch[np.arange(c), flat]
            arg_r[:, bi, bj] = r0 + rr
            arg_c[:, bi, bj] = c0 + cc

    def bwd(g):
        if x.requires_grad:
            x.ensure_grad()
            chan = np.broadcast_to(np.arange(c)[:, None, None], (c, bins, bins))
            np.add.at(x.grad, (0, chan.reshape(-1), arg_r.reshape(-1), arg_c.reshape(-1)), g[0].reshape(-1))

    return _emit("region_max_pool", (x,), out, bwd)
