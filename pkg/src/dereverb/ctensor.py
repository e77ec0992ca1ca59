"""Complex tensors with reverse-mode automatic differentiation.

A ComplexTensor stores its real and imaginary parts as two real ndarrays of
identical shape.  Differentiation treats the two parts as independent real
variables, so every gradient is again a (real, imag) pair of real arrays.
Operations record onto a GradTape eagerly whenever at least one operand is
attached to a live tape; tensors never attached to a tape (constants, frozen
parameters) cost nothing extra.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

# Floor used in gradient denominators of magnitude-like ops.  Forward values
# are always computed without it; it only tames d|x|^p/dx for p < 1 near 0.
GRAD_EPS = 1e-8


class ComplexTensor:
    """Dense complex array stored as paired real/imaginary ndarrays."""

    __slots__ = ("real", "imag", "tape", "node_id")

    def __init__(self, real, imag=None, tape=None, node_id=None):
        if not isinstance(real, np.ndarray):
            real = np.asarray(real)
        if real.dtype.kind != "f":
            real = real.astype(np.float64)
        if imag is None:
            imag = np.zeros_like(real)
        else:
            if not isinstance(imag, np.ndarray):
                imag = np.asarray(imag)
            if imag.dtype.kind != "f":
                imag = imag.astype(real.dtype)
        if real.shape != imag.shape:
            raise ShapeError(
                f"real/imag shapes differ: {real.shape} vs {imag.shape}"
            )
        self.real = real
        self.imag = imag
        self.tape = tape
        self.node_id = node_id

    @classmethod
    def from_complex(cls, z):
        z = np.asarray(z, dtype=np.complex128)
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    def to_complex(self):
        return self.real + 1j * self.imag

    @property
    def shape(self):
        return self.real.shape

    @property
    def ndim(self):
        return self.real.ndim

    @property
    def size(self):
        return self.real.size

    @property
    def dtype(self):
        return self.real.dtype

    def copy(self):
        return ComplexTensor(self.real.copy(), self.imag.copy())

    def detach(self):
        return ComplexTensor(self.real, self.imag)

    def __repr__(self):
        tag = "" if self.node_id is None else f", node={self.node_id}"
        return f"ComplexTensor(shape={self.shape}{tag})"

    # Arithmetic sugar; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, c):
        if isinstance(c, ComplexTensor):
            return cmul(self, c)
        return scale(self, c)

    def __rmul__(self, c):
        return scale(self, c)

    def __matmul__(self, other):
        return matmul(self, other)


class TapeNode:
    __slots__ = ("op", "inputs", "vjps")

    def __init__(self, op, inputs, vjps):
        self.op = op
        self.inputs = inputs
        self.vjps = vjps


class GradTape:
    """Append-only record of operations for one backward pass.

    Nodes are stored in execution order, which is a topological order by
    construction (eager recording).  ``backward`` walks the record once in
    reverse and returns a map from node id to the (real, imag) gradient pair.
    """

    def __init__(self):
        self.nodes = []
        self._consumed = False

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, vjps):
        if self._consumed:
            raise ContractError("tape already consumed by backward()")
        self.nodes.append(TapeNode(op, tuple(inputs), tuple(vjps)))
        return len(self.nodes) - 1

    def watch(self, tensor, op="leaf"):
        """Attach ``tensor`` to this tape as a leaf (trainable) node."""
        tensor.tape = self
        tensor.node_id = self.record(op, (), ())
        return tensor

    def backward(self, loss):
        """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

        ``loss`` must be a real scalar recorded on this tape.  Returns a dict
        mapping node id to an ``(grad_real, grad_imag)`` pair with the same
        shapes as that node's output parts.  The tape is consumed afterwards.
        """
        if loss.tape is not self or loss.node_id is None:
            raise ContractError("loss is not a node on this tape")
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if np.any(loss.imag != 0.0):
            raise ContractError("loss must be real (imaginary part is nonzero)")
        self._consumed = True

        # third slot marks whether the arrays are owned (safe to += into);
        # vjp outputs may alias upstream buffers, so ownership is taken
        # lazily on the first accumulation instead of copying every pair
        grads = {
            loss.node_id: [np.ones_like(loss.real), np.zeros_like(loss.imag), True]
        }
        for nid in range(loss.node_id, -1, -1):
            entry = grads.get(nid)
            if entry is None:
                continue
            node = self.nodes[nid]
            for inp_id, vjp in zip(node.inputs, node.vjps):
                gr, gi = vjp(entry[0], entry[1])
                acc = grads.get(inp_id)
                if acc is None:
                    grads[inp_id] = [gr, gi, False]
                elif acc[2]:
                    acc[0] += gr
                    acc[1] += gi
                else:
                    acc[0] = acc[0] + gr
                    acc[1] = acc[1] + gi
                    acc[2] = True
        return {nid: (g[0], g[1]) for nid, g in grads.items()}


def backward(tape, loss):
    """Module-level alias for ``tape.backward(loss)``."""
    return tape.backward(loss)


# ---------------------------------------------------------------------------
# recording helpers
# ---------------------------------------------------------------------------


def _live_tape(tensors):
    tape = None
    for t in tensors:
        if isinstance(t, ComplexTensor) and t.tape is not None and t.node_id is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ContractError("operands belong to different tapes")
    return tape


def _emit(op, out_r, out_i, srcs):
    """Build the output tensor, recording a node if any source is taped.

    ``srcs`` is a list of ``(tensor, vjp)`` pairs; vjps for untaped sources
    are dropped (those operands are constants for this tape).
    """
    tape = _live_tape([t for t, _ in srcs])
    out = ComplexTensor(out_r, out_i)
    if tape is not None:
        ids, vjps = [], []
        for t, vjp in srcs:
            if t.tape is tape and t.node_id is not None:
                ids.append(t.node_id)
                vjps.append(vjp)
        out.tape = tape
        out.node_id = tape.record(op, ids, vjps)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _as_tensor(x):
    if isinstance(x, ComplexTensor):
        return x
    return ComplexTensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a, b):
    """Elementwise a + b with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    out_r = a.real + b.real
    out_i = a.imag + b.imag
    return _emit(
        "add",
        out_r,
        out_i,
        [
            (a, lambda gr, gi: (_unbroadcast(gr, a.shape), _unbroadcast(gi, a.shape))),
            (b, lambda gr, gi: (_unbroadcast(gr, b.shape), _unbroadcast(gi, b.shape))),
        ],
    )


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_r = a.real - b.real
    out_i = a.imag - b.imag
    return _emit(
        "sub",
        out_r,
        out_i,
        [
            (a, lambda gr, gi: (_unbroadcast(gr, a.shape), _unbroadcast(gi, a.shape))),
            (b, lambda gr, gi: (_unbroadcast(-gr, b.shape), _unbroadcast(-gi, b.shape))),
        ],
    )


def neg(a):
    return _emit("neg", -a.real, -a.imag, [(a, lambda gr, gi: (-gr, -gi))])


def scale(a, c):
    """Multiply by a python scalar (real or complex)."""
    cr = a.real.dtype.type(np.real(c))
    ci = a.real.dtype.type(np.imag(c))
    if ci == 0:
        out_r = cr * a.real
        out_i = cr * a.imag
        vjp = lambda gr, gi: (cr * gr, cr * gi)
    else:
        out_r = cr * a.real - ci * a.imag
        out_i = cr * a.imag + ci * a.real
        vjp = lambda gr, gi: (cr * gr + ci * gi, -ci * gr + cr * gi)
    return _emit("scale", out_r, out_i, [(a, vjp)])


def shift(a, c):
    """Add a python scalar constant (real or complex)."""
    cr = a.real.dtype.type(np.real(c))
    ci = a.real.dtype.type(np.imag(c))
    return _emit("shift", a.real + cr, a.imag + ci, [(a, lambda gr, gi: (gr, gi))])


def cmul(a, b):
    """Elementwise complex product, with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    out_r = ar * br - ai * bi
    out_i = ar * bi + ai * br

    def vjp_a(gr, gi):
        return (
            _unbroadcast(gr * br + gi * bi, a.shape),
            _unbroadcast(-gr * bi + gi * br, a.shape),
        )

    def vjp_b(gr, gi):
        return (
            _unbroadcast(gr * ar + gi * ai, b.shape),
            _unbroadcast(-gr * ai + gi * ar, b.shape),
        )

    return _emit("cmul", out_r, out_i, [(a, vjp_a), (b, vjp_b)])


def mul_split(a, b):
    """Per-part elementwise product: (a_r*b_r, a_i*b_i), with broadcasting.

    Treats the two parts as unrelated real arrays (GRU gating, packed-pair
    arithmetic), unlike ``cmul`` which is the true complex product.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    out_r = a.real * b.real
    out_i = a.imag * b.imag

    def vjp_a(gr, gi):
        return (
            _unbroadcast(gr * b.real, a.shape),
            _unbroadcast(gi * b.imag, a.shape),
        )

    def vjp_b(gr, gi):
        return (
            _unbroadcast(gr * a.real, b.shape),
            _unbroadcast(gi * a.imag, b.shape),
        )

    return _emit("mul_split", out_r, out_i, [(a, vjp_a), (b, vjp_b)])


def conj(a):
    return _emit("conj", a.real, -a.imag, [(a, lambda gr, gi: (gr, -gi))])


def crelu(a):
    """Rectify real and imaginary parts independently: max(0, .)."""
    mr = a.real > 0
    mi = a.imag > 0
    out_r = np.where(mr, a.real, 0.0)
    out_i = np.where(mi, a.imag, 0.0)
    return _emit(
        "crelu", out_r, out_i, [(a, lambda gr, gi: (gr * mr, gi * mi))]
    )


def sigmoid_split(a):
    sr = 1.0 / (1.0 + np.exp(-a.real))
    si = 1.0 / (1.0 + np.exp(-a.imag))
    return _emit(
        "sigmoid_split",
        sr,
        si,
        [(a, lambda gr, gi: (gr * sr * (1.0 - sr), gi * si * (1.0 - si)))],
    )


def tanh_split(a):
    tr = np.tanh(a.real)
    ti = np.tanh(a.imag)
    return _emit(
        "tanh_split",
        tr,
        ti,
        [(a, lambda gr, gi: (gr * (1.0 - tr * tr), gi * (1.0 - ti * ti)))],
    )


def magnitude(a):
    """Elementwise |a| as a real-valued tensor (imag part is zero)."""
    m = np.hypot(a.real, a.imag)
    safe = np.where(m == 0.0, 1.0, m)

    def vjp(gr, gi):
        return (gr * a.real / safe, gr * a.imag / safe)

    return _emit("magnitude", m, np.zeros_like(m), [(a, vjp)])


def pow_re(a, p):
    """Raise the real part to the power ``p`` (imag must be zero by use).

    Intended for nonnegative real-valued tensors (magnitudes, variances).
    For p < 1 the gradient denominator is floored at GRAD_EPS so exact zeros
    give a zero (sub)gradient instead of inf.
    """
    p = float(p)
    out = np.power(a.real, p)

    if p == 1.0:
        vjp = lambda gr, gi: (gr, np.zeros_like(gr))
    elif p >= 1.0:
        factor = p * np.power(a.real, p - 1.0)
        vjp = lambda gr, gi: (gr * factor, np.zeros_like(gr))
    else:
        base = np.maximum(a.real, GRAD_EPS)
        factor = np.where(a.real == 0.0, 0.0, p * np.power(base, p - 1.0))
        vjp = lambda gr, gi: (gr * factor, np.zeros_like(gr))
    return _emit("pow_re", out, np.zeros_like(out), [(a, vjp)])


def compress_mag(a, c):
    """Magnitude-compressed tensor |a|^c * exp(j*arg(a)); zero maps to zero.

    Equivalent to a * |a|^(c-1) with the 0/0 at the origin resolved to 0.
    """
    c = float(c)
    m = np.hypot(a.real, a.imag)
    safe = np.maximum(m, GRAD_EPS)
    f = np.where(m == 0.0, 0.0, np.power(np.where(m == 0.0, 1.0, m), c - 1.0))
    out_r = f * a.real
    out_i = f * a.imag
    # d|a|^(c-1)/d(part) = (c-1) m^(c-3) * part; floored denominators.
    k = np.where(m == 0.0, 0.0, (c - 1.0) * np.power(safe, c - 3.0))

    def vjp(gr, gi):
        kr = k * a.real
        ki = k * a.imag
        return (
            gr * (f + kr * a.real) + gi * ki * a.real,
            gr * kr * a.imag + gi * (f + ki * a.imag),
        )

    return _emit("compress_mag", out_r, out_i, [(a, vjp)])


# ---------------------------------------------------------------------------
# matrix ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Complex matrix product of rank-2 tensors [MxK] @ [KxN]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    out_r = ar @ br - ai @ bi
    out_i = ar @ bi + ai @ br

    def vjp_a(gr, gi):
        return (gr @ br.T + gi @ bi.T, -gr @ bi.T + gi @ br.T)

    def vjp_b(gr, gi):
        return (ar.T @ gr + ai.T @ gi, -ai.T @ gr + ar.T @ gi)

    return _emit("matmul", out_r, out_i, [(a, vjp_a), (b, vjp_b)])


def matmul_split(a, b):
    """Per-part matrix product: (a_r @ b_r, a_i @ b_i)."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul_split needs rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out_r = a.real @ b.real
    out_i = a.imag @ b.imag

    def vjp_a(gr, gi):
        return (gr @ b.real.T, gi @ b.imag.T)

    def vjp_b(gr, gi):
        return (a.real.T @ gr, a.imag.T @ gi)

    return _emit("matmul_split", out_r, out_i, [(a, vjp_a), (b, vjp_b)])


def hermitian_transpose(a):
    """Conjugate transpose of a rank-2 tensor."""
    if a.ndim != 2:
        raise ShapeError(f"hermitian_transpose needs a matrix, got shape {a.shape}")
    return _emit(
        "hermitian_transpose",
        a.real.T.copy(),
        -a.imag.T,
        [(a, lambda gr, gi: (gr.T, -gi.T))],
    )


def transpose(a):
    """Plain (non-conjugating) transpose of a rank-2 tensor."""
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit(
        "transpose",
        a.real.T.copy(),
        a.imag.T.copy(),
        [(a, lambda gr, gi: (gr.T, gi.T))],
    )


def softmax_rows(a):
    """Row-softmax of the real part along the last axis; imag output is zero.

    Uses per-row max subtraction; analytically identical, overflow-safe.
    """
    z = a.real - a.real.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(gr, gi):
        inner = (gr * s).sum(axis=-1, keepdims=True)
        return (s * (gr - inner), np.zeros_like(s))

    return _emit("softmax_rows", s, np.zeros_like(s), [(a, vjp)])


def softmax_rows_split(a):
    """Row-softmax applied to real and imaginary parts independently."""
    zr = a.real - a.real.max(axis=-1, keepdims=True)
    er = np.exp(zr)
    sr = er / er.sum(axis=-1, keepdims=True)
    zi = a.imag - a.imag.max(axis=-1, keepdims=True)
    ei = np.exp(zi)
    si = ei / ei.sum(axis=-1, keepdims=True)

    def vjp(gr, gi):
        inner_r = (gr * sr).sum(axis=-1, keepdims=True)
        inner_i = (gi * si).sum(axis=-1, keepdims=True)
        return (sr * (gr - inner_r), si * (gi - inner_i))

    return _emit("softmax_rows_split", sr, si, [(a, vjp)])


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a, shape):
    shape = tuple(shape)
    old = a.shape
    return _emit(
        "reshape",
        a.real.reshape(shape),
        a.imag.reshape(shape),
        [(a, lambda gr, gi: (gr.reshape(old), gi.reshape(old)))],
    )


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(
        "permute",
        np.ascontiguousarray(a.real.transpose(axes)),
        np.ascontiguousarray(a.imag.transpose(axes)),
        [(a, lambda gr, gi: (gr.transpose(inv), gi.transpose(inv)))],
    )


def concat(tensors, axis):
    tensors = list(tensors)
    out_r = np.concatenate([t.real for t in tensors], axis=axis)
    out_i = np.concatenate([t.imag for t in tensors], axis=axis)
    srcs = []
    start = 0
    for t in tensors:
        n = t.shape[axis]
        sl = [slice(None)] * out_r.ndim
        sl[axis] = slice(start, start + n)
        sl = tuple(sl)
        srcs.append((t, lambda gr, gi, sl=sl: (gr[sl], gi[sl])))
        start += n
    return _emit("concat", out_r, out_i, srcs)


def stack(tensors, axis=0):
    tensors = list(tensors)
    out_r = np.stack([t.real for t in tensors], axis=axis)
    out_i = np.stack([t.imag for t in tensors], axis=axis)
    srcs = []
    for k, t in enumerate(tensors):
        sl = [slice(None)] * out_r.ndim
        sl[axis] = k
        sl = tuple(sl)
        srcs.append((t, lambda gr, gi, sl=sl: (gr[sl], gi[sl])))
    return _emit("stack", out_r, out_i, srcs)


def index_axis(a, axis, i):
    """Select index ``i`` along ``axis`` (the axis is dropped)."""
    sl = [slice(None)] * a.ndim
    sl[axis] = i
    sl = tuple(sl)
    shape = a.shape

    def vjp(gr, gi):
        zr = np.zeros(shape, dtype=gr.dtype)
        zi = np.zeros(shape, dtype=gi.dtype)
        zr[sl] = gr
        zi[sl] = gi
        return (zr, zi)

    return _emit(
        "index_axis",
        np.ascontiguousarray(a.real[sl]),
        np.ascontiguousarray(a.imag[sl]),
        [(a, vjp)],
    )


def real_part(a):
    """Real part as a real-valued tensor (imag output is zero)."""
    return _emit(
        "real_part",
        a.real,
        np.zeros_like(a.real),
        [(a, lambda gr, gi: (gr, np.zeros_like(gr)))],
    )


def imag_part(a):
    """Imaginary part as a real-valued tensor (imag output is zero)."""
    return _emit(
        "imag_part",
        a.imag,
        np.zeros_like(a.imag),
        [(a, lambda gr, gi: (np.zeros_like(gr), gr))],
    )


def make_complex(re, im):
    """Assemble a complex tensor from two real-valued tensors."""
    if re.shape != im.shape:
        raise ShapeError(f"part shapes differ: {re.shape} vs {im.shape}")
    return _emit(
        "make_complex",
        re.real,
        im.real,
        [
            (re, lambda gr, gi: (gr, np.zeros_like(gr))),
            (im, lambda gr, gi: (gi, np.zeros_like(gi))),
        ],
    )


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def mean_axes(a, axes, keepdims=False):
    axes = tuple(axes)
    out_r = a.real.mean(axis=axes, keepdims=keepdims)
    out_i = a.imag.mean(axis=axes, keepdims=keepdims)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    shape = a.shape
    inv_n = 1.0 / n

    def vjp(gr, gi):
        if not keepdims:
            gr = np.expand_dims(gr, axes)
            gi = np.expand_dims(gi, axes)
        return (
            np.broadcast_to(gr * inv_n, shape).copy(),
            np.broadcast_to(gi * inv_n, shape).copy(),
        )

    return _emit("mean_axes", out_r, out_i, [(a, vjp)])


def sum_all(a):
    """Sum of all elements (complex scalar, rank-0)."""
    shape = a.shape

    def vjp(gr, gi):
        return (np.broadcast_to(gr, shape).copy(), np.broadcast_to(gi, shape).copy())

    return _emit("sum_all", np.asarray(a.real.sum()), np.asarray(a.imag.sum()), [(a, vjp)])


def sum_abs2(a):
    """Sum of squared moduli: sum(a_r^2 + a_i^2), a real scalar."""
    val = np.asarray((a.real * a.real).sum() + (a.imag * a.imag).sum())

    def vjp(gr, gi):
        return (2.0 * gr * a.real, 2.0 * gr * a.imag)

    return _emit("sum_abs2", val, np.zeros_like(val), [(a, vjp)])
