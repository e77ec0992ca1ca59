"""Complex-valued neural layers built on the autodiff tape.

Layout conventions:
  * feature maps are channels-last, [T, F, C] or [B, T, F, C], where C counts
    COMPLEX channels (the stacked real/imag channel count is 2C);
  * conv kernels store the complex weight as a ComplexTensor of shape
    [C_out, C_in, K_t, K_f]; its ``.real``/``.imag`` arrays are the two real
    kernels of the complex product
        y = (A*x_r - B*x_i) + j(A*x_i + B*x_r)
    with ``*`` a strided, padded 2-D cross-correlation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ctensor as ct
from .ctensor import ComplexTensor, _emit
from .errors import ContractError, ShapeError


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ShapeError(f"expected a scalar or pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------


def unitary_init(shape, rng, dtype=np.float64):
    """Semi-unitary complex initialization: W reshaped to a matrix has
    orthonormal complex rows (or columns, when rows outnumber columns).

    ``shape`` is either (rows, cols) or a conv-kernel shape
    (c_out, c_in, k_t, k_f), which is flattened to (c_out, c_in*k_t*k_f).
    Deterministic for a fixed generator state.  Returns (real, imag).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) == 2:
        m, n = shape
    elif len(shape) == 4:
        m, n = shape[0], shape[1] * shape[2] * shape[3]
    else:
        raise ShapeError(f"unitary_init expects rank 2 or 4, got {shape}")

    rows, cols = (m, n) if m >= n else (n, m)
    g = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    q = q * np.where(d == 0, 1.0, d / np.abs(d)).conj()
    w = q if m >= n else q.T
    w = w.reshape(shape)
    return (
        np.ascontiguousarray(w.real, dtype=dtype),
        np.ascontiguousarray(w.imag, dtype=dtype),
    )


def orthogonal_pair_init(shape, rng, dtype=np.float64):
    """Two independent real (semi-)orthogonal matrices, packed as a pair.

    Used for per-part weights (packed-pair layers) where the real and imag
    arrays act on the real and imaginary branches independently.
    """
    parts = []
    for _ in range(2):
        m, n = shape
        rows, cols = (m, n) if m >= n else (n, m)
        g = rng.standard_normal((rows, cols))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.where(np.diagonal(r) == 0, 1.0, np.diagonal(r)))
        w = q if m >= n else q.T
        parts.append(np.ascontiguousarray(w, dtype=dtype))
    return parts[0], parts[1]


# ---------------------------------------------------------------------------
# real correlation kernels (shared by conv and its transpose)
# ---------------------------------------------------------------------------


def _pad_tf(x, pt, pf):
    if pt == 0 and pf == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pt), (pf, pf), (0, 0)))


def _im2col(xp, kt, kf, st, sf):
    """Strided patch matrix: [B,Tp,Fp,C] -> ([B*To*Fo, C*kt*kf], (B,To,Fo)).

    Column layout is (C, kt, kf) fastest-last, matching kernel.reshape(O, -1).
    """
    v = sliding_window_view(xp, (kt, kf), axis=(1, 2))[:, ::st, ::sf]
    b, to, fo = v.shape[:3]
    cols = np.ascontiguousarray(v).reshape(b * to * fo, -1)
    return cols, (b, to, fo)


def _col2im(gcols, dims, kt, kf, st, sf, padded_shape):
    """Adjoint of :func:`_im2col`: scatter-add columns back into the input."""
    b, to, fo = dims
    c = padded_shape[-1]
    g6 = gcols.reshape(b, to, fo, c, kt, kf)
    gx = np.zeros(padded_shape, dtype=gcols.dtype)
    for a in range(kt):
        for bb in range(kf):
            gx[:, a : a + st * to : st, bb : bb + sf * fo : sf, :] += g6[..., a, bb]
    return gx


def _conv_out_dim(n, k, s, p):
    return (n + 2 * p - k) // s + 1


# ---------------------------------------------------------------------------
# complex convolution ops
# ---------------------------------------------------------------------------


def complex_conv2d(x, w, stride=1, padding=0):
    """Complex 2-D convolution of a [.., T, F, C_in] map by [C_out, C_in, kt, kf].

    Accepts rank-3 (single map) or rank-4 (batched) input; output spatial
    dims follow the standard (n + 2p - k)//s + 1 rule.
    """
    st, sf = _pair(stride)
    pt, pf = _pair(padding)
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv input must be rank 3 or 4, got {x.shape}")
    squeeze = x.ndim == 3
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[-1]} complex channels, "
            f"kernel expects {w.shape[1]}"
        )
    kt, kf = w.shape[2], w.shape[3]
    t_in, f_in = x.shape[-3], x.shape[-2]
    if t_in + 2 * pt < kt or f_in + 2 * pf < kf:
        raise ShapeError(
            f"spatial dims {t_in}x{f_in} (pad {pt},{pf}) smaller than kernel {kt}x{kf}"
        )

    xr = x.real[None] if squeeze else x.real
    xi = x.imag[None] if squeeze else x.imag
    padded_shape = (xr.shape[0], t_in + 2 * pt, f_in + 2 * pf, xr.shape[-1])
    cols_r, dims = _im2col(_pad_tf(xr, pt, pf), kt, kf, st, sf)
    cols_i, _ = _im2col(_pad_tf(xi, pt, pf), kt, kf, st, sf)
    c_out = w.shape[0]
    a_mat = w.real.reshape(c_out, -1)
    b_mat = w.imag.reshape(c_out, -1)

    batch, to, fo = dims
    yr = (cols_r @ a_mat.T - cols_i @ b_mat.T).reshape(batch, to, fo, c_out)
    yi = (cols_i @ a_mat.T + cols_r @ b_mat.T).reshape(batch, to, fo, c_out)

    def unpad(gp):
        return gp[:, pt : pt + t_in, pf : pf + f_in, :]

    def debatch(arr):
        return arr[0] if squeeze else arr

    def flat(g):
        return (g[None] if squeeze else g).reshape(batch * to * fo, c_out)

    def vjp_x(gr, gi):
        gr2, gi2 = flat(gr), flat(gi)
        gc_r = gr2 @ a_mat + gi2 @ b_mat
        gc_i = -gr2 @ b_mat + gi2 @ a_mat
        gxr = unpad(_col2im(gc_r, dims, kt, kf, st, sf, padded_shape))
        gxi = unpad(_col2im(gc_i, dims, kt, kf, st, sf, padded_shape))
        return (debatch(gxr), debatch(gxi))

    def vjp_w(gr, gi):
        gr2, gi2 = flat(gr), flat(gi)
        ga = (cols_r.T @ gr2 + cols_i.T @ gi2).T.reshape(w.shape)
        gb = (-cols_i.T @ gr2 + cols_r.T @ gi2).T.reshape(w.shape)
        return (ga, gb)

    return _emit("complex_conv2d", debatch(yr), debatch(yi), [(x, vjp_x), (w, vjp_w)])


def complex_conv_transpose2d(x, w, stride, padding, output_spatial):
    """Adjoint (transposed) complex convolution, used for decoder upsampling.

    ``w`` has shape [C_in, C_out, kt, kf]; ``output_spatial`` fixes the
    (T_out, F_out) of the result, resolving the usual stride ambiguity.
    """
    st, sf = _pair(stride)
    pt, pf = _pair(padding)
    t_out, f_out = int(output_spatial[0]), int(output_spatial[1])
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv-transpose input must be rank 3 or 4, got {x.shape}")
    squeeze = x.ndim == 3
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[-1]} complex channels, "
            f"kernel expects {w.shape[0]}"
        )
    kt, kf = w.shape[2], w.shape[3]
    t_in, f_in = x.shape[-3], x.shape[-2]
    if _conv_out_dim(t_out, kt, st, pt) != t_in or _conv_out_dim(f_out, kf, sf, pf) != f_in:
        raise ShapeError(
            f"output spatial {t_out}x{f_out} inconsistent with input "
            f"{t_in}x{f_in} under k=({kt},{kf}) s=({st},{sf}) p=({pt},{pf})"
        )

    xr = x.real[None] if squeeze else x.real
    xi = x.imag[None] if squeeze else x.imag
    batch = xr.shape[0]
    c_in, c_out = w.shape[0], w.shape[1]
    padded_shape = (batch, t_out + 2 * pt, f_out + 2 * pf, c_out)
    dims = (batch, t_in, f_in)
    a_mat = w.real.reshape(c_in, -1)
    b_mat = w.imag.reshape(c_in, -1)
    xr_flat = xr.reshape(batch * t_in * f_in, c_in)
    xi_flat = xi.reshape(batch * t_in * f_in, c_in)

    def scatter(cols):
        return _col2im(cols, dims, kt, kf, st, sf, padded_shape)

    def unpad(yp):
        return yp[:, pt : pt + t_out, pf : pf + f_out, :]

    yr = unpad(scatter(xr_flat @ a_mat - xi_flat @ b_mat))
    yi = unpad(scatter(xi_flat @ a_mat + xr_flat @ b_mat))

    def debatch(arr):
        return arr[0] if squeeze else arr

    def rebatch(g):
        return g[None] if squeeze else g

    def vjp_x(gr, gi):
        gcols_r, _ = _im2col(_pad_tf(rebatch(gr), pt, pf), kt, kf, st, sf)
        gcols_i, _ = _im2col(_pad_tf(rebatch(gi), pt, pf), kt, kf, st, sf)
        gxr = (gcols_r @ a_mat.T + gcols_i @ b_mat.T).reshape(xr.shape)
        gxi = (-gcols_r @ b_mat.T + gcols_i @ a_mat.T).reshape(xi.shape)
        return (debatch(gxr), debatch(gxi))

    def vjp_w(gr, gi):
        gcols_r, _ = _im2col(_pad_tf(rebatch(gr), pt, pf), kt, kf, st, sf)
        gcols_i, _ = _im2col(_pad_tf(rebatch(gi), pt, pf), kt, kf, st, sf)
        ga = (gcols_r.T @ xr_flat + gcols_i.T @ xi_flat).T.reshape(w.shape)
        gb = (-gcols_r.T @ xi_flat + gcols_i.T @ xr_flat).T.reshape(w.shape)
        return (ga, gb)

    return _emit(
        "complex_conv_transpose2d", debatch(yr), debatch(yi), [(x, vjp_x), (w, vjp_w)]
    )


class ComplexConv2d:
    """Complex conv layer owning a unitary-initialized kernel (no bias)."""

    def __init__(self, in_cc, out_cc, kernel, stride=1, padding=0, *, rng, dtype=np.float64):
        kt, kf = _pair(kernel)
        wr, wi = unitary_init((out_cc, in_cc, kt, kf), rng, dtype=dtype)
        self.weight = ComplexTensor(wr, wi)
        self.stride = _pair(stride)
        self.padding = _pair(padding)

    def __call__(self, x):
        return complex_conv2d(x, self.weight, self.stride, self.padding)

    def parameters(self):
        return [("w", self.weight)]


class ComplexConvTranspose2d:
    """Transposed complex conv layer; output spatial dims fixed at build time."""

    def __init__(
        self, in_cc, out_cc, kernel, stride, padding, output_spatial, *, rng, dtype=np.float64
    ):
        kt, kf = _pair(kernel)
        wr, wi = unitary_init((in_cc, out_cc, kt, kf), rng, dtype=dtype)
        self.weight = ComplexTensor(wr, wi)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.output_spatial = (int(output_spatial[0]), int(output_spatial[1]))

    def __call__(self, x):
        return complex_conv_transpose2d(
            x, self.weight, self.stride, self.padding, self.output_spatial
        )

    def parameters(self):
        return [("w", self.weight)]


# ---------------------------------------------------------------------------
# complex batch normalization
# ---------------------------------------------------------------------------


def _swap_parts(x):
    return ct.make_complex(ct.imag_part(x), ct.real_part(x))


def _one_minus_split(z):
    # per-part 1 - z for gating
    return ct.shift(ct.neg(z), 1 + 1j)


class ComplexBatchNorm:
    """Whitening batchnorm over the joint real/imag distribution per channel.

    Training mode centers the batch and multiplies by the inverse square
    root of the per-channel 2x2 covariance of (real, imag), then applies a
    learned 2x2 scale and a complex shift.  Inference uses running stats.

    Parameter packing: ``gamma_d`` holds (g_rr, g_ii), ``gamma_o`` holds
    (g_ri, g_ir); ``beta`` is the complex shift.
    """

    def __init__(self, channels_cc, eps=1e-5, momentum=0.1, dtype=np.float64):
        c = int(channels_cc)
        self.eps = float(eps)
        self.momentum = float(momentum)
        half = dtype(np.sqrt(0.5))
        self.gamma_d = ComplexTensor(np.full(c, half, dtype=dtype), np.full(c, half, dtype=dtype))
        self.gamma_o = ComplexTensor(np.zeros(c, dtype=dtype), np.zeros(c, dtype=dtype))
        self.beta = ComplexTensor(np.zeros(c, dtype=dtype), np.zeros(c, dtype=dtype))
        # running stats: unit complex power split evenly across the parts
        self.run_mean_r = np.zeros(c, dtype=dtype)
        self.run_mean_i = np.zeros(c, dtype=dtype)
        self.run_vrr = np.full(c, 0.5, dtype=dtype)
        self.run_vri = np.zeros(c, dtype=dtype)
        self.run_vii = np.full(c, 0.5, dtype=dtype)

    def parameters(self):
        return [("gamma_d", self.gamma_d), ("gamma_o", self.gamma_o), ("beta", self.beta)]

    def buffers(self):
        return [
            ("run_mean_r", self.run_mean_r),
            ("run_mean_i", self.run_mean_i),
            ("run_vrr", self.run_vrr),
            ("run_vri", self.run_vri),
            ("run_vii", self.run_vii),
        ]

    def __call__(self, x, training):
        if x.ndim < 2:
            raise ShapeError(f"batchnorm input must have rank >= 2, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        n = 1
        for ax in axes:
            n *= x.shape[ax]

        if training:
            if n < 2:
                raise ContractError(
                    f"batchnorm needs >= 2 samples per channel in training mode, got {n}"
                )
            mu = ct.mean_axes(x, axes)
            xc = ct.sub(x, mu)
            vd = ct.mean_axes(ct.mul_split(xc, xc), axes)  # (E r^2, E i^2)
            vcross = ct.mean_axes(ct.mul_split(xc, _swap_parts(xc)), axes)
            vrr = ct.real_part(vd)
            vii = ct.imag_part(vd)
            vri = ct.real_part(vcross)
            self._update_running(mu, vrr, vri, vii)
        else:
            mu = ComplexTensor(self.run_mean_r, self.run_mean_i)
            xc = ct.sub(x, mu)
            vrr = ComplexTensor(self.run_vrr)
            vii = ComplexTensor(self.run_vii)
            vri = ComplexTensor(self.run_vri)

        # analytic inverse square root of [[a, b], [b, c]] + eps*I
        a = ct.shift(vrr, self.eps)
        c = ct.shift(vii, self.eps)
        b = vri
        delta = ct.sub(ct.mul_split(a, c), ct.mul_split(b, b))
        s = ct.pow_re(delta, 0.5)
        t = ct.pow_re(ct.add(ct.add(a, c), ct.scale(s, 2.0)), 0.5)
        inv = ct.pow_re(ct.mul_split(s, t), -1.0)
        w_rr = ct.mul_split(ct.add(c, s), inv)
        w_ii = ct.mul_split(ct.add(a, s), inv)
        w_ri = ct.mul_split(ct.neg(b), inv)

        wd = ct.make_complex(w_rr, w_ii)
        wo = ct.make_complex(w_ri, w_ri)
        white = ct.add(ct.mul_split(wd, xc), ct.mul_split(wo, _swap_parts(xc)))

        scaled = ct.add(
            ct.mul_split(self.gamma_d, white),
            ct.mul_split(self.gamma_o, _swap_parts(white)),
        )
        return ct.add(scaled, self.beta)

    def _update_running(self, mu, vrr, vri, vii):
        m = self.momentum
        self.run_mean_r = ((1 - m) * self.run_mean_r + m * mu.real).astype(
            self.run_mean_r.dtype
        )
        self.run_mean_i = ((1 - m) * self.run_mean_i + m * mu.imag).astype(
            self.run_mean_i.dtype
        )
        self.run_vrr = ((1 - m) * self.run_vrr + m * vrr.real).astype(self.run_vrr.dtype)
        self.run_vri = ((1 - m) * self.run_vri + m * vri.real).astype(self.run_vri.dtype)
        self.run_vii = ((1 - m) * self.run_vii + m * vii.real).astype(self.run_vii.dtype)


# ---------------------------------------------------------------------------
# split-complex GRU
# ---------------------------------------------------------------------------


class ComplexGruCell:
    """GRU cell with complex matrix products and per-part gate nonlinearities.

    Gates: z = sigma(x W_z + h U_z + b_z), r likewise; candidate
    h~ = tanh(x W_h + (r .* h) U_h + b_h); update h' = (1-z) .* h + z .* h~,
    where sigma/tanh and ``.*`` act on real and imaginary parts independently
    and all matrix products follow the complex product rule.
    """

    def __init__(self, input_cc, hidden_cc, *, rng, dtype=np.float64):
        d, h = int(input_cc), int(hidden_cc)
        self.input_cc = d
        self.hidden_cc = h

        def mat(rows, cols):
            wr, wi = unitary_init((rows, cols), rng, dtype=dtype)
            return ComplexTensor(wr, wi)

        self.w_z, self.w_r, self.w_h = mat(d, h), mat(d, h), mat(d, h)
        self.u_z, self.u_r, self.u_h = mat(h, h), mat(h, h), mat(h, h)
        zeros = lambda: ComplexTensor(np.zeros(h, dtype=dtype), np.zeros(h, dtype=dtype))
        self.b_z, self.b_r, self.b_h = zeros(), zeros(), zeros()

    def parameters(self):
        return [
            ("w_z", self.w_z), ("w_r", self.w_r), ("w_h", self.w_h),
            ("u_z", self.u_z), ("u_r", self.u_r), ("u_h", self.u_h),
            ("b_z", self.b_z), ("b_r", self.b_r), ("b_h", self.b_h),
        ]

    def step(self, x_t, h):
        """One recurrence step: [B, D], [B, H] -> new hidden [B, H]."""
        if x_t.shape[-1] != self.input_cc or h.shape[-1] != self.hidden_cc:
            raise ShapeError(
                f"GRU step shapes {x_t.shape}/{h.shape} do not match "
                f"D={self.input_cc}, H={self.hidden_cc}"
            )
        z = ct.sigmoid_split(
            ct.add(ct.add(ct.matmul(x_t, self.w_z), ct.matmul(h, self.u_z)), self.b_z)
        )
        r = ct.sigmoid_split(
            ct.add(ct.add(ct.matmul(x_t, self.w_r), ct.matmul(h, self.u_r)), self.b_r)
        )
        cand = ct.tanh_split(
            ct.add(
                ct.add(ct.matmul(x_t, self.w_h), ct.matmul(ct.mul_split(r, h), self.u_h)),
                self.b_h,
            )
        )
        return ct.add(ct.mul_split(_one_minus_split(z), h), ct.mul_split(z, cand))

    def run(self, x_seq):
        """Run over a [B, T, D] sequence; returns hidden states [B, T, H].

        The input-side gate projections are batched over all timesteps up
        front; only the recurrent half runs step by step.
        """
        batch, steps, d = x_seq.shape
        h_cc = self.hidden_cc
        flat = ct.reshape(x_seq, (batch * steps, d))
        px = {
            gate: ct.reshape(ct.matmul(flat, w), (batch, steps, h_cc))
            for gate, w in (("z", self.w_z), ("r", self.w_r), ("h", self.w_h))
        }
        h = ComplexTensor(
            np.zeros((batch, h_cc), dtype=x_seq.dtype),
            np.zeros((batch, h_cc), dtype=x_seq.dtype),
        )
        outs = []
        for t in range(steps):
            z = ct.sigmoid_split(
                ct.add(ct.add(ct.index_axis(px["z"], 1, t), ct.matmul(h, self.u_z)), self.b_z)
            )
            r = ct.sigmoid_split(
                ct.add(ct.add(ct.index_axis(px["r"], 1, t), ct.matmul(h, self.u_r)), self.b_r)
            )
            cand = ct.tanh_split(
                ct.add(
                    ct.add(
                        ct.index_axis(px["h"], 1, t),
                        ct.matmul(ct.mul_split(r, h), self.u_h),
                    ),
                    self.b_h,
                )
            )
            h = ct.add(ct.mul_split(_one_minus_split(z), h), ct.mul_split(z, cand))
            outs.append(h)
        return ct.stack(outs, axis=1)
