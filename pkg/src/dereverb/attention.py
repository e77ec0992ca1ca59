"""Time-frequency self-attention mechanisms, interchangeable behind one block.

Three mechanisms operate on a [T, F, C] complex feature map along a chosen
axis ("time" or "frequency"):

  * Sdab           -- fixed-size fully-connected reweighting per part; the
                      learned weights are not softmax-normalized.
  * ConventionalSA -- softmax attention computed independently on the real
                      and imaginary parts (per-part Q/K/V projections).
  * ComplexTFSA    -- fully complex attention: Corr = Q K^H, one real
                      attention map softmax(|Corr|) applied to both parts.

``TFAttentionBlock`` runs a mechanism along time and frequency in parallel
and merges as x + (branch_time + branch_freq)/2.

Per-part weights are packed into single ComplexTensors whose ``.real`` acts
on the real branch and ``.imag`` on the imaginary branch, so every stored
value is trainable and parameter counts are directly comparable.
"""

from __future__ import annotations

import numpy as np

from . import ctensor as ct
from .ctensor import ComplexTensor
from .errors import ConfigError, ContractError, ShapeError
from .layers import orthogonal_pair_init, unitary_init

AXES = ("time", "frequency")


def _check_axis(axis):
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}, got {axis!r}")


def _to_rows(x, axis):
    """[T, F, C] -> (rows [L, D], undo) where L is the chosen axis."""
    t, f, c = x.shape
    if axis == "time":
        rows = ct.reshape(x, (t, f * c))
        undo = lambda m: ct.reshape(m, (t, f, c))
    else:
        perm = ct.permute(x, (1, 0, 2))
        rows = ct.reshape(perm, (f, t * c))
        undo = lambda m: ct.permute(ct.reshape(m, (f, t, c)), (1, 0, 2))
    return rows, undo


class ConventionalSA:
    """Softmax attention applied to real and imaginary parts independently."""

    def __init__(self, channels_cc, *, rng, dtype=np.float64):
        self.channels_cc = int(channels_cc)
        self.proj = {}
        for axis in AXES:
            for name in ("q", "k", "v"):
                wr, wi = orthogonal_pair_init(
                    (self.channels_cc, self.channels_cc), rng, dtype=dtype
                )
                self.proj[(axis, name)] = ComplexTensor(wr, wi)

    def parameters(self):
        return [
            (f"{axis[0]}.w{name}", self.proj[(axis, name)])
            for axis in AXES
            for name in ("q", "k", "v")
        ]

    def _project(self, x, axis, name):
        t, f, c = x.shape
        flat = ct.reshape(x, (t * f, c))
        out = ct.matmul_split(flat, self.proj[(axis, name)])
        return ct.reshape(out, (t, f, c))

    def branch(self, x, axis, collect=None):
        _check_axis(axis)
        q, _ = _to_rows(self._project(x, axis, "q"), axis)
        k, _ = _to_rows(self._project(x, axis, "k"), axis)
        v, undo = _to_rows(self._project(x, axis, "v"), axis)
        corr = ct.matmul_split(q, ct.transpose(k))
        w = ct.softmax_rows_split(corr)
        if collect is not None:
            collect["weights_real"] = w.real.copy()
            collect["weights_imag"] = w.imag.copy()
        return undo(ct.matmul_split(w, v))

    __call__ = branch


class ComplexTFSA:
    """Fully complex attention: one attention map from |Q K^H| for both parts."""

    def __init__(self, channels_cc, *, rng, dtype=np.float64):
        self.channels_cc = int(channels_cc)
        self.proj = {}
        for axis in AXES:
            for name in ("q", "k", "v"):
                wr, wi = unitary_init(
                    (self.channels_cc, self.channels_cc), rng, dtype=dtype
                )
                self.proj[(axis, name)] = ComplexTensor(wr, wi)

    def parameters(self):
        return [
            (f"{axis[0]}.w{name}", self.proj[(axis, name)])
            for axis in AXES
            for name in ("q", "k", "v")
        ]

    def _project(self, x, axis, name):
        t, f, c = x.shape
        flat = ct.reshape(x, (t * f, c))
        out = ct.matmul(flat, self.proj[(axis, name)])
        return ct.reshape(out, (t, f, c))

    def branch(self, x, axis, collect=None):
        _check_axis(axis)
        q, _ = _to_rows(self._project(x, axis, "q"), axis)
        k, _ = _to_rows(self._project(x, axis, "k"), axis)
        v, undo = _to_rows(self._project(x, axis, "v"), axis)
        corr = ct.matmul(q, ct.hermitian_transpose(k))
        w = ct.softmax_rows(ct.magnitude(corr))
        if collect is not None:
            collect["corr"] = corr.to_complex()
            collect["weights"] = w.real.copy()
        return undo(ct.matmul(w, v))

    __call__ = branch


class Sdab:
    """Sample-independent dual attention: learned LxL reweighting per part.

    The fully-connected sizes are fixed at construction; inputs must arrive
    at exactly the configured (T, F).
    """

    def __init__(self, t_dim, f_dim, *, rng, dtype=np.float64):
        self.t_dim = int(t_dim)
        self.f_dim = int(f_dim)
        self.fc = {}
        self.bias = {}
        for axis, dim in (("time", self.t_dim), ("frequency", self.f_dim)):
            wr, wi = orthogonal_pair_init((dim, dim), rng, dtype=dtype)
            self.fc[axis] = ComplexTensor(wr, wi)
            self.bias[axis] = ComplexTensor(
                np.zeros((dim, 1), dtype=dtype), np.zeros((dim, 1), dtype=dtype)
            )

    def parameters(self):
        out = []
        for axis in AXES:
            out.append((f"{axis[0]}.w", self.fc[axis]))
            out.append((f"{axis[0]}.b", self.bias[axis]))
        return out

    def branch(self, x, axis, collect=None):
        _check_axis(axis)
        t, f, _ = x.shape
        if (t, f) != (self.t_dim, self.f_dim):
            raise ContractError(
                f"SDAB configured for {self.t_dim}x{self.f_dim} input, got {t}x{f}"
            )
        rows, undo = _to_rows(x, axis)
        out = ct.add(ct.matmul_split(self.fc[axis], rows), self.bias[axis])
        if collect is not None:
            collect["weights_real"] = self.fc[axis].real.copy()
            collect["weights_imag"] = self.fc[axis].imag.copy()
        return undo(out)

    __call__ = branch


MECHANISMS = {
    "sdab": Sdab,
    "conventional": ConventionalSA,
    "complex": ComplexTFSA,
}


class TFAttentionBlock:
    """Parallel time/frequency branches with a residual-average merge.

    output = x + (branch_time(x) + branch_frequency(x)) / 2
    """

    def __init__(self, variant, channels_cc, t_dim, f_dim, *, rng, dtype=np.float64):
        if variant not in MECHANISMS:
            raise ConfigError(
                f"unknown attention variant {variant!r}; expected one of "
                f"{sorted(MECHANISMS)} or 'none'"
            )
        self.variant = variant
        if variant == "sdab":
            self.mechanism = Sdab(t_dim, f_dim, rng=rng, dtype=dtype)
        else:
            self.mechanism = MECHANISMS[variant](channels_cc, rng=rng, dtype=dtype)

    def parameters(self):
        return [(name, p) for name, p in self.mechanism.parameters()]

    def _apply_single(self, x, collect=None):
        bt = self.mechanism.branch(
            x, "time", None if collect is None else collect.setdefault("time", {})
        )
        bf = self.mechanism.branch(
            x, "frequency", None if collect is None else collect.setdefault("frequency", {})
        )
        return ct.add(x, ct.scale(ct.add(bt, bf), 0.5))

    def __call__(self, x, collect=None):
        if x.ndim == 3:
            return self._apply_single(x, collect)
        if x.ndim != 4:
            raise ShapeError(f"attention block input must be rank 3 or 4, got {x.shape}")
        outs = []
        for b in range(x.shape[0]):
            outs.append(self._apply_single(ct.index_axis(x, 0, b), collect))
        return ct.stack(outs, axis=0)


def count_parameters(named_params):
    """Total trainable scalar count over (name, tensor) pairs (both parts)."""
    return int(sum(p.real.size + p.imag.size for _, p in named_params))
