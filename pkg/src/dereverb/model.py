"""DCCRN assembly, compressed complex loss, Adam, training and enhancement.

The network is a U-Net over complex spectral images: each encoder/decoder
block applies CReLU -> complex conv -> attention block -> dense block ->
complex batchnorm; two GRU layers sit at the bottleneck; skip connections
concatenate encoder outputs onto mirrored decoder inputs channel-wise; a
final 1x1 complex conv emits an unbounded complex ratio mask of the input
image shape.  Decoder convs are transposed so arbitrary per-layer strides
invert exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ctensor as ct
from .attention import TFAttentionBlock
from .checkpoint import load_checkpoint, save_checkpoint
from .ctensor import ComplexTensor, GradTape
from .datasynth import read_manifest
from .errors import ConfigError, ContractError, DataError, ShapeError, TrainingError
from .layers import (
    ComplexBatchNorm,
    ComplexConv2d,
    ComplexConvTranspose2d,
    ComplexGruCell,
    complex_conv2d,
    unitary_init,
)
from .signal import (
    SignalConfig,
    WaveForm,
    apply_mask,
    istft,
    make_spectral_images,
    psd_smooth,
    read_wav,
    reassemble_spectral_images,
    stft,
)

ATTENTION_VARIANTS = ("none", "sdab", "conventional", "complex")


@dataclass
class ModelConfig:
    """Architecture, framing, and training hyperparameters.

    ``channels`` counts stacked real+imag channels per encoder layer (so the
    complex channel count is half); widths must be even.  Defaults are the
    CPU-tractable desk scale; :meth:`paper_scale` gives the 6-layer,
    256x256-image variant.
    """

    num_enc_layers: int = 4
    channels: tuple = (4, 8, 16, 32)
    kernel: tuple = (3, 3)
    stride: tuple = (1, 2)
    padding: tuple = (1, 1)
    gru_layers: int = 2
    gru_hidden: int = 32
    attention: str = "complex"
    compress_exponent: float = 0.3
    loss_beta: float = 0.3
    learning_rate: float = 1e-3
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    image_frames: int = 64
    sample_rate: int = 4000
    frame_len: int = 128
    hop: int = 32
    fft_size: int = 128
    dtype: str = "float64"
    bounded_mask: bool = False
    psd_smoothing_alpha: float | None = None
    checkpoint_every: int = 1

    @classmethod
    def paper_scale(cls, **overrides):
        """6-layer encoder on 256x256 images at 16 kHz."""
        base = dict(
            num_enc_layers=6,
            channels=(8, 16, 32, 64, 128, 256),
            gru_hidden=128,
            image_frames=256,
            sample_rate=16000,
            frame_len=512,
            hop=128,
            fft_size=512,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def image_bins(self):
        return self.fft_size // 2

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def signal_config(self):
        return SignalConfig(
            sample_rate=self.sample_rate,
            frame_len=self.frame_len,
            hop=self.hop,
            fft_size=self.fft_size,
            image_frames=self.image_frames,
        )

    def validate(self):
        if self.num_enc_layers < 1:
            raise ConfigError("num_enc_layers must be >= 1")
        if len(self.channels) != self.num_enc_layers:
            raise ConfigError(
                f"channels {self.channels} must list one width per encoder layer "
                f"({self.num_enc_layers})"
            )
        if any(c % 2 or c < 2 for c in self.channels):
            raise ConfigError(f"channel widths must be even and positive: {self.channels}")
        if self.gru_hidden % 2 or self.gru_hidden < 2:
            raise ConfigError(f"gru_hidden must be even and positive: {self.gru_hidden}")
        if self.attention not in ATTENTION_VARIANTS:
            raise ConfigError(
                f"attention must be one of {ATTENTION_VARIANTS}, got {self.attention!r}"
            )
        if not 0.0 <= self.loss_beta <= 1.0:
            raise ConfigError(f"loss_beta must lie in [0, 1], got {self.loss_beta}")
        if not self.compress_exponent > 0:
            raise ConfigError(f"compress_exponent must be > 0, got {self.compress_exponent}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.psd_smoothing_alpha is not None and not (0 <= self.psd_smoothing_alpha < 1):
            raise ConfigError("psd_smoothing_alpha must lie in [0, 1)")
        self.signal_config().validate()
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        d["kernel"] = list(self.kernel)
        d["stride"] = list(self.stride)
        d["padding"] = list(self.padding)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("channels", "kernel", "stride", "padding"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs).validate()


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


class _UNetBlock:
    """Shared encoder/decoder block: CReLU -> conv -> attention -> dense -> BN."""

    def __init__(self, in_cc, out_cc, spatial_in, spatial_out, cfg, rng, *, transpose):
        kt, kf = cfg.kernel
        st, sf = cfg.stride
        pt, pf = cfg.padding
        dtype = cfg.np_dtype
        if transpose:
            self.conv = ComplexConvTranspose2d(
                in_cc, out_cc, (kt, kf), (st, sf), (pt, pf), spatial_out, rng=rng, dtype=dtype
            )
        else:
            self.conv = ComplexConv2d(
                in_cc, out_cc, (kt, kf), (st, sf), (pt, pf), rng=rng, dtype=dtype
            )
        self.attn = None
        if cfg.attention != "none":
            self.attn = TFAttentionBlock(
                cfg.attention, out_cc, spatial_out[0], spatial_out[1], rng=rng, dtype=dtype
            )
        self.dense1 = ComplexConv2d(out_cc, out_cc, (3, 3), 1, 1, rng=rng, dtype=dtype)
        self.dense2 = ComplexConv2d(2 * out_cc, out_cc, (3, 3), 1, 1, rng=rng, dtype=dtype)
        self.bn = ComplexBatchNorm(out_cc, dtype=dtype)

    def __call__(self, x, training):
        h = ct.crelu(x)
        h = self.conv(h)
        if self.attn is not None:
            h = self.attn(h)
        d = ct.crelu(self.dense1(h))
        h = self.dense2(ct.concat([h, d], axis=-1))
        return self.bn(h, training)

    def parameters(self):
        out = [("conv.w", self.conv.weight)]
        if self.attn is not None:
            out += [(f"attn.{n}", p) for n, p in self.attn.parameters()]
        out += [("dense1.w", self.dense1.weight), ("dense2.w", self.dense2.weight)]
        out += [(f"bn.{n}", p) for n, p in self.bn.parameters()]
        return out

    def buffers(self):
        return [(f"bn.{n}", b) for n, b in self.bn.buffers()]


class DccrnModel:
    """Complex U-Net with a recurrent bottleneck emitting a complex mask."""

    def __init__(self, cfg: ModelConfig, rng=None):
        cfg.validate()
        self.cfg = cfg
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        dtype = cfg.np_dtype
        n = cfg.num_enc_layers
        enc_cc = [c // 2 for c in cfg.channels]
        in_cc = [1] + enc_cc[:-1]

        # spatial dims per level: dims[0] is the image, dims[i+1] after layer i
        dims = [(cfg.image_frames, cfg.image_bins)]
        kt, kf = cfg.kernel
        st, sf = cfg.stride
        pt, pf = cfg.padding
        for _ in range(n):
            t, f = dims[-1]
            t2, f2 = _conv_out(t, kt, st, pt), _conv_out(f, kf, sf, pf)
            if t2 < 1 or f2 < 1:
                raise ConfigError(
                    f"feature map collapsed to {t2}x{f2}; too many strided layers "
                    f"for {cfg.image_frames}x{cfg.image_bins} images"
                )
            dims.append((t2, f2))
        self.dims = dims

        self.encoder = [
            _UNetBlock(in_cc[i], enc_cc[i], dims[i], dims[i + 1], cfg, rng, transpose=False)
            for i in range(n)
        ]

        t_b, f_b = dims[n]
        self.bottleneck_cc = enc_cc[-1]
        d_in = f_b * enc_cc[-1]
        h_cc = cfg.gru_hidden // 2
        self.gru_cells = []
        for l in range(cfg.gru_layers):
            self.gru_cells.append(
                ComplexGruCell(d_in if l == 0 else h_cc, h_cc, rng=rng, dtype=dtype)
            )
        pr, pi = unitary_init((h_cc, d_in), rng, dtype=dtype)
        self.gru_proj = ComplexTensor(pr, pi)
        self.gru_proj_bias = ComplexTensor(
            np.zeros(d_in, dtype=dtype), np.zeros(d_in, dtype=dtype)
        )

        dec_out_cc = in_cc[::-1]  # mirror the encoder input widths
        dec_out_cc[-1] = enc_cc[0]
        self.decoder = []
        prev_cc = enc_cc[-1]
        for j in range(n):
            mirror = n - 1 - j
            block = _UNetBlock(
                prev_cc + enc_cc[mirror],
                dec_out_cc[j],
                dims[mirror + 1],
                dims[mirror],
                cfg,
                rng,
                transpose=True,
            )
            self.decoder.append(block)
            prev_cc = dec_out_cc[j]

        hr, hi = unitary_init((1, prev_cc, 1, 1), rng, dtype=dtype)
        self.head = ComplexTensor(hr, hi)

    # -- parameter/buffer plumbing ------------------------------------------

    def parameters(self):
        out = []
        for i, blk in enumerate(self.encoder):
            out += [(f"enc{i}.{n}", p) for n, p in blk.parameters()]
        for l, cell in enumerate(self.gru_cells):
            out += [(f"gru{l}.{n}", p) for n, p in cell.parameters()]
        out += [("gru_proj.w", self.gru_proj), ("gru_proj.b", self.gru_proj_bias)]
        for j, blk in enumerate(self.decoder):
            out += [(f"dec{j}.{n}", p) for n, p in blk.parameters()]
        out += [("head.w", self.head)]
        return out

    def buffers(self):
        out = []
        for i, blk in enumerate(self.encoder):
            out += [(f"enc{i}.{n}", b) for n, b in blk.buffers()]
        for j, blk in enumerate(self.decoder):
            out += [(f"dec{j}.{n}", b) for n, b in blk.buffers()]
        return out

    def parameter_count(self):
        return int(sum(p.real.size + p.imag.size for _, p in self.parameters()))

    def save(self, path):
        arrays = {name: (p.real, p.imag) for name, p in self.parameters()}
        for name, b in self.buffers():
            arrays[f"buffer.{name}"] = (b, np.zeros_like(b))
        save_checkpoint(path, arrays, meta={"model_config": self.cfg.to_dict()})

    def load_arrays(self, arrays):
        dtype = self.cfg.np_dtype
        for name, p in self.parameters():
            if name not in arrays:
                raise DataError(f"checkpoint is missing parameter {name!r}")
            r, i = arrays[name]
            if r.shape != p.shape:
                raise DataError(
                    f"checkpoint parameter {name!r} has shape {r.shape}, want {p.shape}"
                )
            p.real = r.astype(dtype, copy=True)
            p.imag = i.astype(dtype, copy=True)
        holders = dict(self._buffer_holders())
        for name, _ in self.buffers():
            key = f"buffer.{name}"
            if key not in arrays:
                raise DataError(f"checkpoint is missing buffer {name!r}")
            holders[name](arrays[key][0].astype(dtype, copy=True))

    def _buffer_holders(self):
        blocks = [(f"enc{i}", blk) for i, blk in enumerate(self.encoder)]
        blocks += [(f"dec{j}", blk) for j, blk in enumerate(self.decoder)]
        for prefix, blk in blocks:
            for attr in ("run_mean_r", "run_mean_i", "run_vrr", "run_vri", "run_vii"):
                yield f"{prefix}.bn.{attr}", (lambda v, b=blk.bn, a=attr: setattr(b, a, v))

    @classmethod
    def from_checkpoint(cls, path):
        arrays, meta = load_checkpoint(path)
        if "model_config" not in meta:
            raise DataError(f"{path}: checkpoint carries no model config")
        cfg = ModelConfig.from_dict(meta["model_config"])
        model = cls(cfg)
        model.load_arrays(arrays)
        return model

    # -- forward --------------------------------------------------------------

    def forward(self, x, training=False):
        """Spectral image batch [B,T,F,1] (or [T,F,1]) -> complex mask, same shape."""
        squeeze = x.ndim == 3
        if squeeze:
            x = ct.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1:] != (self.cfg.image_frames, self.cfg.image_bins, 1):
            raise ShapeError(
                f"expected images [B,{self.cfg.image_frames},{self.cfg.image_bins},1], "
                f"got {x.shape}"
            )

        skips = []
        h = x
        for blk in self.encoder:
            h = blk(h, training)
            skips.append(h)

        b = h.shape[0]
        t_b, f_b = self.dims[-1]
        seq = ct.reshape(h, (b, t_b, f_b * self.bottleneck_cc))
        for cell in self.gru_cells:
            seq = cell.run(seq)
        flat = ct.reshape(seq, (b * t_b, seq.shape[-1]))
        proj = ct.add(ct.matmul(flat, self.gru_proj), self.gru_proj_bias)
        h = ct.reshape(proj, (b, t_b, f_b, self.bottleneck_cc))

        for j, blk in enumerate(self.decoder):
            h = blk(ct.concat([h, skips[-1 - j]], axis=-1), training)

        mask = complex_conv2d(h, self.head, 1, 0)
        if self.cfg.bounded_mask:
            # bounded magnitude: tanh(|M|) * exp(j arg M)
            bounded = ct.tanh_split(ct.magnitude(mask))
            mask = ct.cmul(bounded, ct.compress_mag(mask, 0.0))
        return ct.reshape(mask, mask.shape[1:]) if squeeze else mask

    __call__ = forward


def complex_loss(s_clean, s_hat, c, beta):
    """Compressed-spectrum loss combining magnitude and complex errors.

    (1-beta) * sum(||S|^c - |S_hat|^c|^2)
      + beta * sum(||S|^c e^{j phi_S} - |S_hat|^c e^{j phi_S_hat}|^2)
    """
    if s_clean.shape != s_hat.shape:
        raise ShapeError(f"loss operands differ in shape: {s_clean.shape} vs {s_hat.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    mag_term = ct.sum_abs2(
        ct.sub(ct.pow_re(ct.magnitude(s_clean), c), ct.pow_re(ct.magnitude(s_hat), c))
    )
    cplx_term = ct.sum_abs2(ct.sub(ct.compress_mag(s_clean, c), ct.compress_mag(s_hat, c)))
    return ct.add(ct.scale(mag_term, 1.0 - beta), ct.scale(cplx_term, beta))


class Adam:
    """Bias-corrected Adam applied independently to real and imaginary parts."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0
        self.state = {
            name: [np.zeros_like(p.real), np.zeros_like(p.real),
                   np.zeros_like(p.imag), np.zeros_like(p.imag)]
            for name, p in self.params
        }

    def step(self, grads):
        """Apply one update from ``{name: (grad_real, grad_imag)}``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.params:
            pair = grads.get(name)
            if pair is None:
                pair = (np.zeros_like(p.real), np.zeros_like(p.imag))
            gr, gi = pair
            if not (np.all(np.isfinite(gr)) and np.all(np.isfinite(gi))):
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            mr, vr, mi, vi = self.state[name]
            mr[:] = b1 * mr + (1 - b1) * gr
            vr[:] = b2 * vr + (1 - b2) * gr * gr
            mi[:] = b1 * mi + (1 - b1) * gi
            vi[:] = b2 * vi + (1 - b2) * gi * gi
            p.real = p.real - self.lr * (mr / bc1) / (np.sqrt(vr / bc2) + self.eps)
            p.imag = p.imag - self.lr * (mi / bc1) / (np.sqrt(vi / bc2) + self.eps)
            if not (np.all(np.isfinite(p.real)) and np.all(np.isfinite(p.imag))):
                raise TrainingError(f"non-finite value in parameter {name!r} after update")


def _image_tensors(images, dtype):
    data = np.stack([img.data for img in images])
    return ComplexTensor(
        np.ascontiguousarray(data.real, dtype=dtype)[..., None],
        np.ascontiguousarray(data.imag, dtype=dtype)[..., None],
    )


def load_training_images(manifest_path, cfg: ModelConfig, log=None):
    """Manifest -> aligned (input, target) spectral image lists.

    Corrupt pairs are skipped with a warning; an empty result raises.
    When PSD smoothing is enabled it shapes the network INPUT only; the
    masking target stays the raw reverberant spectrum.
    """
    sig_cfg = cfg.signal_config()
    rows = read_manifest(manifest_path)
    inputs, raws, targets = [], [], []
    skipped = 0
    for row in rows:
        try:
            clean = read_wav(row["clean_path"], expected_rate=cfg.sample_rate)
            reverb = read_wav(row["reverb_path"], expected_rate=cfg.sample_rate)
            spec_x = stft(reverb, sig_cfg)
            spec_s = stft(clean, sig_cfg)
            net_in = spec_x
            if cfg.psd_smoothing_alpha is not None:
                net_in = psd_smooth(spec_x, cfg.psd_smoothing_alpha)
            img_in = make_spectral_images(net_in, cfg.image_frames)
            img_x = make_spectral_images(spec_x, cfg.image_frames)
            img_s = make_spectral_images(spec_s, cfg.image_frames)
        except (OSError, DataError, ContractError, ShapeError) as exc:
            skipped += 1
            if log is not None:
                log(f"warning: skipping pair {row['clean_path']}: {exc}")
            continue
        inputs.extend(img_in)
        raws.extend(img_x)
        targets.extend(img_s)
    if not inputs:
        raise TrainingError(f"no usable pairs in {manifest_path} ({skipped} skipped)")
    return inputs, raws, targets, skipped


def train(model: DccrnModel, manifest_path, out_dir, log=None):
    """Full training loop; writes loss.csv and per-epoch checkpoints.

    Returns (final_checkpoint_path, loss_rows) with loss_rows a list of
    (step, epoch, loss) tuples.
    """
    cfg = model.cfg
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs, raws, targets, _ = load_training_images(manifest_path, cfg, log=log)

    dtype = cfg.np_dtype
    rng = np.random.default_rng(cfg.seed)
    named = model.parameters()
    adam = Adam(named, lr=cfg.learning_rate)
    loss_rows = []
    step = 0
    n_images = len(inputs)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_images)
        for lo in range(0, n_images, cfg.batch_size):
            # canonical order inside the batch: shuffling chooses composition
            # only, keeping reductions bit-reproducible
            batch = np.sort(order[lo : lo + cfg.batch_size])
            x_in = _image_tensors([inputs[i] for i in batch], dtype)
            x_raw = _image_tensors([raws[i] for i in batch], dtype)
            s_clean = _image_tensors([targets[i] for i in batch], dtype)

            tape = GradTape()
            for _, p in named:
                tape.watch(p)
            mask = model.forward(x_in, training=True)
            s_hat = ct.cmul(mask, x_raw)
            loss = complex_loss(s_clean, s_hat, cfg.compress_exponent, cfg.loss_beta)
            loss_val = float(loss.real)
            if not np.isfinite(loss_val):
                raise TrainingError(f"non-finite loss {loss_val} at step {step}")
            grads = tape.backward(loss)
            by_name = {}
            for name, p in named:
                if p.node_id in grads:
                    by_name[name] = grads[p.node_id]
                p.tape = None
                p.node_id = None
            adam.step(by_name)
            loss_rows.append((step, epoch, loss_val))
            step += 1
        if log is not None and cfg.epochs:
            log(f"epoch {epoch}: loss {loss_rows[-1][2]:.6g} ({step} steps)")
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            model.save(out / f"ckpt_epoch{epoch:03d}.ckpt")

    final = out / "final.ckpt"
    model.save(final)
    with open(out / "loss.csv", "w") as fh:
        fh.write("step,epoch,loss\n")
        for s, e, v in loss_rows:
            fh.write(f"{s},{e},{v!r}\n")
    return final, loss_rows


def enhance_waveform(model: DccrnModel, wf: WaveForm) -> WaveForm:
    """stft -> images -> forward -> mask -> reassemble -> istft.

    Output length always equals the input length.  The model's sample rate
    must match the waveform's.
    """
    cfg = model.cfg
    if wf.sample_rate != cfg.sample_rate:
        raise ContractError(
            f"model expects {cfg.sample_rate} Hz audio, got {wf.sample_rate} Hz"
        )
    sig_cfg = cfg.signal_config()
    spec_x = stft(wf, sig_cfg)
    net_spec = spec_x
    if cfg.psd_smoothing_alpha is not None:
        net_spec = psd_smooth(spec_x, cfg.psd_smoothing_alpha)
    images_in = make_spectral_images(net_spec, cfg.image_frames)
    images_x = make_spectral_images(spec_x, cfg.image_frames)

    dtype = cfg.np_dtype
    masked = []
    for lo in range(0, len(images_in), cfg.batch_size):
        chunk_in = images_in[lo : lo + cfg.batch_size]
        chunk_x = images_x[lo : lo + cfg.batch_size]
        mask = model.forward(_image_tensors(chunk_in, dtype), training=False)
        mask_c = (mask.real + 1j * mask.imag)[..., 0]
        for img, m in zip(chunk_x, mask_c):
            out = dataclasses.replace(img, data=m * img.data)
            masked.append(out)

    spec_hat = reassemble_spectral_images(masked, spec_x)
    return istft(spec_hat, length=len(wf))


def enhance_with_identity_mask(wf: WaveForm, cfg: ModelConfig) -> WaveForm:
    """The enhancement pipeline with the network forced to M = 1.

    Isolates the pipeline's own loss (spectral-image Nyquist-bin zeroing).
    """
    sig_cfg = cfg.signal_config()
    spec_x = stft(wf, sig_cfg)
    images = make_spectral_images(spec_x, cfg.image_frames)
    spec_hat = reassemble_spectral_images(images, spec_x)
    return istft(spec_hat, length=len(wf))
