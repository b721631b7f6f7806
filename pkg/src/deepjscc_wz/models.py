"""SNR-adaptive encoder, side-information-fusing decoder, and the four model
variants.

Architecture (identical spatial skeleton for every variant):

* Encoder: four stride-2 stages, each conv + residual + optional attention +
  AF conditioning, then a 3x3 head conv projecting to the real latent grid
  ``(2k / (gh*gw), gh, gw)`` with ``(gh, gw) = (H/16, W/16)``. The four stage
  outputs form the feature pyramid s1..s4 (scales /2, /4, /8, /16).
* Decoder: the noisy latent grid, optionally concatenated with s4, runs
  through four upsampling stages; s3, s2, s1 are concatenated after the
  successive upsamplings, the raw side image after the last one, and a final
  conv + sigmoid produces the reconstruction in [0, 1].

Variants:

* ``point2point``: no side information anywhere.
* ``wz``: a second encoder (stages only, its own parameters) encodes the
  side image at the receiver; its pyramid feeds the decoder fusion.
* ``wz_sm``: the transmit encoder itself encodes the side image (shared
  parameters); its AF modules receive a binary role flag.
* ``cond``: the transmitter also sees the side image; three encoder
  instances total (transmit fused encoder, transmit-side and receiver-side
  side encoders).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import Tensor, concat, no_grad, sigmoid
from .channel import sigma2_to_snr, unpack_complex
from .errors import (
    CheckpointMismatchError,
    ConfigurationError,
    InvalidArgumentError,
    MissingDataError,
    UnsupportedVariantError,
)
from .nn import SNR_SCALE_DB, AFModule, Conv2d, DecoderStage, EncoderStage, Module
from .seeding import STREAM_INIT, stream_rng

CHECKPOINT_FORMAT_VERSION = "1"


class VariantKind(str, Enum):
    POINT2POINT = "point2point"
    WZ = "wz"
    WZ_SM = "wz_sm"
    COND = "cond"


SIDE_VARIANTS = (VariantKind.WZ, VariantKind.WZ_SM, VariantKind.COND)


@dataclass
class ModelConfig:
    """Architecture hyperparameters plus which variant to build."""

    variant: VariantKind
    rho: float
    image_dims: tuple[int, int, int]       # (channels, height, width)
    base_width: int = 32
    width_schedule: tuple[int, int, int, int] | None = None
    attention_stages: tuple[int, ...] = (2, 4)
    p_avg: float = 1.0

    def __post_init__(self):
        self.variant = VariantKind(self.variant)
        self.image_dims = tuple(int(d) for d in self.image_dims)
        if self.width_schedule is None:
            b = self.base_width
            self.width_schedule = (b, 2 * b, 4 * b, 4 * b)
        self.width_schedule = tuple(int(w) for w in self.width_schedule)
        self.attention_stages = tuple(int(s) for s in self.attention_stages)
        self.validate()

    def validate(self) -> None:
        c, h, w = self.image_dims
        if not (0 < self.rho <= 1):
            raise ConfigurationError(f"rho must be in (0, 1], got {self.rho}")
        if h % 16 != 0 or w % 16 != 0:
            raise ConfigurationError(
                f"image dims must be divisible by 16 (four stride-2 stages), got {h}x{w}"
            )
        if self.p_avg <= 0:
            raise ConfigurationError(f"p_avg must be positive, got {self.p_avg}")
        if len(self.width_schedule) != 4 or any(ws <= 0 for ws in self.width_schedule):
            raise ConfigurationError(
                f"width_schedule needs four positive widths, got {self.width_schedule}"
            )
        if any(s not in (1, 2, 3, 4) for s in self.attention_stages):
            raise ConfigurationError(
                f"attention_stages must be within 1..4, got {self.attention_stages}"
            )
        grid = (h // 16) * (w // 16)
        if self.k <= 0 or self.k % grid != 0:
            raise ConfigurationError(
                f"bandwidth ratio rho={self.rho} with image {w}x{h} gives k={self.k}, "
                f"which does not distribute over the {h // 16}x{w // 16} latent grid; "
                "pick (rho, W, H) so that round(rho*C*W*H) is a positive multiple of "
                "(W/16)*(H/16)"
            )

    @property
    def k(self) -> int:
        """Channel uses: k = round(rho * C * W * H)."""
        c, h, w = self.image_dims
        return int(round(self.rho * c * h * w))

    @property
    def latent_grid(self) -> tuple[int, int]:
        _, h, w = self.image_dims
        return h // 16, w // 16

    @property
    def latent_channels(self) -> int:
        """Real channel count of the latent grid (2 reals per complex symbol)."""
        gh, gw = self.latent_grid
        return 2 * self.k // (gh * gw)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "rho": float(self.rho),
            "image_dims": list(self.image_dims),
            "base_width": int(self.base_width),
            "width_schedule": list(self.width_schedule),
            "attention_stages": list(self.attention_stages),
            "p_avg": float(self.p_avg),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            variant=VariantKind(d["variant"]),
            rho=float(d["rho"]),
            image_dims=tuple(d["image_dims"]),
            base_width=int(d["base_width"]),
            width_schedule=tuple(d["width_schedule"]),
            attention_stages=tuple(d["attention_stages"]),
            p_avg=float(d["p_avg"]),
        )


@dataclass
class FeaturePyramid:
    """Side-information encodings at scales /2, /4, /8, /16."""

    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    s4: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [self.s1, self.s2, self.s3, self.s4]


class Encoder(Module):
    """Four downsampling stages plus an optional latent head.

    ``fuse`` adds concat inputs at every stage and the head (used by the
    cond variant's transmit encoder): raw side image before stage 1, side
    pyramid levels before stages 2..4 and the head.
    """

    def __init__(self, config: ModelConfig, *, n_extra: int, with_head: bool,
                 fuse: bool, rng: np.random.Generator):
        c_in, _, _ = config.image_dims
        ws = config.width_schedule
        ins = [c_in, ws[0], ws[1], ws[2]]
        fuse_w = [c_in, ws[0], ws[1], ws[2]] if fuse else [0, 0, 0, 0]
        self.stages = [
            EncoderStage(
                ins[i] + fuse_w[i], ws[i],
                attention=(i + 1) in config.attention_stages,
                n_extra=n_extra, rng=rng,
            )
            for i in range(4)
        ]
        self.head = None
        if with_head:
            head_in = ws[3] + (ws[3] if fuse else 0)
            self.head = Conv2d(head_in, config.latent_channels, 3, rng=rng)
        self.fuse = fuse

    def forward(self, x: Tensor, extra: Tensor, fuse_feats=None, *,
                with_head: bool = True, return_taps: bool = True):
        taps = []
        h = x
        for i, stage in enumerate(self.stages):
            if self.fuse and fuse_feats is not None:
                h = concat([h, fuse_feats[i]], axis=1)
            h = stage(h, extra)
            taps.append(h)
        z = None
        if with_head and self.head is not None:
            if self.fuse and fuse_feats is not None:
                h = concat([h, fuse_feats[4]], axis=1)
            z = self.head(h)
        return z, (taps if return_taps else None)


class Decoder(Module):
    """Nearly symmetric decoder with four-scale fusion (when enabled)."""

    def __init__(self, config: ModelConfig, *, fuse: bool, rng: np.random.Generator):
        c_in, _, _ = config.image_dims
        ws = config.width_schedule
        c_lat = config.latent_channels
        # Stage order is coarsest first: operates at /16, /8, /4, /2.
        ins = [c_lat, ws[3], ws[2], ws[1]]
        outs = [ws[3], ws[2], ws[1], ws[0]]
        fuse_w = [ws[3], ws[2], ws[1], ws[0]] if fuse else [0, 0, 0, 0]
        # Attention at the decoder stages matching attention_stages' scales.
        scale_of_stage = [4, 3, 2, 1]
        self.stages = [
            DecoderStage(
                ins[i] + fuse_w[i], outs[i],
                attention=scale_of_stage[i] in config.attention_stages,
                rng=rng,
            )
            for i in range(4)
        ]
        self.head = Conv2d(ws[0] + (c_in if fuse else 0), c_in, 3, rng=rng)
        self.fuse = fuse

    def forward(self, y_grid: Tensor, pyramid, x_side: Tensor | None,
                extra: Tensor) -> Tensor:
        h = y_grid
        for i, stage in enumerate(self.stages):
            if self.fuse:
                h = concat([h, pyramid[3 - i]], axis=1)
            h = stage(h, extra)
        if self.fuse:
            h = concat([h, x_side], axis=1)
        return sigmoid(self.head(h))


class VariantModel(Module):
    """A built encoder/decoder pair (plus side encoders where the variant
    needs them). Parameters are float64 tensors; inference passes are safe
    to run concurrently, training is single-writer."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        v = config.variant
        enc_extra = 2 if v == VariantKind.WZ_SM else 1
        self.encoder = Encoder(
            config, n_extra=enc_extra, with_head=True,
            fuse=(v == VariantKind.COND), rng=rng,
        )
        if v == VariantKind.WZ:
            self.side_encoder = Encoder(
                config, n_extra=1, with_head=False, fuse=False, rng=rng
            )
        elif v == VariantKind.COND:
            self.tx_side_encoder = Encoder(
                config, n_extra=1, with_head=False, fuse=False, rng=rng
            )
            self.rx_side_encoder = Encoder(
                config, n_extra=1, with_head=False, fuse=False, rng=rng
            )
        self.decoder = Decoder(config, fuse=(v in SIDE_VARIANTS), rng=rng)

    # -- conditioning -------------------------------------------------------

    def _extra(self, sigma2, n: int, side_flag: float = 0.0, *,
               with_flag: bool) -> Tensor:
        sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64), (n,))
        snr_db = np.asarray(sigma2_to_snr(sigma2, self.config.p_avg))
        cols = [snr_db / SNR_SCALE_DB]
        if with_flag:
            cols.append(np.full(n, float(side_flag)))
        return Tensor(np.stack(cols, axis=1))

    def _enc_extra(self, sigma2, n: int, side_flag: float = 0.0) -> Tensor:
        return self._extra(sigma2, n, side_flag,
                           with_flag=self.config.variant == VariantKind.WZ_SM)

    def _dec_extra(self, sigma2, n: int) -> Tensor:
        return self._extra(sigma2, n, with_flag=False)

    # -- tensor-level passes (used by the training graph) --------------------

    def encode_tensor(self, x: Tensor, sigma2, side_flag: float = 0.0,
                      x_side: Tensor | None = None, *, return_pyramid: bool = True):
        v = self.config.variant
        n = x.shape[0]
        if v == VariantKind.COND:
            if x_side is None:
                raise InvalidArgumentError(
                    "cond transmitter encodes (x, x_side) jointly; x_side is required"
                )
            t_extra = self._extra(sigma2, n, with_flag=False)
            _, tfeats = self.tx_side_encoder.forward(
                x_side, t_extra, with_head=False
            )
            fuse_feats = [x_side, *tfeats]
        else:
            if x_side is not None:
                raise InvalidArgumentError(
                    f"variant {v.value} does not accept x_side at the transmitter"
                )
            fuse_feats = None
        z, taps = self.encoder.forward(
            x, self._enc_extra(sigma2, n, side_flag), fuse_feats,
            return_taps=return_pyramid,
        )
        return z, taps

    def encode_side_tensor(self, x_side: Tensor, sigma2):
        v = self.config.variant
        n = x_side.shape[0]
        if v == VariantKind.WZ:
            _, taps = self.side_encoder.forward(
                x_side, self._extra(sigma2, n, with_flag=False), with_head=False
            )
        elif v == VariantKind.WZ_SM:
            _, taps = self.encoder.forward(
                x_side, self._enc_extra(sigma2, n, side_flag=1.0), with_head=False
            )
        else:
            raise UnsupportedVariantError(
                f"encode_side is only defined for wz/wz_sm, not {v.value}"
            )
        return taps

    def decode_tensor(self, y_grid: Tensor, x_side: Tensor | None, sigma2) -> Tensor:
        v = self.config.variant
        n = y_grid.shape[0]
        if v == VariantKind.POINT2POINT:
            if x_side is not None:
                raise InvalidArgumentError(
                    "point2point decoder takes no side information"
                )
            pyramid = None
        else:
            if x_side is None:
                raise InvalidArgumentError(
                    f"variant {v.value} requires x_side at the decoder"
                )
            if v == VariantKind.COND:
                _, pyramid = self.rx_side_encoder.forward(
                    x_side, self._extra(sigma2, n, with_flag=False), with_head=False
                )
            else:
                pyramid = self.encode_side_tensor(x_side, sigma2)
        return self.decoder.forward(y_grid, pyramid, x_side, self._dec_extra(sigma2, n))


def build_model(config: ModelConfig, seed: int = 0) -> VariantModel:
    """Builds and initializes a variant model; fixed seed, fixed weights."""
    config.validate()
    return VariantModel(config, stream_rng(seed, STREAM_INIT))


def count_parameters(model: VariantModel) -> int:
    """Total trainable scalars; aliased (shared) tensors count once."""
    return sum(p.data.size for p in model.parameters())


def af_modulate(module: AFModule, features: np.ndarray, snr_db: float,
                extra_flags=()) -> np.ndarray:
    """Applies one AF module to a feature batch at the given SNR."""
    return module.modulate(np.asarray(features, dtype=np.float64), snr_db, extra_flags)


# ---------------------------------------------------------------------------
# numpy-facing operations
# ---------------------------------------------------------------------------

def _validate_image(x: np.ndarray, dims: tuple[int, int, int], name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != tuple(dims):
        raise InvalidArgumentError(
            f"{name} must have shape {tuple(dims)} (optionally batched), got {x.shape}"
        )
    if x.min() < 0.0 or x.max() > 1.0:
        raise InvalidArgumentError(f"{name} values must lie in [0, 1]")
    return x


def _squeeze(batched: np.ndarray, was_single: bool) -> np.ndarray:
    return batched[0] if was_single else batched


def encode(model: VariantModel, x: np.ndarray, sigma2, side_flag: int = 0,
           x_side: np.ndarray | None = None, *, return_pyramid: bool = True):
    """Runs the transmit encoder; returns the real latent (element count 2k)
    and the feature pyramid (or None when skipped)."""
    single = np.asarray(x).ndim == 3
    xb = _validate_image(x, model.config.image_dims, "x")
    side_t = None
    if x_side is not None:
        side_t = Tensor(_validate_image(x_side, model.config.image_dims, "x_side"))
    with no_grad():
        z, taps = model.encode_tensor(
            Tensor(xb), sigma2, float(side_flag), side_t,
            return_pyramid=return_pyramid,
        )
    pyramid = None
    if taps is not None:
        pyramid = FeaturePyramid(*[_squeeze(t.data, single) for t in taps])
    return _squeeze(z.data, single), pyramid


def encode_side(model: VariantModel, x_side: np.ndarray, sigma2) -> FeaturePyramid:
    """Encodes the side image at the receiver into its feature pyramid."""
    single = np.asarray(x_side).ndim == 3
    xb = _validate_image(x_side, model.config.image_dims, "x_side")
    with no_grad():
        taps = model.encode_side_tensor(Tensor(xb), sigma2)
    return FeaturePyramid(*[_squeeze(t.data, single) for t in taps])


def decode(model: VariantModel, y: np.ndarray, x_side: np.ndarray | None,
           sigma2) -> np.ndarray:
    """Reconstructs images from received channel symbols ``y`` (complex,
    length k, optionally batched) and, for side-using variants, ``x_side``."""
    y = np.asarray(y)
    single = y.ndim == 1
    if single:
        y = y[None]
    cfg = model.config
    if y.ndim != 2 or y.shape[1] != cfg.k:
        raise InvalidArgumentError(
            f"expected {cfg.k} channel symbols per image, got shape {y.shape}"
        )
    gh, gw = cfg.latent_grid
    grid = np.stack([
        unpack_complex(row, (cfg.latent_channels, gh, gw)) for row in y
    ])
    side_t = None
    if x_side is not None:
        side_t = Tensor(_validate_image(x_side, cfg.image_dims, "x_side"))
    with no_grad():
        x_hat = model.decode_tensor(Tensor(grid), side_t, sigma2)
    return _squeeze(x_hat.data, single)


# ---------------------------------------------------------------------------
# checkpoint archive
# ---------------------------------------------------------------------------

def _unique_named_parameters(model: VariantModel):
    seen: set[int] = set()
    for name, p in model.named_parameters():
        if id(p) in seen:
            continue
        seen.add(id(p))
        yield name, p


def save_checkpoint(model: VariantModel, path) -> None:
    arrays = {name: p.data for name, p in _unique_named_parameters(model)}
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
    }
    np.savez(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path, expected_config: ModelConfig | None = None):
    """Rebuilds a model from an archive; errors on any config mismatch."""
    try:
        archive = np.load(path, allow_pickle=False)
    except FileNotFoundError as exc:
        raise MissingDataError(f"checkpoint not found: {path}") from exc
    with archive:
        if "__meta__" not in archive:
            raise CheckpointMismatchError(f"{path} is not a model checkpoint")
        meta = json.loads(str(archive["__meta__"].item()))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointMismatchError(
                f"unsupported checkpoint format {meta.get('format_version')!r}"
            )
        config = ModelConfig.from_dict(meta["config"])
        if expected_config is not None and expected_config.to_dict() != config.to_dict():
            raise CheckpointMismatchError(
                "checkpoint config does not match the expected config:\n"
                f"  checkpoint: {config.to_dict()}\n"
                f"  expected:   {expected_config.to_dict()}"
            )
        model = build_model(config)
        stored = {k for k in archive.files if k != "__meta__"}
        wanted = dict(_unique_named_parameters(model))
        if stored != set(wanted):
            raise CheckpointMismatchError(
                f"parameter names differ: missing {sorted(set(wanted) - stored)}, "
                f"unexpected {sorted(stored - set(wanted))}"
            )
        for name, p in wanted.items():
            data = archive[name]
            if data.shape != p.data.shape:
                raise CheckpointMismatchError(
                    f"shape mismatch for {name}: {data.shape} vs {p.data.shape}"
                )
            p.data = data.astype(np.float64)
    return model, config
