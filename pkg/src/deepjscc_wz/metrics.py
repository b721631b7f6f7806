"""Evaluation criteria: PSNR, multi-scale SSIM, and a learned-feature
perceptual distance.

The perceptual distance normally relies on a pretrained feature network.
Tests and desk-scale runs use a deterministic surrogate instead: a small
fixed-seed convolutional stack whose channel-normalized features define a
symmetric squared distance. It is differentiable (it appears inside the
training loss) and ships with the package, so everything runs hermetically;
a real asset can be dropped in via the asset loader.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, div, no_grad, sqrt, square, sub, tanh, tmean, tsum
from .errors import InvalidArgumentError, MissingAssetError
from .nn import Conv2d, Module
from .autodiff import conv2d

PSNR_CAP_DB = 100.0

# Standard five-scale weights; the desk-scale variant uses the first three
# renormalized to sum to one.
_MSSSIM_WEIGHTS_5 = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_FULL_SCALE_MIN_SIDE = 176
_DESK_MIN_SIDE = 16

FEATURE_NET_VERSION = "surrogate-v1"
DEFAULT_FEATURE_SEED = 1009


def _check_pair(x: np.ndarray, x_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {x.shape} vs {x_hat.shape}"
        )
    return x, x_hat


def psnr(x: np.ndarray, x_hat: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 100 dB so aggregates stay finite."""
    if peak <= 0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    x, x_hat = _check_pair(x, x_hat)
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


# ---------------------------------------------------------------------------
# multi-scale SSIM
# ---------------------------------------------------------------------------

def _gaussian_kernel(win: int, sigma: float) -> np.ndarray:
    r = np.arange(win, dtype=np.float64) - (win - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(x: np.ndarray, kern: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation over the two trailing axes of (c,h,w)."""
    win = kern.size
    v = sliding_window_view(x, win, axis=1)
    x1 = v @ kern
    v2 = sliding_window_view(x1, win, axis=2)
    return v2 @ kern


def _ssim_components(x: np.ndarray, y: np.ndarray, win: int, sigma: float,
                     peak: float) -> tuple[float, float]:
    """Mean luminance*cs and mean cs over the valid region (Wang weighting)."""
    kern = _gaussian_kernel(win, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_x = _filter_valid(x, kern)
    mu_y = _filter_valid(y, kern)
    sxx = _filter_valid(x * x, kern) - mu_x * mu_x
    syy = _filter_valid(y * y, kern) - mu_y * mu_y
    sxy = _filter_valid(x * y, kern) - mu_x * mu_y
    cs_map = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum_map = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    return float(np.mean(lum_map * cs_map)), float(np.mean(cs_map))


def _downsample2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, h % 2), (0, w % 2)), mode="reflect")
        c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _odd_window(base: int, min_side: int) -> int:
    win = min(base, min_side)
    return win if win % 2 == 1 else win - 1


def ms_ssim(x: np.ndarray, x_hat: np.ndarray, peak: float = 1.0) -> float:
    """Multi-scale structural similarity in [0, 1].

    Uses 5 scales with an 11-tap window when both sides are at least
    176 pixels, otherwise the desk-scale variant: 3 scales, 7-tap window
    (shrunk to fit at coarse scales), minimum input side 16.
    """
    x, x_hat = _check_pair(x, x_hat)
    if x.ndim == 2:
        x, x_hat = x[None], x_hat[None]
    if x.ndim != 3:
        raise InvalidArgumentError(f"expected (c, h, w) images, got shape {x.shape}")
    min_side = min(x.shape[1], x.shape[2])
    if min_side >= _FULL_SCALE_MIN_SIDE:
        levels, base_win = 5, 11
    elif min_side >= _DESK_MIN_SIDE:
        levels, base_win = 3, 7
    else:
        raise InvalidArgumentError(
            f"images of size {x.shape[1]}x{x.shape[2]} are too small; the "
            f"minimum size is {_DESK_MIN_SIDE}x{_DESK_MIN_SIDE}"
        )
    weights = _MSSSIM_WEIGHTS_5[:levels]
    weights = weights / weights.sum()
    eps = np.finfo(np.float64).tiny
    score = 1.0
    a, b = x, x_hat
    for level in range(levels):
        win = _odd_window(base_win, min(a.shape[1], a.shape[2]))
        ssim_val, cs_val = _ssim_components(a, b, win, 1.5, peak)
        if level < levels - 1:
            score *= max(cs_val, eps) ** weights[level]
            a, b = _downsample2(a), _downsample2(b)
        else:
            score *= max(ssim_val, eps) ** weights[level]
    return float(min(score, 1.0))


# ---------------------------------------------------------------------------
# learned-feature perceptual distance
# ---------------------------------------------------------------------------

class SurrogateFeatureNet(Module):
    """Fixed-seed random convolutional feature stack with tanh activations.

    Channel-normalized features at each of the three scales define the
    distance; random projections preserve enough geometry for a monotone,
    symmetric, differentiable perceptual score at desk scale.
    """

    widths = (8, 16, 16)

    def __init__(self, seed: int = DEFAULT_FEATURE_SEED, in_channels: int = 3):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 77)))
        self.in_channels = in_channels
        self.seed = seed
        chans = [in_channels, *self.widths]
        self.convs = [
            Conv2d(chans[i], chans[i + 1], 3, stride=2, rng=rng)
            for i in range(len(self.widths))
        ]
        self.version = FEATURE_NET_VERSION

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = tanh(conv(h))
            feats.append(h)
        return feats

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()


def _channel_normalize(f: Tensor) -> Tensor:
    norm = sqrt(tsum(square(f), axis=1, keepdims=True) + 1e-10)
    return div(f, norm)


def lpips_graph(feature_net: SurrogateFeatureNet, x: Tensor, x_hat: Tensor) -> Tensor:
    """Per-image perceptual distance as a differentiable (n,) tensor."""
    total = None
    for fx, fy in zip(feature_net.features(x), feature_net.features(x_hat)):
        d = tmean(square(sub(_channel_normalize(fx), _channel_normalize(fy))),
                  axis=(1, 2, 3))
        total = d if total is None else total + d
    return total


def lpips(x: np.ndarray, x_hat: np.ndarray, feature_net: SurrogateFeatureNet):
    """Perceptual distance; 0 for identical inputs, symmetric, nonnegative."""
    if feature_net is None:
        raise MissingAssetError(
            "lpips requires a feature network; build the surrogate with "
            "SurrogateFeatureNet() or load an asset with load_feature_net()"
        )
    x, x_hat = _check_pair(x, x_hat)
    single = x.ndim == 3
    if single:
        x, x_hat = x[None], x_hat[None]
    if x.shape[1] != feature_net.in_channels:
        raise InvalidArgumentError(
            f"feature net expects {feature_net.in_channels} channels, got {x.shape[1]}"
        )
    with no_grad():
        d = lpips_graph(feature_net, Tensor(x), Tensor(x_hat)).data
    return float(d[0]) if single else d


def save_feature_net(net: SurrogateFeatureNet, path) -> None:
    arrays = {name: p.data for name, p in net.named_parameters()}
    meta = {
        "version": net.version,
        "seed": net.seed,
        "in_channels": net.in_channels,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_feature_net(path) -> SurrogateFeatureNet:
    """Loads feature-net weights; absence is a hard, explained error."""
    try:
        archive = np.load(path, allow_pickle=False)
    except FileNotFoundError as exc:
        raise MissingAssetError(
            f"feature-net asset not found at {path}. Either point "
            "DEEPJSCC_WZ_ASSET_DIR at a directory containing "
            "'feature_net.npz' (create one with save_feature_net("
            "SurrogateFeatureNet(), path)) or run with the built-in surrogate."
        ) from exc
    with archive:
        meta = json.loads(str(archive["__meta__"].item()))
        if meta.get("version") != FEATURE_NET_VERSION:
            raise MissingAssetError(
                f"unsupported feature-net version {meta.get('version')!r}"
            )
        net = SurrogateFeatureNet(seed=int(meta["seed"]),
                                  in_channels=int(meta["in_channels"]))
        for name, p in net.named_parameters():
            p.data = archive[name].astype(np.float64)
    return net


# ---------------------------------------------------------------------------
# batch reporting
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-image metric values plus (mean, std) aggregates."""

    psnr_db: np.ndarray
    ms_ssim: np.ndarray
    lpips: np.ndarray

    def _agg(self, values: np.ndarray) -> tuple[float, float]:
        std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        return float(np.mean(values)), std

    def aggregates(self) -> dict[str, tuple[float, float]]:
        return {
            "psnr": self._agg(self.psnr_db),
            "msssim": self._agg(self.ms_ssim),
            "lpips": self._agg(self.lpips),
        }


def compute_report(x_batch: np.ndarray, x_hat_batch: np.ndarray,
                   feature_net: SurrogateFeatureNet) -> MetricReport:
    x_batch, x_hat_batch = _check_pair(x_batch, x_hat_batch)
    if x_batch.ndim == 3:
        x_batch, x_hat_batch = x_batch[None], x_hat_batch[None]
    return MetricReport(
        psnr_db=np.array([psnr(a, b) for a, b in zip(x_batch, x_hat_batch)]),
        ms_ssim=np.array([ms_ssim(a, b) for a, b in zip(x_batch, x_hat_batch)]),
        lpips=np.asarray(lpips(x_batch, x_hat_batch, feature_net)),
    )
