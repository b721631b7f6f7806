"""Layers and blocks for the codec networks.

All parameters are float64 ``Tensor``s with ``requires_grad=True``. Layers
draw their initial weights from the ``numpy.random.Generator`` handed to the
constructor, in construction order, so a fixed seed gives a fixed model.
Weight init is fan-in scaled normal, biases start at zero.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    conv2d,
    leaky_relu,
    matmul,
    reshape,
    sigmoid,
    silu,
    tmean,
    upsample2,
)

# AF conditioning feeds SNR in dB divided by this, keeping it on the same
# order as pooled feature activations.
SNR_SCALE_DB = 10.0


class Module:
    """Parameter container with recursive, insertion-ordered discovery."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        seen: set[int] = set()
        out: list[Tensor] = []
        for _, p in self.named_parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _weight(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, *,
                 rng: np.random.Generator):
        self.stride = stride
        self.pad = k // 2
        self.w = _weight(rng, (cout, cin, k, k), cin * k * k)
        self.b = Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class Dense(Module):
    def __init__(self, fin: int, fout: int, *, rng: np.random.Generator):
        self.w = _weight(rng, (fin, fout), fin)
        self.b = Tensor(np.zeros(fout), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b


class ResidualBlock(Module):
    def __init__(self, ch: int, *, rng: np.random.Generator):
        self.conv1 = Conv2d(ch, ch, 3, rng=rng)
        self.conv2 = Conv2d(ch, ch, 3, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(silu(self.conv1(x)))


class AttentionBlock(Module):
    """Residual channel-spatial gate: x + trunk(x) * sigmoid(proj(mask(x)))."""

    def __init__(self, ch: int, *, rng: np.random.Generator):
        self.trunk = ResidualBlock(ch, rng=rng)
        self.mask = ResidualBlock(ch, rng=rng)
        self.proj = Conv2d(ch, ch, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.trunk(x) * sigmoid(self.proj(self.mask(x)))


class AFModule(Module):
    """Channel-state conditioning: gates feature channels from pooled
    activations plus the current SNR (and optional extra flags)."""

    def __init__(self, ch: int, n_extra: int, *, rng: np.random.Generator):
        self.ch = ch
        self.n_extra = n_extra
        self.fc1 = Dense(ch + n_extra, ch, rng=rng)
        self.fc2 = Dense(ch, ch, rng=rng)

    def __call__(self, x: Tensor, extra: Tensor) -> Tensor:
        # extra: (n, n_extra) with column 0 = snr_db / SNR_SCALE_DB
        pooled = tmean(x, axis=(2, 3))
        gates = sigmoid(self.fc2(leaky_relu(self.fc1(concat([pooled, extra], axis=1)))))
        n = x.shape[0]
        return x * reshape(gates, (n, self.ch, 1, 1))

    def modulate(self, features: np.ndarray, snr_db: float, flags=()) -> np.ndarray:
        """Numpy convenience wrapper for a single batch of features."""
        x = Tensor(features)
        row = np.array([[snr_db / SNR_SCALE_DB, *flags]], dtype=np.float64)
        extra = Tensor(np.repeat(row, features.shape[0], axis=0))
        return self(x, extra).data


class EncoderStage(Module):
    """One stride-2 downsampling stage: conv, residual, optional attention,
    AF conditioning."""

    def __init__(self, cin: int, cout: int, *, attention: bool, n_extra: int,
                 rng: np.random.Generator):
        self.down = Conv2d(cin, cout, 3, stride=2, rng=rng)
        self.res = ResidualBlock(cout, rng=rng)
        self.attn = AttentionBlock(cout, rng=rng) if attention else None
        self.af = AFModule(cout, n_extra, rng=rng)

    def __call__(self, x: Tensor, extra: Tensor) -> Tensor:
        h = self.res(silu(self.down(x)))
        if self.attn is not None:
            h = self.attn(h)
        return self.af(h, extra)


class DecoderStage(Module):
    """One decoder stage at a fixed scale, ending in 2x nearest upsampling."""

    def __init__(self, cin: int, cout: int, *, attention: bool,
                 rng: np.random.Generator):
        self.conv = Conv2d(cin, cout, 3, rng=rng)
        self.res = ResidualBlock(cout, rng=rng)
        self.attn = AttentionBlock(cout, rng=rng) if attention else None
        self.af = AFModule(cout, 1, rng=rng)

    def __call__(self, x: Tensor, extra: Tensor) -> Tensor:
        h = self.res(silu(self.conv(x)))
        if self.attn is not None:
            h = self.attn(h)
        return upsample2(self.af(h, extra))


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scales all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Adaptive-moment optimizer with the standard bias correction."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * (p.grad * p.grad)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
