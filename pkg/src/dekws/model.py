"""TC-ResNet-8 backbone: 1-D temporal convolutions with MFCC bins as channels.

Wiring: a k=3 stem conv (40 -> 16 channels) with batch norm and ReLU, then
three residual blocks with out-channels (24, 32, 48). Each block runs
conv(k=9, s=2) + BN + ReLU + conv(k=9, s=1) + BN on the main path and
conv(k=1, s=2) + BN on the shortcut, adds the two, and applies ReLU. Global
average pooling over time feeds a linear head that emits pre-softmax logits.
Padding is 4 for the k=9 convs and 1 for the stem so temporal length is
controlled by stride alone (98 -> 49 -> 25 -> 13 on default features).

With 30 output classes the model has exactly 66,390 trainable parameters
(conv weights and biases, batch-norm scales and shifts, head weight and
bias; running stats excluded).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import InvalidInputError, InvalidShapeError
from .rng import numpy_stream


@dataclass(frozen=True)
class TcResNet8Config:
    input_channels: int = 40
    channels: tuple = (16, 24, 32, 48)
    num_classes: int = 30
    kernel_first: int = 3
    kernel_block: int = 9

    def __post_init__(self):
        if len(self.channels) != 4:
            raise InvalidInputError(
                f"channels must have exactly 4 entries, got {self.channels}"
            )
        if self.num_classes < 2:
            raise InvalidInputError(
                f"num_classes must be >= 2, got {self.num_classes}"
            )


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d:
    def __init__(self, rng, name, c_in, c_out, kernel, stride, padding, dtype):
        self.stride = stride
        self.padding = padding
        self.weight = ad.Tensor(
            _kaiming_uniform(rng, (c_out, c_in, kernel), c_in * kernel, dtype),
            requires_grad=True,
            name=f"{name}.weight",
        )
        self.bias = ad.Tensor(
            np.zeros(c_out, dtype=dtype), requires_grad=True, name=f"{name}.bias"
        )

    def __call__(self, x):
        return ad.conv1d(x, self.weight, self.bias, self.stride, self.padding)

    @property
    def parameters(self):
        return [self.weight, self.bias]


class BatchNorm1d:
    def __init__(self, name, channels, dtype, momentum=0.1, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = ad.Tensor(
            np.ones(channels, dtype=dtype), requires_grad=True, name=f"{name}.gamma"
        )
        self.beta = ad.Tensor(
            np.zeros(channels, dtype=dtype), requires_grad=True, name=f"{name}.beta"
        )
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)

    def __call__(self, x, training):
        return ad.batchnorm1d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, self.momentum, self.eps,
        )

    @property
    def parameters(self):
        return [self.gamma, self.beta]


class Linear:
    def __init__(self, rng, name, d_in, d_out, dtype):
        self.weight = ad.Tensor(
            _kaiming_uniform(rng, (d_out, d_in), d_in, dtype),
            requires_grad=True,
            name=f"{name}.weight",
        )
        self.bias = ad.Tensor(
            np.zeros(d_out, dtype=dtype), requires_grad=True, name=f"{name}.bias"
        )

    def __call__(self, x):
        return ad.linear(x, self.weight, self.bias)

    @property
    def parameters(self):
        return [self.weight, self.bias]


class _ResidualBlock:
    def __init__(self, rng, name, c_in, c_out, kernel, dtype):
        pad = kernel // 2
        self.conv1 = Conv1d(rng, f"{name}.conv1", c_in, c_out, kernel, 2, pad, dtype)
        self.bn1 = BatchNorm1d(f"{name}.bn1", c_out, dtype)
        self.conv2 = Conv1d(rng, f"{name}.conv2", c_out, c_out, kernel, 1, pad, dtype)
        self.bn2 = BatchNorm1d(f"{name}.bn2", c_out, dtype)
        self.conv_skip = Conv1d(rng, f"{name}.skip", c_in, c_out, 1, 2, 0, dtype)
        self.bn_skip = BatchNorm1d(f"{name}.bn_skip", c_out, dtype)

    def __call__(self, x, training):
        main = ad.relu(self.bn1(self.conv1(x), training))
        main = self.bn2(self.conv2(main), training)
        skip = self.bn_skip(self.conv_skip(x), training)
        return ad.relu(ad.add(main, skip))

    @property
    def parameters(self):
        return (
            self.conv1.parameters + self.bn1.parameters
            + self.conv2.parameters + self.bn2.parameters
            + self.conv_skip.parameters + self.bn_skip.parameters
        )

    @property
    def batchnorms(self):
        return [self.bn1, self.bn2, self.bn_skip]


class TcResNet8:
    """Backbone model; construct via build()."""

    def __init__(self, cfg: TcResNet8Config, seed: int, dtype=np.float64):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = numpy_stream(seed, "init")
        c = cfg.channels
        self.stem_conv = Conv1d(
            rng, "stem", cfg.input_channels, c[0],
            cfg.kernel_first, 1, cfg.kernel_first // 2, self.dtype,
        )
        self.stem_bn = BatchNorm1d("stem_bn", c[0], self.dtype)
        self.blocks = [
            _ResidualBlock(rng, f"block{i + 1}", c[i], c[i + 1], cfg.kernel_block, self.dtype)
            for i in range(3)
        ]
        self.head = Linear(rng, "head", c[3], cfg.num_classes, self.dtype)

    @property
    def parameters(self):
        params = self.stem_conv.parameters + self.stem_bn.parameters
        for block in self.blocks:
            params += block.parameters
        return params + self.head.parameters

    @property
    def batchnorms(self):
        bns = [self.stem_bn]
        for block in self.blocks:
            bns += block.batchnorms
        return bns

    def forward(self, features: np.ndarray, training: bool = False) -> ad.Tensor:
        """Features (N, n_frames, n_coeffs) to pre-softmax logits (N, classes).

        Coefficients map to channels, so convolutions run along time. Train
        mode uses batch statistics and updates the running stats; eval mode
        is a pure function of (parameters, input).
        """
        features = np.asarray(features)
        if features.ndim != 3 or features.shape[2] != self.cfg.input_channels:
            raise InvalidShapeError(
                f"expected features (N, frames, {self.cfg.input_channels}), "
                f"got {features.shape}"
            )
        x = ad.Tensor(np.ascontiguousarray(features.transpose(0, 2, 1), dtype=self.dtype))
        h = ad.relu(self.stem_bn(self.stem_conv(x), training))
        for block in self.blocks:
            h = block(h, training)
        pooled = ad.global_avg_pool(h)
        return self.head(pooled)

    def count_parameters(self) -> int:
        """Trainable elements; batch-norm running stats do not count."""
        return sum(p.size for p in self.parameters)

    def state_arrays(self) -> dict:
        """Named arrays in declaration order: parameters plus running stats."""
        arrays = {}
        for p in self.parameters:
            arrays[p.name] = p.data
        for bn in self.batchnorms:
            prefix = bn.gamma.name[:-len(".gamma")]
            arrays[f"{prefix}.running_mean"] = bn.running_mean
            arrays[f"{prefix}.running_var"] = bn.running_var
        return arrays

    def load_state_arrays(self, arrays: dict) -> None:
        own = self.state_arrays()
        if set(own) != set(arrays):
            missing = sorted(set(own) ^ set(arrays))
            raise InvalidInputError(f"state mismatch on keys: {missing}")
        for p in self.parameters:
            src = np.asarray(arrays[p.name])
            if src.shape != p.shape:
                raise InvalidShapeError(
                    f"{p.name}: expected shape {p.shape}, got {src.shape}"
                )
            p.data = src.astype(self.dtype)
        for bn in self.batchnorms:
            prefix = bn.gamma.name[:-len(".gamma")]
            bn.running_mean = np.asarray(arrays[f"{prefix}.running_mean"], dtype=np.float64)
            bn.running_var = np.asarray(arrays[f"{prefix}.running_var"], dtype=np.float64)


def build(cfg: TcResNet8Config, seed: int, dtype=np.float64) -> TcResNet8:
    """Construct and initialize the backbone, deterministically under seed."""
    return TcResNet8(cfg, seed, dtype)


def forward(model: TcResNet8, features: np.ndarray, training: bool = False) -> ad.Tensor:
    return model.forward(features, training)


def count_parameters(model) -> int:
    """Trainable elements of anything exposing a .parameters list."""
    return sum(p.size for p in model.parameters)
