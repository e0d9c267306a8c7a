"""Parameter containers, initialization and the three autoencoders.

Forward functions take a mapping of bound parameters (``name -> Var``) and an
input ``Var``; :func:`bind` produces that mapping on a fresh or given tape.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Iterator, Mapping, Union

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tape, Var, conv_out_size, convT_out_size


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


def make_rng(*key: int) -> np.random.Generator:
    """PCG64 generator keyed on one or more non-negative integers.

    ``SeedSequence`` mixes the key words, so ``make_rng(s, 0)`` and
    ``make_rng(s, 1)`` give independent streams.
    """
    words = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


class ParameterSet:
    """Ordered, named trainable tensors with matching gradient buffers."""

    def __init__(self, items=()):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        for name, value in items:
            if name in self._values:
                raise ConfigError(f"duplicate parameter name {name!r}")
            value = T.as_tensor(value)
            self._values[name] = value
            self._grads[name] = np.zeros_like(value)

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._values:
            raise KeyError(name)
        value = T.as_tensor(value)
        if value.shape != self._values[name].shape:
            raise ShapeError(f"{name}: new shape {value.shape} != {self._values[name].shape}")
        self._values[name] = value

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return self._grads

    def set_grads(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if g.shape != self._values[name].shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != {self._values[name].shape}")
            self._grads[name] = g

    def copy(self) -> "ParameterSet":
        return ParameterSet((k, v.copy()) for k, v in self._values.items())

    def num_scalars(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    def equal(self, other: "ParameterSet") -> bool:
        """Bitwise equality of names, order, shapes and values."""
        if self.names() != other.names():
            return False
        return all(self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes()
                   for k in self)


def bind(params: ParameterSet, tape: Tape | None = None) -> dict[str, Var]:
    """Register every parameter as a leaf on ``tape`` (a new one by default)."""
    tape = tape if tape is not None else Tape()
    return {name: tape.leaf(value) for name, value in params.items()}


# --------------------------------------------------------------------------
# configs

@dataclass(frozen=True)
class VanillaAEConfig:
    input_dim: int = 16
    hidden: int = 4

    kind = "vanilla"

    def validate(self) -> None:
        if self.input_dim < 1 or self.hidden < 1:
            raise ConfigError("vanilla AE dims must be positive")
        if self.hidden >= self.input_dim:
            raise ConfigError(
                f"bottleneck width {self.hidden} must be smaller than input width {self.input_dim}")

    def param_shapes(self) -> list[tuple[str, tuple[int, ...], int]]:
        d, h = self.input_dim, self.hidden
        return [("enc.fc.w", (d, h), d), ("enc.fc.b", (h,), d),
                ("dec.fc.w", (h, d), h), ("dec.fc.b", (d,), h)]


@dataclass(frozen=True)
class _ConvAEConfig:
    input_shape: tuple[int, int, int]
    channels: tuple[int, ...]
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    latent: int = 64

    def stage_sizes(self) -> list[tuple[int, int]]:
        """Spatial size after each encoder stage, starting with the input."""
        _, h, w = self.input_shape
        sizes = [(h, w)]
        for _ in self.channels:
            h = conv_out_size(h, self.kernel, self.stride, self.padding)
            w = conv_out_size(w, self.kernel, self.stride, self.padding)
            if h < 1 or w < 1:
                raise ConfigError(f"encoder stage collapses spatial dims to {h}x{w}")
            sizes.append((h, w))
        return sizes

    def validate(self) -> None:
        c, h, w = self.input_shape
        if min(c, h, w, self.kernel, self.stride, self.latent) < 1 or self.padding < 0:
            raise ConfigError(f"non-positive dimension in {self}")
        if not self.channels or min(self.channels) < 1:
            raise ConfigError("at least one positive encoder channel width is required")
        sizes = self.stage_sizes()
        for (hi, wi), (ho, wo) in zip(sizes[:0:-1], sizes[-2::-1]):
            if (convT_out_size(hi, self.kernel, self.stride, self.padding),
                    convT_out_size(wi, self.kernel, self.stride, self.padding)) != (ho, wo):
                raise ConfigError(
                    f"decoder cannot restore {ho}x{wo} from {hi}x{wi} with "
                    f"k={self.kernel}, s={self.stride}, p={self.padding}")

    @property
    def bottleneck_hw(self) -> tuple[int, int]:
        return self.stage_sizes()[-1]

    @property
    def flat_dim(self) -> int:
        h, w = self.bottleneck_hw
        return self.channels[-1] * h * w

    def _encoder_convs(self):
        k = self.kernel
        cin = self.input_shape[0]
        out = []
        for i, c in enumerate(self.channels):
            fan = cin * k * k
            out += [(f"enc.conv{i}.w", (c, cin, k, k), fan), (f"enc.conv{i}.b", (c,), fan)]
            cin = c
        return out

    def _decoder(self):
        k = self.kernel
        chans = list(self.channels[::-1]) + [self.input_shape[0]]
        out = [("dec.fc.w", (self.latent, self.flat_dim), self.latent),
               ("dec.fc.b", (self.flat_dim,), self.latent)]
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
            fan = cin * k * k
            out += [(f"dec.convT{i}.w", (cin, cout, k, k), fan), (f"dec.convT{i}.b", (cout,), fan)]
        return out


@dataclass(frozen=True)
class CAEConfig(_ConvAEConfig):
    input_shape: tuple[int, int, int] = (3, 64, 64)
    channels: tuple[int, ...] = (32, 64, 128)
    latent: int = 128

    kind = "cae"

    def param_shapes(self):
        d = self.flat_dim
        return (self._encoder_convs()
                + [("enc.fc.w", (d, self.latent), d), ("enc.fc.b", (self.latent,), d)]
                + self._decoder())


@dataclass(frozen=True)
class CVAEConfig(_ConvAEConfig):
    input_shape: tuple[int, int, int] = (3, 32, 32)
    channels: tuple[int, ...] = (32, 64)
    latent: int = 64

    kind = "cvae"

    def param_shapes(self):
        d, z = self.flat_dim, self.latent
        return (self._encoder_convs()
                + [("enc.mu.w", (d, z), d), ("enc.mu.b", (z,), d),
                   ("enc.logvar.w", (d, z), d), ("enc.logvar.b", (z,), d)]
                + self._decoder())


ModelConfig = Union[VanillaAEConfig, CAEConfig, CVAEConfig]

MODEL_CONFIGS = {"vanilla": VanillaAEConfig, "cae": CAEConfig, "cvae": CVAEConfig}


def architecture_hash(config: ModelConfig) -> bytes:
    """SHA-256 over the model kind and its architecture fields."""
    payload = json.dumps({"kind": config.kind, **asdict(config)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).digest()


def init_params(config: ModelConfig, seed: int) -> ParameterSet:
    """Weights ~ U(-b, b) with b = sqrt(1/fan_in); biases zero.

    Parameters are drawn in declaration order from a single PCG64 stream
    keyed on ``seed``, so the same seed always gives the same bytes.
    """
    config.validate()
    rng = make_rng(seed)
    items = []
    for name, shape, fan_in in config.param_shapes():
        if name.endswith(".b"):
            items.append((name, np.zeros(shape)))
        else:
            bound = np.sqrt(1.0 / fan_in)
            items.append((name, rng.uniform(-bound, bound, size=shape)))
    return ParameterSet(items)


# --------------------------------------------------------------------------
# forward passes

@dataclass
class LatentStats:
    mu: Var
    logvar: Var


def _input(p: Mapping[str, Var], x) -> Var:
    if isinstance(x, Var):
        return x
    tape = next(iter(p.values())).tape
    return tape.leaf(x)


def _check_shape(model: str, x: Var, expected: tuple[int, ...]) -> None:
    if x.value.ndim != len(expected) + 1 or x.shape[1:] != tuple(expected):
        raise ShapeError(f"{model}: expected input (N, {', '.join(map(str, expected))}), got {x.shape}")


def _encode_convs(p, x: Var, cfg: _ConvAEConfig) -> Var:
    h = x
    for i in range(len(cfg.channels)):
        h = T.relu(T.conv2d(h, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], cfg.stride, cfg.padding))
    return T.flatten(h)


def _decode(p, z: Var, cfg: _ConvAEConfig) -> Var:
    h = T.dense(z, p["dec.fc.w"], p["dec.fc.b"])
    bh, bw = cfg.bottleneck_hw
    h = T.reshape(h, (z.shape[0], cfg.channels[-1], bh, bw))
    n_stages = len(cfg.channels)
    for i in range(n_stages):
        h = T.conv_transpose2d(h, p[f"dec.convT{i}.w"], p[f"dec.convT{i}.b"], cfg.stride, cfg.padding)
        h = T.sigmoid(h) if i == n_stages - 1 else T.relu(h)
    return h


def cae_encode(p: Mapping[str, Var], x, config: CAEConfig = CAEConfig()) -> Var:
    x = _input(p, x)
    _check_shape("cae", x, config.input_shape)
    return T.dense(_encode_convs(p, x, config), p["enc.fc.w"], p["enc.fc.b"])


def cae_forward(p: Mapping[str, Var], x, config: CAEConfig = CAEConfig()) -> Var:
    """Conv encoder -> dense bottleneck -> dense + transposed-conv decoder."""
    return _decode(p, cae_encode(p, x, config), config)


def cvae_encode(p: Mapping[str, Var], x, config: CVAEConfig = CVAEConfig()) -> LatentStats:
    x = _input(p, x)
    _check_shape("cvae", x, config.input_shape)
    h = _encode_convs(p, x, config)
    return LatentStats(T.dense(h, p["enc.mu.w"], p["enc.mu.b"]),
                       T.dense(h, p["enc.logvar.w"], p["enc.logvar.b"]))


def reparameterize(stats: LatentStats, eps) -> Var:
    """z = mu + exp(logvar / 2) * eps, with ``eps`` supplied by the caller."""
    if not isinstance(eps, Var):
        eps = stats.mu.tape.leaf(eps)
    if eps.shape != stats.mu.shape or stats.logvar.shape != stats.mu.shape:
        raise ShapeError(
            f"reparameterize: mu {stats.mu.shape}, logvar {stats.logvar.shape}, eps {eps.shape}")
    return T.add(stats.mu, T.mul(T.exp(T.scale(stats.logvar, 0.5)), eps))


def cvae_decode(p: Mapping[str, Var], z, config: CVAEConfig = CVAEConfig()) -> Var:
    z = _input(p, z)
    if z.value.ndim != 2 or z.shape[1] != config.latent:
        raise ShapeError(f"cvae_decode: expected (N, {config.latent}), got {z.shape}")
    return _decode(p, z, config)


def cvae_forward(p: Mapping[str, Var], x, eps=None,
                 config: CVAEConfig = CVAEConfig()) -> tuple[Var, LatentStats]:
    """Encode, sample (``eps=None`` means the mean path) and decode."""
    stats = cvae_encode(p, x, config)
    z = stats.mu if eps is None else reparameterize(stats, eps)
    return cvae_decode(p, z, config), stats


def vanilla_ae_forward(p: Mapping[str, Var], x, config: VanillaAEConfig = VanillaAEConfig()) -> Var:
    x = _input(p, x)
    _check_shape("vanilla", x, (config.input_dim,))
    h = T.relu(T.dense(x, p["enc.fc.w"], p["enc.fc.b"]))
    return T.sigmoid(T.dense(h, p["dec.fc.w"], p["dec.fc.b"]))


def reconstruct_batch(config: ModelConfig, params: ParameterSet, x: np.ndarray) -> np.ndarray:
    """Deterministic reconstruction (CVAE uses eps = 0, i.e. z = mu)."""
    p = bind(params)
    if config.kind == "cae":
        return cae_forward(p, x, config).value
    if config.kind == "cvae":
        return cvae_forward(p, x, None, config)[0].value
    return vanilla_ae_forward(p, x, config).value
