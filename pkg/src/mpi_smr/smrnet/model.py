"""3D residual-in-residual dense network for component-wise SM super-resolution."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..nn import AdamState, Conv3dParams, Tensor, add, concat, conv3d, leaky_relu, nn_upsample, no_grad, scale


@dataclass(frozen=True)
class ModelConfig:
    """Topology. ``up_factor_per_block ** n_up`` is the total upsampling factor."""

    n_rrdb: int = 9
    n_up: int = 1
    up_factor_per_block: int = 2
    nf: int = 64
    gc: int = 32
    res_scale: float = 0.2
    slope: float = 0.2
    kernel: int = 3
    init_gain: float = 0.1

    def __post_init__(self):
        if self.n_rrdb < 1 or self.n_up < 1:
            raise ValueError("n_rrdb and n_up must be >= 1")
        if self.up_factor_per_block not in (2, 3) or self.up_factor not in (2, 3, 4):
            raise ValueError(
                f"up_factor_per_block={self.up_factor_per_block} with n_up={self.n_up} gives total "
                f"factor {self.up_factor_per_block ** self.n_up}; must be 2, 3 or 4"
            )
        if self.nf < 1 or self.gc < 1:
            raise ValueError("nf and gc must be >= 1")
        if not 0 <= self.res_scale <= 1:
            raise ValueError("res_scale must lie in [0, 1]")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")

    @property
    def up_factor(self) -> int:
        return self.up_factor_per_block**self.n_up

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small configuration that trains on one CPU core."""
        base = dict(n_rrdb=2, nf=16, gc=8)
        base.update(overrides)
        return cls(**base)


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    parameters: dict[str, np.ndarray]
    adam: AdamState | None = None
    iteration: int = 0
    codec_meta: str = "hsv-hue-phase/per-component-lr-max"
    meta: dict = field(default_factory=dict)


def _conv_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, int]]":
    """(in_ch, out_ch) of every conv layer, in forward order."""
    nf, gc = cfg.nf, cfg.gc
    shapes: OrderedDict[str, tuple[int, int]] = OrderedDict()
    shapes["head"] = (3, nf)
    for r in range(cfg.n_rrdb):
        for d in range(3):
            for i in range(4):
                shapes[f"rrdb{r}.db{d}.conv{i}"] = (nf + i * gc, gc)
            shapes[f"rrdb{r}.db{d}.conv4"] = (nf + 4 * gc, nf)
    shapes["trunk"] = (nf, nf)
    for u in range(cfg.n_up):
        shapes[f"up{u}"] = (nf, nf)
    shapes["hr"] = (nf, nf)
    shapes["last"] = (nf, 3)
    return shapes


class SMRNet:
    """Forward pass over named parameter tensors.

    Input and output are ``(batch, 3, z, y, x)`` RGB volumes; the output is
    ``up_factor`` times larger along every spatial axis.
    """

    def __init__(self, config: ModelConfig, parameters: dict[str, np.ndarray]):
        self.config = config
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        for name, (cin, cout) in _conv_shapes(config).items():
            k = config.kernel
            w = parameters[f"{name}.weight"]
            b = parameters[f"{name}.bias"]
            if w.shape != (cout, cin, k, k, k) or b.shape != (cout,):
                raise ValueError(f"parameter {name} has shape {w.shape}, expected {(cout, cin, k, k, k)}")
            self.params[f"{name}.weight"] = Tensor(w, requires_grad=True, name=f"{name}.weight")
            self.params[f"{name}.bias"] = Tensor(b, requires_grad=True, name=f"{name}.bias")
        self._convs = {
            name: Conv3dParams(self.params[f"{name}.weight"], self.params[f"{name}.bias"])
            for name in _conv_shapes(config)
        }

    @property
    def dtype(self):
        return self.params["head.weight"].dtype

    def _lrelu(self, x: Tensor) -> Tensor:
        return leaky_relu(x, self.config.slope)

    def _dense_block(self, x: Tensor, prefix: str) -> Tensor:
        feats = [x]
        for i in range(4):
            inp = feats[0] if i == 0 else concat(feats)
            feats.append(self._lrelu(conv3d(inp, self._convs[f"{prefix}.conv{i}"])))
        out = conv3d(concat(feats), self._convs[f"{prefix}.conv4"])
        return add(x, scale(out, self.config.res_scale))

    def _rrdb(self, x: Tensor, r: int) -> Tensor:
        out = x
        for d in range(3):
            out = self._dense_block(out, f"rrdb{r}.db{d}")
        return add(x, scale(out, self.config.res_scale))

    def forward(self, x: Tensor | np.ndarray) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 5 or x.shape[1] != 3:
            raise ValueError(f"expected (batch, 3, z, y, x) input, got {x.shape}")
        cfg = self.config
        head = conv3d(x, self._convs["head"])
        fea = head
        for r in range(cfg.n_rrdb):
            fea = self._rrdb(fea, r)
        fea = add(head, conv3d(fea, self._convs["trunk"]))
        for u in range(cfg.n_up):
            fea = nn_upsample(fea, cfg.up_factor_per_block)
            fea = self._lrelu(conv3d(fea, self._convs[f"up{u}"]))
        fea = self._lrelu(conv3d(fea, self._convs["hr"]))
        return conv3d(fea, self._convs["last"])

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 4) -> np.ndarray:
        """Inference on a ``(n, 3, z, y, x)`` array without recording a graph."""
        x = np.asarray(x, dtype=self.dtype)
        outs = []
        with no_grad():
            for i in range(0, x.shape[0], batch_size):
                outs.append(self.forward(Tensor(x[i:i + batch_size])).data)
        if not outs:
            return np.zeros((0, 3) + tuple(n * self.config.up_factor for n in x.shape[2:]), self.dtype)
        return np.concatenate(outs)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            p.data[...] = state[k]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def to_checkpoint(self, adam: AdamState | None = None, iteration: int = 0, **meta) -> ModelCheckpoint:
        return ModelCheckpoint(self.config, self.state_dict(), adam, iteration, meta=dict(meta))

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint) -> "SMRNet":
        return cls(ckpt.config, ckpt.parameters)


def init_parameters(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Kaiming fan-in normal init scaled by ``cfg.init_gain``; zero biases."""
    rng = np.random.default_rng(seed)
    k = cfg.kernel
    params = {}
    for name, (cin, cout) in _conv_shapes(cfg).items():
        fan_in = cin * k**3
        std = np.sqrt(2.0 / fan_in) * cfg.init_gain
        params[f"{name}.weight"] = (rng.standard_normal((cout, cin, k, k, k)) * std).astype(dtype)
        params[f"{name}.bias"] = np.zeros(cout, dtype=dtype)
    return params


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> SMRNet:
    """Freshly initialised network for ``cfg``."""
    return SMRNet(cfg, init_parameters(cfg, seed, dtype))


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
