"""The parallel attention-convolution network.

Architecture: a pre-processing stack of BSConv stages feeds two branches.
The local branch (LCI) is convolutional with a global-response-normalized
output vector; the global branch (GCI) tokenizes the map along time and runs
one pre-norm attention block. A fusion head concatenates both vectors,
shuffles channels, and maps to class logits. Three wiring modes: parallel
(both branches on the pre-processed map), serial (LCI consumes the GCI
tokens re-injected as a map), and no_fusion (independent heads, averaged
logits).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, IngestionError
from .seeding import PURPOSE_INIT, derive_rng
from .tensor import Tensor, concat, relu, reshape, tmean, transpose

CHECKPOINT_MAGIC = b"PACNCKPT"
CHECKPOINT_VERSION = 1

WIRING_MODES = ("parallel", "serial", "no_fusion")


@dataclass
class PacnConfig:
    pre_channels: list = field(default_factory=lambda: [3, 16])
    pre_pools: list = field(default_factory=lambda: [[4, 2], [4, 2]])
    lci_channels: list = field(default_factory=lambda: [16, 16])
    gci_embed_dim: int = 16
    gci_heads: int = 4
    gci_mlp_hidden: int = 64
    shuffle_groups: int = 2
    num_classes: int = 10
    wiring_mode: str = "parallel"
    arn_enabled: bool = True
    in_channels: int = 2

    def validate(self):
        if not self.pre_channels or not self.lci_channels:
            raise ConfigError("pre_channels and lci_channels must be non-empty")
        if len(self.pre_pools) != len(self.pre_channels):
            raise ConfigError(f"{len(self.pre_channels)} pre stages but "
                              f"{len(self.pre_pools)} pool windows")
        if self.gci_embed_dim % self.gci_heads != 0:
            raise ConfigError(f"embed dim {self.gci_embed_dim} not divisible "
                              f"by {self.gci_heads} heads")
        fused = self.gci_embed_dim + self.lci_channels[-1]
        if fused % self.shuffle_groups != 0:
            raise ConfigError(f"fused width {fused} not divisible by "
                              f"{self.shuffle_groups} shuffle groups")
        if self.wiring_mode not in WIRING_MODES:
            raise ConfigError(f"unknown wiring mode {self.wiring_mode!r}; "
                              f"expected one of {WIRING_MODES}")
        for name in ("gci_embed_dim", "gci_heads", "gci_mlp_hidden",
                     "shuffle_groups", "num_classes", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PacnConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw).validate()

    @classmethod
    def from_file(cls, path) -> "PacnConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


def features_to_input(batch: np.ndarray) -> Tensor:
    """(n, 256, 65, 2) feature stack -> (n, 2, 256, 65) network input."""
    return Tensor(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))


class PacnModel:
    """Config-driven network holding an ordered layer-path -> Tensor map."""

    def __init__(self, config: PacnConfig, seed: int = 0,
                 dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.state: dict[str, dict] = {}
        self._rng = derive_rng(seed, PURPOSE_INIT)
        self._build()
        del self._rng

    # -- construction ------------------------------------------------------

    def _param(self, path: str, shape, std: float | None = None,
               value: float | None = None) -> Tensor:
        if value is not None:
            data = np.full(shape, value, dtype=self.dtype)
        else:
            data = (self._rng.standard_normal(shape) * std).astype(self.dtype)
        t = Tensor(data, requires_grad=True)
        self.params[path] = t
        return t

    def _conv_block(self, path: str, c_in: int, c_out: int):
        self._param(f"{path}.pw.weight", (c_out, c_in),
                    std=np.sqrt(2.0 / c_in))
        self._param(f"{path}.pw.bias", (c_out,), value=0.0)
        self._param(f"{path}.dw.weight", (c_out, 3, 3),
                    std=np.sqrt(2.0 / 9.0))
        self._param(f"{path}.dw.bias", (c_out,), value=0.0)

    def _bn_block(self, path: str, c: int):
        self._param(f"{path}.gamma", (c,), value=1.0)
        self._param(f"{path}.beta", (c,), value=0.0)
        self.state[path] = {"mean": np.zeros(c, dtype=self.dtype),
                            "var": np.ones(c, dtype=self.dtype)}

    def _ln_block(self, path: str, d: int):
        self._param(f"{path}.gamma", (d,), value=1.0)
        self._param(f"{path}.beta", (d,), value=0.0)

    def _arn_block(self, path: str, c: int):
        self._param(f"{path}.rho", (), value=0.5)
        self._param(f"{path}.gamma", (c,), value=1.0)
        self._param(f"{path}.beta", (c,), value=0.0)

    def _fc_block(self, path: str, d_in: int, d_out: int, std=None):
        self._param(f"{path}.weight", (d_in, d_out),
                    std=np.sqrt(2.0 / d_in) if std is None else std)
        self._param(f"{path}.bias", (d_out,), value=0.0)

    def _build(self):
        cfg = self.config
        c_in = cfg.in_channels
        for i, c_out in enumerate(cfg.pre_channels):
            self._conv_block(f"pre.{i}", c_in, c_out)
            if cfg.arn_enabled and i == 0:
                self._arn_block("pre.first_conv_arn", c_out)
            self._bn_block(f"pre.{i}.bn", c_out)
            if cfg.arn_enabled:
                self._arn_block(f"pre.{i}.arn", c_out)
            c_in = c_out
        c_pre = c_in

        d = cfg.gci_embed_dim
        self._fc_block("gci.proj", c_pre, d)
        self._ln_block("gci.ln1", d)
        for name in ("wq", "wk", "wv", "wo"):
            self._param(f"gci.attn.{name}.weight", (d, d),
                        std=np.sqrt(1.0 / d))
            self._param(f"gci.attn.{name}.bias", (d,), value=0.0)
        self._ln_block("gci.ln2", d)
        self._fc_block("gci.mlp.fc1", d, cfg.gci_mlp_hidden)
        self._fc_block("gci.mlp.fc2", cfg.gci_mlp_hidden, d)
        if cfg.wiring_mode == "serial":
            self._fc_block("gci.reinject", d, c_pre)

        c_in = c_pre
        for i, c_out in enumerate(cfg.lci_channels):
            self._conv_block(f"lci.{i}", c_in, c_out)
            self._bn_block(f"lci.{i}.bn", c_out)
            c_in = c_out
        self._param("lci.grn.gamma", (c_in,), value=0.0)
        self._param("lci.grn.beta", (c_in,), value=0.0)

        c_lci = cfg.lci_channels[-1]
        if cfg.wiring_mode == "no_fusion":
            self._fc_block("head.fc_gci", d, cfg.num_classes)
            self._fc_block("head.fc_lci", c_lci, cfg.num_classes)
        else:
            self._fc_block("head.fc", d + c_lci, cfg.num_classes)

    # -- forward -----------------------------------------------------------

    def _bsconv(self, x: Tensor, path: str, stride=(1, 1)) -> Tensor:
        p = self.params
        return ops.bsconv_forward(x, p[f"{path}.pw.weight"],
                                  p[f"{path}.dw.weight"],
                                  pw_bias=p[f"{path}.pw.bias"],
                                  dw_bias=p[f"{path}.dw.bias"], stride=stride)

    def _bn(self, x: Tensor, path: str, training: bool) -> Tensor:
        return ops.batch_norm_forward(x, self.params[f"{path}.gamma"],
                                      self.params[f"{path}.beta"],
                                      self.state[path], training)

    def _arn(self, x: Tensor, path: str) -> Tensor:
        p = self.params
        return ops.arn_forward(x, p[f"{path}.rho"], p[f"{path}.gamma"],
                               p[f"{path}.beta"])

    def _fc(self, x: Tensor, path: str) -> Tensor:
        return ops.fc_forward(x, self.params[f"{path}.weight"],
                              self.params[f"{path}.bias"])

    def preprocess_forward(self, x: Tensor, training: bool = False) -> Tensor:
        cfg = self.config
        if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels:
            raise ConfigError(f"expected (n, {cfg.in_channels}, f, t) input, "
                              f"got {x.data.shape}")
        for i, pool in enumerate(cfg.pre_pools):
            x = self._bsconv(x, f"pre.{i}")
            if cfg.arn_enabled and i == 0:
                x = self._arn(x, "pre.first_conv_arn")
            x = self._bn(x, f"pre.{i}.bn", training)
            x = relu(x)
            x = ops.maxpool2d(x, tuple(pool))
            if cfg.arn_enabled:
                x = self._arn(x, f"pre.{i}.arn")
        return x

    def gci_forward(self, h: Tensor) -> tuple[Tensor, Tensor]:
        """Map -> attention block; returns (tokens (n,t,d), pooled (n,d))."""
        p = self.params
        tk = transpose(tmean(h, axis=2), (0, 2, 1))      # (n, t, c_pre)
        tk = self._fc(tk, "gci.proj")
        normed = ops.layer_norm_forward(tk, p["gci.ln1.gamma"], p["gci.ln1.beta"])
        att = ops.mha_forward(normed,
                              p["gci.attn.wq.weight"], p["gci.attn.wk.weight"],
                              p["gci.attn.wv.weight"], p["gci.attn.wo.weight"],
                              heads=self.config.gci_heads,
                              bq=p["gci.attn.wq.bias"], bk=p["gci.attn.wk.bias"],
                              bv=p["gci.attn.wv.bias"], bo=p["gci.attn.wo.bias"])
        a = tk + att
        normed2 = ops.layer_norm_forward(a, p["gci.ln2.gamma"], p["gci.ln2.beta"])
        hidden = relu(self._fc(normed2, "gci.mlp.fc1"))
        b = a + self._fc(hidden, "gci.mlp.fc2")
        return b, tmean(b, axis=1)

    def lci_forward(self, h: Tensor, training: bool = False) -> Tensor:
        cfg = self.config
        for i in range(len(cfg.lci_channels)):
            h = self._bsconv(h, f"lci.{i}")
            h = self._bn(h, f"lci.{i}.bn", training)
            h = relu(h)
        h = ops.grn_forward(h, self.params["lci.grn.gamma"],
                            self.params["lci.grn.beta"])
        return ops.global_avg_pool(h)

    def _reinject(self, tokens: Tensor, freq_bins: int) -> Tensor:
        """(n, t, d) tokens -> (n, c_pre, f, t) map, constant along frequency."""
        m = self._fc(tokens, "gci.reinject")                 # (n, t, c_pre)
        m = transpose(m, (0, 2, 1))                          # (n, c_pre, t)
        n, c, t = m.data.shape
        m = reshape(m, (n, c, 1, t))
        ones = Tensor(np.ones((1, 1, freq_bins, 1), dtype=m.data.dtype))
        return m * ones

    def fuse_forward(self, gci_vec: Tensor, lci_vec: Tensor) -> Tensor:
        mode = self.config.wiring_mode
        if mode == "no_fusion":
            return (self._fc(gci_vec, "head.fc_gci")
                    + self._fc(lci_vec, "head.fc_lci")) * 0.5
        fused = concat([gci_vec, lci_vec], axis=1)
        fused = ops.channel_shuffle(fused, self.config.shuffle_groups)
        return self._fc(fused, "head.fc")

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        h = self.preprocess_forward(x, training)
        if self.config.wiring_mode == "serial":
            tokens, gci_vec = self.gci_forward(h)
            m = self._reinject(tokens, h.data.shape[2])
            lci_vec = self.lci_forward(m, training)
        else:
            _, gci_vec = self.gci_forward(h)
            lci_vec = self.lci_forward(h, training)
        return self.fuse_forward(gci_vec, lci_vec)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, training)

    # -- bookkeeping ---------------------------------------------------------

    def num_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def clamp_arn(self):
        """Pin every ARN blend weight back into [0, 1] (post-step hook)."""
        for path, t in self.params.items():
            if path.endswith(".rho"):
                np.clip(t.data, 0.0, 1.0, out=t.data)

    # -- checkpoint I/O --------------------------------------------------------

    def _entries(self):
        for path, t in self.params.items():
            yield path, t.data
        for path, st in self.state.items():
            yield f"state.{path}.mean", st["mean"]
            yield f"state.{path}.var", st["var"]

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            cfg = self.config.to_json().encode("utf-8")
            fh.write(struct.pack("<I", len(cfg)))
            fh.write(cfg)
            for name, data in self._entries():
                enc = name.encode("utf-8")
                fh.write(struct.pack("<I", len(enc)))
                fh.write(enc)
                fh.write(struct.pack("<I", data.ndim))
                fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
                fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "PacnModel":
        with open(path, "rb") as fh:
            if fh.read(8) != CHECKPOINT_MAGIC:
                raise IngestionError(f"{path} is not a checkpoint (bad magic)")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CHECKPOINT_VERSION:
                raise IngestionError(f"unsupported checkpoint version {version}")
            (clen,) = struct.unpack("<I", fh.read(4))
            config = PacnConfig.from_json(fh.read(clen).decode("utf-8"))
            model = cls(config)
            loaded = {}
            while True:
                head = fh.read(4)
                if not head:
                    break
                (nlen,) = struct.unpack("<I", head)
                name = fh.read(nlen).decode("utf-8")
                (ndim,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * 4)
                if len(raw) != count * 4:
                    raise IngestionError(f"truncated tensor {name} in {path}")
                loaded[name] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        expected = dict(model._entries())
        missing = set(expected) - set(loaded)
        extra = set(loaded) - set(expected)
        if missing or extra:
            raise IngestionError(f"checkpoint/config mismatch in {path}: "
                                 f"missing {sorted(missing)[:3]}, "
                                 f"unexpected {sorted(extra)[:3]}")
        for name, data in loaded.items():
            target = expected[name]
            if target.shape != data.shape:
                raise IngestionError(f"tensor {name} has shape {data.shape}, "
                                     f"expected {target.shape}")
            target[...] = data
        return model
