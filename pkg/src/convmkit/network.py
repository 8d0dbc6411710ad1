"""Declarative network specs, the network builder, and the DA attachments
(prediction head, reconstruction decoders)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import Conv2d, ConvM, ConvMConfig, ConvTranspose2dCropped, Linear
from .tensor import Tensor

LAYER_KINDS = ("input", "conv", "maxpool", "conv_m", "avgpool", "linear")


@dataclass
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)
    freeze: bool = False
    lr_mult: float = 1.0

    def to_dict(self) -> dict:
        p = dict(self.params)
        if self.kind == "conv_m":
            p["cfg"] = p["cfg"].to_dict()
        d = {"kind": self.kind, "params": p}
        if self.freeze:
            d["freeze"] = True
        if self.lr_mult != 1.0:
            d["lr_mult"] = self.lr_mult
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        p = dict(d.get("params", {}))
        if d["kind"] == "conv_m":
            p["cfg"] = ConvMConfig.from_dict(p["cfg"])
        return cls(kind=d["kind"], params=p,
                   freeze=d.get("freeze", False), lr_mult=d.get("lr_mult", 1.0))


@dataclass
class NetworkSpec:
    """Ordered layer list; index 0 must be an ``input`` entry."""

    layers: list[LayerSpec]

    def validate(self) -> None:
        if not self.layers or self.layers[0].kind != "input":
            raise ValueError("spec must start with an 'input' layer")
        for i, e in enumerate(self.layers):
            if e.kind not in LAYER_KINDS:
                raise ValueError(f"layer {i}: unknown kind {e.kind!r}")
        propagate_shapes(self)

    def to_dict(self) -> dict:
        return {"layers": [e.to_dict() for e in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(layers=[LayerSpec.from_dict(e) for e in d["layers"]])

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def conv_m_indices(self) -> list[int]:
        return [i for i, e in enumerate(self.layers) if e.kind == "conv_m"]

    def maxpool_indices(self) -> list[int]:
        return [i for i, e in enumerate(self.layers) if e.kind == "maxpool"]

    def layer_name(self, i: int) -> str:
        return f"layer{i + 1}"


def _ceil_pool(h, k, s):
    return -(-(h - k) // s) + 1


def propagate_shapes(spec: NetworkSpec) -> list[tuple[int, int, int]]:
    """Per-layer output shapes (C, H, W); linear/avgpool report (C, 1, 1).

    Raises ValueError naming the offending layer index when a layer cannot
    consume its input shape.
    """
    shapes = []
    c = h = w = None
    for i, e in enumerate(spec.layers):
        p = e.params
        try:
            if e.kind == "input":
                c, h, w = p["channels"], p["height"], p["width"]
            elif e.kind == "conv":
                k, s, pad = p["k"], p.get("stride", 1), p.get("padding", 0)
                h = (h + 2 * pad - k) // s + 1
                w = (w + 2 * pad - k) // s + 1
                if h < 1 or w < 1:
                    raise ValueError("conv output collapsed to zero size")
                c = p["out_channels"]
            elif e.kind == "maxpool":
                k, s = p["k"], p["stride"]
                if k > h or k > w:
                    raise ValueError(f"pool window {k} exceeds input {h}x{w}")
                h, w = _ceil_pool(h, k, s), _ceil_pool(w, k, s)
            elif e.kind == "conv_m":
                cfg: ConvMConfig = p["cfg"]
                cfg.validate()
                if cfg.n_in != c:
                    raise ValueError(f"conv_m expects {cfg.n_in} input channels, got {c}")
                c = cfg.out_channels
            elif e.kind == "avgpool":
                k, s = p["k"], p["stride"]
                if k > h or k > w:
                    raise ValueError(f"pool window {k} exceeds input {h}x{w}")
                h = (h - k) // s + 1
                w = (w - k) // s + 1
            elif e.kind == "linear":
                if h != 1 or w != 1:
                    raise ValueError("linear layer needs 1x1 spatial input")
                c = p["out_features"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"layer {i}: malformed params: {exc}") from exc
        except ValueError as exc:
            raise ValueError(f"layer {i}: {exc}") from exc
        shapes.append((c, h, w))
    return shapes


# ---------------------------------------------------------------------------
# reference and tiny specs
# ---------------------------------------------------------------------------

# (c1, c2, c3, c4, dic1, dic2, c5, dec1, dec2) per module, in depth order
_REFERENCE_PLANS = [
    (64, 64, 64, 64, 64, 64, 32, 32, 32),
    (128, 128, 128, 128, 128, 128, 64, 64, 64),
    (128, 128, 128, 128, 128, 128, 64, 64, 64),
    (144, 256, 256, 144, 256, 256, 64, 64, 64),
    (144, 256, 256, 144, 256, 256, 64, 64, 64),
    (160, 256, 280, 160, 256, 280, 64, 128, 128),
    (160, 256, 280, 160, 256, 280, 64, 128, 128),
]


def _cfg(n_in, plan, **kw):
    names = ("c1", "c2", "c3", "c4", "dic1", "dic2", "c5", "dec1", "dec2")
    return ConvMConfig(n_in=n_in, **dict(zip(names, plan)), **kw)


def reference_spec(num_classes: int = 1000, include_classifier: bool = True) -> NetworkSpec:
    """The full 224x224 network: 7x7 stem, four pooling stages, seven
    three-branch modules, global average pooling, optional linear classifier."""
    layers = [
        LayerSpec("input", {"channels": 3, "height": 224, "width": 224}),
        LayerSpec("conv", {"out_channels": 64, "k": 7, "stride": 1, "padding": 3}),
        LayerSpec("maxpool", {"k": 3, "stride": 2}),
        LayerSpec("conv_m", {"cfg": _cfg(64, _REFERENCE_PLANS[0])}),
        LayerSpec("maxpool", {"k": 3, "stride": 2}),
        LayerSpec("conv_m", {"cfg": _cfg(160, _REFERENCE_PLANS[1])}),
        LayerSpec("conv_m", {"cfg": _cfg(320, _REFERENCE_PLANS[2])}),
        LayerSpec("maxpool", {"k": 3, "stride": 2}),
        LayerSpec("conv_m", {"cfg": _cfg(320, _REFERENCE_PLANS[3])}),
        LayerSpec("conv_m", {"cfg": _cfg(576, _REFERENCE_PLANS[4])}),
        LayerSpec("maxpool", {"k": 3, "stride": 2}),
        LayerSpec("conv_m", {"cfg": _cfg(576, _REFERENCE_PLANS[5])}),
        LayerSpec("conv_m", {"cfg": _cfg(688, _REFERENCE_PLANS[6])}),
        LayerSpec("avgpool", {"k": 14, "stride": 1}),
    ]
    if include_classifier:
        layers.append(LayerSpec("linear", {"out_features": num_classes}))
    return NetworkSpec(layers)


def tiny_spec(num_classes: int = 10, input_size: int = 32,
              include_classifier: bool = True) -> NetworkSpec:
    """Desk-scale profile: 32x32 input, channel counts divided by 8 and the
    pooling chain shortened to three stages."""
    s = input_size
    layers = [
        LayerSpec("input", {"channels": 3, "height": s, "width": s}),
        LayerSpec("conv", {"out_channels": 8, "k": 7, "stride": 1, "padding": 3}),
        LayerSpec("maxpool", {"k": 3, "stride": 2}),
        LayerSpec("conv_m", {"cfg": _cfg(8, (8, 8, 8, 8, 8, 8, 4, 4, 4))}),
        LayerSpec("maxpool", {"k": 3, "stride": 2}),
        LayerSpec("conv_m", {"cfg": _cfg(20, (16, 16, 16, 16, 16, 16, 8, 8, 8))}),
        LayerSpec("maxpool", {"k": 3, "stride": 2}),
        LayerSpec("conv_m", {"cfg": _cfg(40, (20, 32, 36, 20, 32, 36, 8, 16, 16))}),
    ]
    spatial = s
    for _ in range(3):
        spatial = _ceil_pool(spatial, 3, 2)
    layers.append(LayerSpec("avgpool", {"k": spatial, "stride": 1}))
    if include_classifier:
        layers.append(LayerSpec("linear", {"out_features": num_classes}))
    return NetworkSpec(layers)


def regular_conv_spec(spec: NetworkSpec) -> NetworkSpec:
    """Ablation variant: dilated and transposed branches become regular convs
    with the same channel plan (dilation rates 1; weights are unaffected, so
    the parameter census is unchanged)."""
    out = NetworkSpec.from_dict(spec.to_dict())
    for i in out.conv_m_indices():
        cfg = out.layers[i].params["cfg"]
        cfg.dilations = (1, 1)
        out.layers[i].params["regular_only"] = True
    return out


# ---------------------------------------------------------------------------
# built network
# ---------------------------------------------------------------------------


class ForwardState:
    """Everything a single forward pass produced beyond its output: per-layer
    outputs, pooling index maps, and the three branch outputs of each module."""

    def __init__(self, x: Tensor):
        self.input = x
        self.layer_outputs: dict[int, Tensor] = {}
        self.pool_indices: dict[int, np.ndarray] = {}
        self.pool_source_hw: dict[int, tuple[int, int]] = {}
        self.branch_taps: dict[int, dict[str, Tensor]] = {}
        self.features: Tensor | None = None  # flattened avgpool output
        self.logits: Tensor | None = None


class Network:
    """A built model: encoder stack plus optional classifier / DA head /
    reconstruction decoders."""

    def __init__(self, spec: NetworkSpec, *, rng=None, dtype=np.float32):
        spec.validate()
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.dtype = dtype
        self.shapes = propagate_shapes(spec)
        self.modules: dict[int, object] = {}
        self.head: list[Linear] | None = None
        self.num_classes: int | None = None
        self.decoders: list["Decoder"] | None = None
        c = None
        for i, e in enumerate(spec.layers):
            p = e.params
            if e.kind == "input":
                c = p["channels"]
            elif e.kind == "conv":
                self.modules[i] = Conv2d(c, p["out_channels"], p["k"],
                                         stride=p.get("stride", 1),
                                         padding=p.get("padding", 0),
                                         rng=rng, dtype=dtype)
            elif e.kind == "conv_m":
                if p.get("regular_only"):
                    self.modules[i] = RegularConvM(p["cfg"], rng=rng, dtype=dtype)
                else:
                    self.modules[i] = ConvM(p["cfg"], rng=rng, dtype=dtype)
            elif e.kind == "linear":
                feat = self.shapes[i - 1][0]
                self.modules[i] = Linear(feat, p["out_features"], rng=rng, dtype=dtype)
            c = self.shapes[i][0]

    # -- structure edits -----------------------------------------------------

    @property
    def feature_dim(self) -> int:
        for i, e in enumerate(self.spec.layers):
            if e.kind == "avgpool":
                return self.shapes[i][0]
        raise ValueError("network has no avgpool stage")

    def remove_classifier(self) -> None:
        idx = [i for i, e in enumerate(self.spec.layers) if e.kind == "linear"]
        for i in idx:
            self.modules.pop(i, None)
        self.spec = NetworkSpec([e for e in self.spec.layers if e.kind != "linear"])
        self.shapes = propagate_shapes(self.spec)

    def has_classifier(self) -> bool:
        return any(e.kind == "linear" for e in self.spec.layers)

    # -- parameters ------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, e in enumerate(self.spec.layers):
            mod = self.modules.get(i)
            if mod is None:
                continue
            base = self.spec.layer_name(i)
            for pname, t in mod.parameters():
                out[f"{base}.{pname}"] = t
        if self.head is not None:
            for j, lin in enumerate(self.head, start=1):
                out[f"head.fc{j}.weight"] = lin.weight
        if self.decoders is not None:
            for d in self.decoders:
                for pname, t in d.parameters():
                    out[f"{d.name}.{pname}"] = t
        return out

    def lr_multipliers(self, freeze_names: set[str] | None = None,
                       new_layer_mult: float = 10.0) -> dict[str, float]:
        """Per-parameter factors: spec-level freeze/lr_mult for the encoder,
        ``new_layer_mult`` for heads and decoders, 0 for ``freeze_names``."""
        freeze_names = freeze_names or set()
        mults: dict[str, float] = {}
        for i, e in enumerate(self.spec.layers):
            if self.modules.get(i) is None:
                continue
            base = self.spec.layer_name(i)
            m = 0.0 if (e.freeze or base in freeze_names) else e.lr_mult
            for pname, _ in self.modules[i].parameters():
                mults[f"{base}.{pname}"] = m
        for name in self.parameters():
            if name.startswith(("head.", "decoder")):
                mults[name] = new_layer_mult
        return mults

    def param_census(self) -> int:
        return sum(int(p.size) for p in self.parameters().values())

    # -- forward -------------------------------------------------------------

    def forward(self, x: Tensor, *, training=False, rng=None,
                with_decoders=False) -> ForwardState:
        st = ForwardState(x)
        cur = x
        for i, e in enumerate(self.spec.layers):
            p = e.params
            if e.kind == "input":
                pass
            elif e.kind == "conv":
                cur = T.relu(self.modules[i](cur))
            elif e.kind == "maxpool":
                st.pool_source_hw[i] = cur.shape[2:]
                cur, idx = T.maxpool2d_with_indices(cur, p["k"], p["stride"])
                st.pool_indices[i] = idx
            elif e.kind == "conv_m":
                cur, taps = self.modules[i].forward_with_taps(cur, training=training, rng=rng)
                st.branch_taps[i] = taps
            elif e.kind == "avgpool":
                cur = T.avgpool2d(cur, p["k"], p["stride"])
                st.features = T.flatten2d(cur)
                cur = st.features
            elif e.kind == "linear":
                cur = self.modules[i](cur)
                st.logits = cur
            st.layer_outputs[i] = cur
        if self.head is not None:
            if st.features is None:
                raise ValueError("DA head needs an avgpool stage")
            h = T.relu(self.head[0](st.features))
            st.logits = self.head[1](h)
        if with_decoders:
            if self.decoders is None:
                raise ValueError("no decoders attached")
            st.reconstructions = [d.forward(st) for d in self.decoders]
        return st

    def predict(self, x: Tensor) -> np.ndarray:
        st = self.forward(x, training=False)
        if st.logits is None:
            raise ValueError("model has no classifier or head")
        return st.logits.data.argmax(axis=1)


class RegularConvM(ConvM):
    """Ablation module: identical channel plan, but the dilated convs run at
    rate 1 and the transposed convs are replaced by regular same-size convs."""

    def __init__(self, cfg: ConvMConfig, *, rng, dtype=np.float32):
        cfg = ConvMConfig.from_dict({**cfg.to_dict(), "dilations": [1, 1]})
        super().__init__(cfg, rng=rng, dtype=dtype)
        k, g = cfg.k, cfg.groups
        kw = dict(rng=rng, dtype=dtype)
        self.dec1 = Conv2d(cfg.c5, cfg.dec1, k, padding=(k - 1) // 2, groups=g, **kw)
        self.dec2 = Conv2d(cfg.dec1, cfg.dec2, k, padding=(k - 1) // 2, groups=g, **kw)


# ---------------------------------------------------------------------------
# DA attachments
# ---------------------------------------------------------------------------


def attach_da_heads(net: Network, num_classes: int, *, rng=None,
                    hidden: int = 256) -> Network:
    """Replace the classification linear with a two-layer prediction head
    (feature_dim -> hidden -> num_classes); new layers train at 10x LR."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = rng or np.random.default_rng(0)
    if net.has_classifier():
        net.remove_classifier()
    net.head = [Linear(net.feature_dim, hidden, rng=rng, dtype=net.dtype),
                Linear(hidden, num_classes, rng=rng, dtype=net.dtype)]
    net.num_classes = num_classes
    return net


class Decoder:
    """Alternating unpool / 3x3 conv chain restoring the input resolution.

    Each unpool reuses the index map of one encoder pooling layer, walking the
    pooling chain backwards from the tap, so per-stage conv widths are forced
    to the channel count that pooling layer saw; the stage after the last
    unpool halves the width (floor, minimum 16) before a 1x1 conv back to the
    input channel count.
    """

    def __init__(self, name, tap_layer, pool_chain, tap_channels,
                 pool_channels, input_channels, *, rng, dtype=np.float32):
        self.name = name
        self.tap_layer = tap_layer
        self.pool_chain = list(pool_chain)  # encoder pool indices, deepest first
        self.convs: list[tuple[str, Conv2d]] = []
        kw = dict(rng=rng, dtype=dtype)
        cur = tap_channels
        first_need = pool_channels[self.pool_chain[0]]
        self.proj = None
        if cur != first_need:
            self.proj = Conv2d(cur, first_need, 1, **kw)
            cur = first_need
        for si, pool_i in enumerate(self.pool_chain):
            if si + 1 < len(self.pool_chain):
                nxt = pool_channels[self.pool_chain[si + 1]]
            else:
                nxt = max(cur // 2, 16)
            self.convs.append((f"stage{si + 1}", Conv2d(cur, nxt, 3, padding=1, **kw)))
            cur = nxt
        self.final = Conv2d(cur, input_channels, 1, **kw)

    def parameters(self):
        out = []
        if self.proj is not None:
            out.append(("proj.weight", self.proj.weight))
        for sname, conv in self.convs:
            out.append((f"{sname}.weight", conv.weight))
        out.append(("final.weight", self.final.weight))
        return out

    def n_convs(self) -> int:
        return len(self.convs) + 1 + (self.proj is not None)

    def forward(self, st: ForwardState) -> Tensor:
        cur = st.layer_outputs[self.tap_layer]
        if self.proj is not None:
            cur = T.relu(self.proj(cur))
        for (_, conv), pool_i in zip(self.convs, self.pool_chain):
            if pool_i not in st.pool_indices:
                raise ValueError(f"{self.name}: pooling layer {pool_i} has no "
                                 "recorded indices (run the encoder first)")
            cur = T.unpool2d(cur, st.pool_indices[pool_i], st.pool_source_hw[pool_i])
            cur = T.relu(conv(cur))
        return self.final(cur)


def attach_decoders(net: Network, *, rng=None) -> Network:
    """Attach the two reconstruction decoders: D1 taps the deepest module
    output and unpools through every pooling layer; D2 taps the stage before
    the last pooling layer and unpools through the remaining chain."""
    rng = rng or np.random.default_rng(0)
    pools = net.spec.maxpool_indices()
    if len(pools) < 2:
        raise ValueError("need at least two pooling stages for two decoders")
    convms = net.spec.conv_m_indices()
    input_channels = net.spec.layers[0].params["channels"]
    pool_channels = {i: net.shapes[i][0] for i in pools}

    d1_tap = convms[-1]
    d2_tap = pools[-1] - 1  # output feeding the last pooling layer
    net.decoders = [
        Decoder("decoder1", d1_tap, list(reversed(pools)), net.shapes[d1_tap][0],
                pool_channels, input_channels, rng=rng, dtype=net.dtype),
        Decoder("decoder2", d2_tap, list(reversed(pools[:-1])), net.shapes[d2_tap][0],
                pool_channels, input_channels, rng=rng, dtype=net.dtype),
    ]
    return net


def strip_decoders(net: Network) -> Network:
    net.decoders = None
    return net


def build_network(spec: NetworkSpec, *, rng=None, dtype=np.float32) -> Network:
    return Network(spec, rng=rng, dtype=dtype)
