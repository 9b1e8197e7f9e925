"""Static BOPs / FLOPs / OPs and storage accounting.

Conventions (kept explicit so every number can be audited):

* a full-precision MAC counts as one FLOP;
* a conv or linear layer with 1-bit operands contributes
  ``out_h * out_w * n * m * k^2 * b_a * b_w`` BOPs and no MAC FLOPs;
* a binary layer with dynamic activation scaling adds the FLOPs of its
  scale path: channel sum of ``|I|`` (``n * in_h * in_w``), the ``k'``
  conv (``out_h * out_w * k^2``) and two pointwise products
  (``2 * m * out_h * out_w``);
* normalization, activations, element-wise adds and pooling cost one FLOP
  per element; bias adds one per output element;
* ``OPs = BOPs / 64 + FLOPs``;
* storage is ``b_w`` bits per weight, 32 bits per FP parameter and 32 bits
  per scale value (sigma, alpha per output channel, k entries); sizes are
  reported in MiB (2^20 bytes).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

MB = 2**20
OPS_BOPS_DIVISOR = 64
# published aggregate totals of the large W1A1 model and its FP baseline
PUBLISHED_ARCH = os.path.join(os.path.dirname(__file__), "data", "published_totals.arch")


def conv_bops(n: int, m: int, k: int, out_h: int, out_w: int, b_a: int, b_w: int) -> int:
    for name, v in (("n", n), ("m", m), ("k", k), ("out_h", out_h), ("out_w", out_w), ("b_a", b_a), ("b_w", b_w)):
        if v <= 0:
            raise ValueError(f"conv_bops: {name} must be positive, got {v}")
    return out_h * out_w * n * m * k * k * b_a * b_w


@dataclass
class LayerSpec:
    """One entry of a declarative architecture.

    ``kind`` is ``conv``, ``linear``, ``norm``, ``act``, ``add``, ``pool`` or
    ``other``.  ``other`` layers carry pre-computed totals (``bops``,
    ``flops``, ``size_mb``), which is how published aggregate numbers enter.
    """

    name: str
    kind: str
    n: int | None = None
    m: int | None = None
    k: int = 1
    out_h: int = 1
    out_w: int = 1
    in_h: int | None = None
    in_w: int | None = None
    b_w: int = 32
    b_a: int = 32
    bias: bool = True
    scaled: bool = True
    elements: int | None = None
    params: int | None = None
    bops: float | None = None
    flops: float | None = None
    size_mb: float | None = None


@dataclass
class LayerCost:
    name: str
    kind: str
    macs: int
    b_w: int
    b_a: int
    params: int
    bops: float
    flops: float
    storage_bits: float


@dataclass
class ArchSpec:
    name: str
    layers: list = field(default_factory=list)
    baseline: "ArchSpec | None" = None

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        base = d.get("baseline")
        return cls(
            name=d.get("name", "arch"),
            layers=[LayerSpec(**layer) for layer in d.get("layers", [])],
            baseline=cls.from_dict(base) if base else None,
        )

    @classmethod
    def load(cls, path) -> "ArchSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        d = {"name": self.name, "layers": [asdict(layer) for layer in self.layers]}
        if self.baseline is not None:
            d["baseline"] = self.baseline.to_dict()
        return d


def _require(layer: LayerSpec, *names):
    missing = [n for n in names if getattr(layer, n) is None]
    if missing:
        raise ValueError(f"layer {layer.name!r} ({layer.kind}) is missing shape fields {missing}")


def layer_cost(layer: LayerSpec) -> LayerCost:
    kind = layer.kind
    if kind == "other":
        bits = (layer.size_mb or 0.0) * MB * 8
        return LayerCost(layer.name, kind, 0, layer.b_w, layer.b_a, layer.params or 0,
                         float(layer.bops or 0.0), float(layer.flops or 0.0), bits)
    if kind in ("norm", "act", "add", "pool"):
        _require(layer, "elements")
        params = 2 * layer.n if kind == "norm" and layer.n else 0
        return LayerCost(layer.name, kind, 0, 32, 32, params, 0.0, float(layer.elements), 32.0 * params)
    if kind not in ("conv", "linear"):
        raise ValueError(f"layer {layer.name!r}: unknown kind {kind!r}")
    _require(layer, "n", "m")
    if layer.b_w not in (1, 32) or layer.b_a not in (1, 32):
        raise ValueError(f"layer {layer.name!r}: bit-widths must be 1 or 32")
    n, m = layer.n, layer.m
    k = layer.k if kind == "conv" else 1
    oh, ow = (layer.out_h, layer.out_w) if kind == "conv" else (1, 1)
    macs = oh * ow * n * m * k * k
    weights = n * m * k * k
    binary = layer.b_w < 32 or layer.b_a < 32
    flops = 0.0
    bops = 0.0
    bits = float(weights * layer.b_w)
    if binary:
        bops = float(conv_bops(n, m, k, oh, ow, layer.b_a, layer.b_w))
        if layer.scaled:
            in_h = layer.in_h if layer.in_h is not None else oh
            in_w = layer.in_w if layer.in_w is not None else ow
            flops += n * in_h * in_w + oh * ow * k * k + 2 * m * oh * ow
            bits += 32.0 * (1 + m + k * k)
    else:
        flops += macs
    params = weights
    if layer.bias:
        flops += m * oh * ow
        bits += 32.0 * m
        params += m
    return LayerCost(layer.name, kind, macs, layer.b_w, layer.b_a, params, bops, float(flops), bits)


def model_ops(arch: ArchSpec) -> dict:
    costs = [layer_cost(layer) for layer in arch.layers]
    bops = sum(c.bops for c in costs)
    flops = sum(c.flops for c in costs)
    bits = sum(c.storage_bits for c in costs)
    return {
        "bops": bops,
        "flops": flops,
        "ops": bops / OPS_BOPS_DIVISOR + flops,
        "size_mb": bits / 8 / MB,
        "per_layer": [asdict(c) for c in costs],
    }


def report(arch: ArchSpec, baseline: ArchSpec | None = None) -> dict:
    """Per-layer costs, totals and (given a baseline) storage/OPs savings."""
    baseline = baseline if baseline is not None else arch.baseline
    tot = model_ops(arch)
    out = {
        "name": arch.name,
        "per_layer": tot.pop("per_layer"),
        "totals": tot,
    }
    if baseline is not None:
        base = model_ops(baseline)
        base.pop("per_layer")
        out["baseline"] = {"name": baseline.name, "totals": base}
        out["savings"] = {
            "size_ratio": base["size_mb"] / tot["size_mb"] if tot["size_mb"] else float("inf"),
            "ops_ratio": base["ops"] / tot["ops"] if tot["ops"] else float("inf"),
        }
    return out


def unet_arch(spec, size: int, tbs_blocks=(), name: str | None = None) -> ArchSpec:
    """Layer list of :class:`~bitdiff.diffusion.unet.UNet` for one ``size x size`` sample."""
    from .diffusion.unet import UNetSpec  # noqa: F401  (type only)

    binary = spec.mode == "binary"
    bits = 1 if binary else 32
    L: list[LayerSpec] = []
    td = spec.temb_dim
    L.append(LayerSpec("temb1", "linear", n=td, m=2 * td))
    L.append(LayerSpec("temb1.act", "act", elements=2 * td))
    L.append(LayerSpec("temb2", "linear", n=2 * td, m=2 * td))
    L.append(LayerSpec("temb2.act", "act", elements=2 * td))

    def qconv(prefix, c_in, c_out, k, hw):
        L.append(LayerSpec(prefix, "conv", n=c_in, m=c_out, k=k, out_h=hw, out_w=hw, in_h=hw, in_w=hw,
                           b_w=bits, b_a=bits))
        if spec.shortcut and (c_in <= c_out or c_in % c_out == 0):
            L.append(LayerSpec(prefix + ".shortcut", "add", elements=c_out * hw * hw))

    def resblock(prefix, c_in, c_out, hw):
        L.append(LayerSpec(prefix + ".norm1", "norm", n=c_in, elements=c_in * hw * hw))
        L.append(LayerSpec(prefix + ".act1", "act", elements=c_in * hw * hw))
        qconv(prefix + ".conv1", c_in, c_out, 3, hw)
        L.append(LayerSpec(prefix + ".temb", "linear", n=2 * td, m=c_out))
        L.append(LayerSpec(prefix + ".temb_add", "add", elements=c_out * hw * hw))
        L.append(LayerSpec(prefix + ".norm2", "norm", n=c_out, elements=c_out * hw * hw))
        L.append(LayerSpec(prefix + ".act2", "act", elements=c_out * hw * hw))
        qconv(prefix + ".conv2", c_out, c_out, 3, hw)
        if c_in != c_out:
            qconv(prefix + ".skip", c_in, c_out, 1, hw)
        L.append(LayerSpec(prefix + ".residual", "add", elements=c_out * hw * hw))

    d, widths = spec.depth, spec.widths
    L.append(LayerSpec("conv_in", "conv", n=spec.in_channels, m=widths[0], k=3, out_h=size, out_w=size))
    c, hw = widths[0], size
    for m in range(d):
        resblock(f"down.{m}", c, widths[m], hw)
        c = widths[m]
        L.append(LayerSpec(f"down.{m}.pool", "pool", elements=c * hw * hw))
        hw //= 2
    resblock("mid", c, widths[d], hw)
    c_below = widths[d]
    for i, m in enumerate(reversed(range(d))):
        hw *= 2
        if (m + 2) in tbs_blocks:
            L.append(LayerSpec(f"up.{i}.tbs_blend", "add", elements=3 * c_below * hw * hw))
        resblock(f"up.{i}", widths[m] + c_below, widths[m], hw)
        c_below = widths[m]
    L.append(LayerSpec("norm_out", "norm", n=widths[0], elements=widths[0] * size * size))
    L.append(LayerSpec("act_out", "act", elements=widths[0] * size * size))
    L.append(LayerSpec("conv_out", "conv", n=widths[0], m=spec.in_channels, k=3, out_h=size, out_w=size))
    return ArchSpec(name or f"unet-{spec.mode}", L)
