"""Compact U-Net style encoder-decoders for the colorspace and segmentation branches."""

import os
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import csdt
from .autodiff import Tensor


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int
    out_channels: int
    depth: int = 3
    base_width: int = 8
    skip_connections: bool = True
    negative_slope: float = 0.1  # leaky activations; 0 gives plain relu

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.depth < 0 or self.base_width < 1:
            raise ValueError("depth must be >= 0 and base_width >= 1")
        if not 0.0 <= self.negative_slope < 1.0:
            raise ValueError("negative_slope must lie in [0, 1)")

    def width(self, level):
        return self.base_width * 2**level

    def layer_shapes(self):
        """Ordered (name, shape) of every parameter."""
        shapes = []

        def conv(name, k, cin, cout):
            shapes.append((f"{name}.w", (k, k, cin, cout)))
            shapes.append((f"{name}.b", (cout,)))

        if self.depth == 0:
            conv("head", 3, self.in_channels, self.out_channels)
            return shapes
        cin = self.in_channels
        for lvl in range(self.depth):
            conv(f"enc{lvl}.0", 3, cin, self.width(lvl))
            conv(f"enc{lvl}.1", 3, self.width(lvl), self.width(lvl))
            cin = self.width(lvl)
        conv("mid.0", 3, cin, self.width(self.depth))
        conv("mid.1", 3, self.width(self.depth), self.width(self.depth))
        for lvl in reversed(range(self.depth)):
            w = self.width(lvl)
            shapes.append((f"up{lvl}.w", (2, 2, self.width(lvl + 1), w)))
            shapes.append((f"up{lvl}.b", (w,)))
            conv(f"dec{lvl}.0", 3, 2 * w if self.skip_connections else w, w)
            conv(f"dec{lvl}.1", 3, w, w)
        conv("head", 1, self.base_width, self.out_channels)
        return shapes


class UNet:
    """Encoder-decoder with sigmoid output.

    Parameters live in ``self.params`` (name -> tracked :class:`Tensor`).
    """

    def __init__(self, spec, seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.params = {}
        for name, shape in spec.layer_shapes():
            if name.endswith(".b"):
                value = np.zeros(shape)
            else:
                fan_in = shape[0] * shape[1] * shape[2]
                value = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            self.params[name] = Tensor(value, requires_grad=True)

    def n_parameters(self):
        return sum(p.data.size for p in self.params.values())

    def logits(self, x, track=True):
        """Pre-sigmoid output. ``track=False`` evaluates without building a graph."""
        x = ad.as_tensor(x)
        spec = self.spec
        params = self.params if track else {k: Tensor(v.data) for k, v in self.params.items()}

        def conv(h, name):
            return ad.conv2d(h, params[f"{name}.w"], params[f"{name}.b"])

        def act(h):
            return ad.leaky_relu(h, spec.negative_slope)

        if x.ndim != 4 or x.shape[3] != spec.in_channels:
            raise ad.ShapeError(
                f"UNet: expected (N, H, W, {spec.in_channels}) input, got shape {x.shape}"
            )
        size = 2**spec.depth
        if x.shape[1] % size or x.shape[2] % size:
            raise ad.ShapeError(
                f"UNet: spatial extent {x.shape[1:3]} must be divisible by {size} for depth {spec.depth}"
            )
        if spec.depth == 0:
            return conv(x, "head")
        skips = []
        for lvl in range(spec.depth):
            x = act(conv(x, f"enc{lvl}.0"))
            x = act(conv(x, f"enc{lvl}.1"))
            skips.append(x)
            x = ad.maxpool2x(x)
        x = act(conv(x, "mid.0"))
        x = act(conv(x, "mid.1"))
        for lvl in reversed(range(spec.depth)):
            x = ad.upconv2x(x, params[f"up{lvl}.w"], params[f"up{lvl}.b"])
            if spec.skip_connections:
                x = ad.concat([skips[lvl], x], axis=-1)
            x = act(conv(x, f"dec{lvl}.0"))
            x = act(conv(x, f"dec{lvl}.1"))
        return conv(x, "head")

    def __call__(self, x, track=True):
        return ad.sigmoid(self.logits(x, track))


class ModelPair:
    """Colorspace net (3 -> d_cs) followed by a segmentation net (d_cs -> 1).

    Either net may be absent: ``seg_net=None`` gives the discriminant-only
    baseline, ``colorspace_net=None`` a plain segmentation model on RGB.
    """

    def __init__(self, colorspace_net=None, seg_net=None):
        if colorspace_net is None and seg_net is None:
            raise ValueError("ModelPair needs at least one network")
        if colorspace_net is not None and seg_net is not None:
            if colorspace_net.spec.out_channels != seg_net.spec.in_channels:
                raise ValueError("colorspace output channels must equal segmentation input channels")
        self.colorspace_net = colorspace_net
        self.seg_net = seg_net

    @classmethod
    def build(cls, d_cs, depth=3, base_width=8, seed=0, colorspace=True, segmentation=True):
        cs = seg = None
        if colorspace:
            cs = UNet(NetworkSpec(3, d_cs, depth, base_width), seed=seed)
        if segmentation:
            seg = UNet(NetworkSpec(d_cs if colorspace else 3, 1, depth, base_width), seed=seed + 1)
        return cls(cs, seg)

    @property
    def params(self):
        out = {}
        for prefix, net in (("colorspace", self.colorspace_net), ("seg", self.seg_net)):
            if net is not None:
                out.update({f"{prefix}/{k}": v for k, v in net.params.items()})
        return out

    def forward_colorspace(self, x, track=True):
        if self.colorspace_net is None:
            raise ValueError("this model has no colorspace network")
        return self.colorspace_net(x, track)

    def forward_segmentation(self, y, track=True):
        if self.seg_net is None:
            raise ValueError("this model has no segmentation network")
        return self.seg_net(y, track)

    def forward(self, x, track=True):
        """Returns (Y or None, M_hat or None)."""
        y = self.forward_colorspace(x, track) if self.colorspace_net is not None else None
        probs = None
        if self.seg_net is not None:
            probs = self.forward_segmentation(y if y is not None else x, track)
        return y, probs

    def snapshot(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def restore(self, values):
        for k, p in self.params.items():
            p.data = np.array(values[k], dtype=np.float64)


# --- checkpoint files ------------------------------------------------------

WEIGHTS_FILE = "weights.csdt"
MANIFEST_FILE = "manifest.txt"


def _spec_lines(prefix, spec):
    return [f"{prefix}.{f.name} = {getattr(spec, f.name)}" for f in fields(spec)]


def save_checkpoint(directory, model, config_lines=(), extra=None):
    """Write ``weights.csdt`` (concatenated CSDT records) and ``manifest.txt``.

    The manifest holds key = value lines for the network specs, the supplied
    config lines and ``extra`` entries, then one ``param`` line per tensor
    with name, shape and byte offset/length inside the weights file.
    """
    os.makedirs(directory, exist_ok=True)
    lines = []
    for prefix, net in (("colorspace", model.colorspace_net), ("seg", model.seg_net)):
        if net is not None:
            lines += _spec_lines(prefix, net.spec)
    lines += list(config_lines)
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    offset = 0
    blobs = []
    for name, p in model.params.items():
        blob = csdt.encode(p.data)
        shape = "x".join(str(s) for s in p.shape)
        lines.append(f"param {name} {shape} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    with open(os.path.join(directory, WEIGHTS_FILE), "wb") as fh:
        fh.write(b"".join(blobs))
    with open(os.path.join(directory, MANIFEST_FILE), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_value(text):
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_manifest(directory):
    """Returns (key/value dict, list of (name, shape, offset, length))."""
    entries, params = {}, []
    with open(os.path.join(directory, MANIFEST_FILE)) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("param "):
                _, name, shape, off, length = line.split()
                dims = tuple(int(s) for s in shape.split("x")) if shape else ()
                params.append((name, dims, int(off), int(length)))
            else:
                key, _, value = line.partition("=")
                entries[key.strip()] = value.strip()
    return entries, params


def load_checkpoint(directory):
    """Rebuild a :class:`ModelPair` from a checkpoint directory.

    Returns:
        (model, manifest key/value dict)
    """
    entries, params = read_manifest(directory)
    nets = {}
    for prefix in ("colorspace", "seg"):
        keys = {f.name: entries.get(f"{prefix}.{f.name}") for f in fields(NetworkSpec)}
        if keys["in_channels"] is None:
            nets[prefix] = None
            continue
        nets[prefix] = UNet(NetworkSpec(**{k: _parse_value(v) for k, v in keys.items()}))
    model = ModelPair(nets["colorspace"], nets["seg"])
    with open(os.path.join(directory, WEIGHTS_FILE), "rb") as fh:
        buf = fh.read()
    store = model.params
    for name, shape, off, length in params:
        arr, end = csdt.decode(buf, off)
        if end - off != length or arr.shape != shape:
            raise csdt.FormatError(f"{directory}: parameter {name} does not match its manifest entry")
        if name not in store:
            raise csdt.FormatError(f"{directory}: unknown parameter {name}")
        store[name].data = arr
    return model, entries
