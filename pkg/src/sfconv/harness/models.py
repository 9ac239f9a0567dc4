"""Desk-scale backbones built from full or factorized convolutions.

Layers keep the cache of their last training forward pass; a model's
``backward`` walks them in reverse and returns a flat ``{"layer.param": grad}``
dictionary.  Parameters live in ``model.params`` under the same names.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import complexity as cx
from ..factorized import DEFAULT_RANK, FactorizedFilter, init_factorized, sfconv_backward, sfconv_forward
from ..nn import ops
from ..nn.ops import ConvConfig


class Layer:
    name = ""
    params: dict

    def __init__(self):
        self.params = {}
        self._cache = None

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, g):
        """Return (grad wrt input, {param name: grad})."""
        raise NotImplementedError

    def flops(self, shape):
        raise NotImplementedError


class Conv2d(Layer):
    kind = "full"

    def __init__(self, name, c_in, c_out, k, rng, stride=1, padding=None, bias=True):
        super().__init__()
        self.name = name
        self.cfg = ConvConfig.square(c_in, c_out, k, stride, k // 2 if padding is None else padding)
        std = np.sqrt(2.0 / (c_in * k * k))
        self.params["weight"] = rng.normal(0.0, std, size=self.cfg.weight_shape)
        if bias:
            self.params["bias"] = np.zeros(c_out)

    def forward(self, x, train=True):
        out, cache = ops.conv2d_forward(x, self.params["weight"], self.params.get("bias"), self.cfg)
        if train:
            self._cache = cache
        return out

    def backward(self, g):
        grad = ops.conv2d_backward(g, self._cache)
        return grad.input, grad.params

    def flops(self, shape):
        c, h, w = shape
        ho, wo = self.cfg.output_hw(h, w)
        return cx.conv_flops(self.cfg, h, w, "bias" in self.params), (self.cfg.out_channels, ho, wo)


class SFConv2d(Layer):
    kind = "sfconv"

    def __init__(self, name, c_in, c_out, k, rng, rank=DEFAULT_RANK, stride=1, padding=None, bias=True):
        super().__init__()
        self.name = name
        f = init_factorized(c_in, c_out, k, rank, stride=stride, padding=padding, bias=bias, rng=rng)
        self.cfg = f.cfg
        self.rank = rank
        self.params["q"] = f.q_filters
        self.params["p"] = f.p_filters
        if bias:
            self.params["bias"] = f.bias

    @property
    def filter(self) -> FactorizedFilter:
        return FactorizedFilter(self.params["q"], self.params["p"], self.params.get("bias"), self.cfg)

    def forward(self, x, train=True):
        out, cache = sfconv_forward(x, self.filter)
        if train:
            self._cache = cache
        return out

    def backward(self, g):
        grad = sfconv_backward(g, self._cache)
        return grad.input, grad.params

    def flops(self, shape):
        c, h, w = shape
        ho, wo = self.cfg.output_hw(h, w)
        return (cx.sfconv_flops(self.cfg, self.rank, h, w, "bias" in self.params),
                (self.cfg.out_channels, ho, wo))


class ReLU(Layer):
    def __init__(self, name="relu"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        out, mask = ops.relu_forward(x)
        if train:
            self._cache = mask
        return out

    def backward(self, g):
        return ops.relu_backward(g, self._cache).input, {}

    def flops(self, shape):
        return cx.activation_flops(int(np.prod(shape))), shape


class Sigmoid(Layer):
    def __init__(self, name="sigmoid"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        out, y = ops.sigmoid_forward(x)
        if train:
            self._cache = y
        return out

    def backward(self, g):
        return ops.sigmoid_backward(g, self._cache).input, {}

    def flops(self, shape):
        return cx.activation_flops(int(np.prod(shape))), shape


class MaxPool2d(Layer):
    def __init__(self, name="pool"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        out, cache = ops.maxpool2d_forward(x)
        if train:
            self._cache = cache
        return out

    def backward(self, g):
        return ops.maxpool2d_backward(g, self._cache).input, {}

    def flops(self, shape):
        c, h, w = shape
        out = (c, h // 2, w // 2)
        return cx.maxpool_flops(int(np.prod(out))), out


class Upsample2x(Layer):
    def __init__(self, name="up"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        out, shape = ops.upsample2x_forward(x)
        if train:
            self._cache = shape
        return out

    def backward(self, g):
        return ops.upsample2x_backward(g, self._cache).input, {}

    def flops(self, shape):
        c, h, w = shape
        return 0, (c, 2 * h, 2 * w)


class Flatten(Layer):
    def __init__(self, name="flatten"):
        super().__init__()
        self.name = name

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._cache), {}

    def flops(self, shape):
        return 0, (int(np.prod(shape)),)


class Dense(Layer):
    def __init__(self, name, n_in, n_out, rng, bias=True):
        super().__init__()
        self.name = name
        self.params["weight"] = rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_out, n_in))
        if bias:
            self.params["bias"] = np.zeros(n_out)

    def forward(self, x, train=True):
        out, cache = ops.dense_forward(x, self.params["weight"], self.params.get("bias"))
        if train:
            self._cache = cache
        return out

    def backward(self, g):
        grad = ops.dense_backward(g, self._cache)
        return grad.input, grad.params

    def flops(self, shape):
        n_out, n_in = self.params["weight"].shape
        return cx.dense_flops(n_in, n_out, "bias" in self.params), (n_out,)


def make_conv(kind, name, c_in, c_out, k, rng, rank=DEFAULT_RANK, stride=1, padding=None):
    if kind == "sfconv":
        return SFConv2d(name, c_in, c_out, k, rng, rank=rank, stride=stride, padding=padding)
    if kind == "full":
        return Conv2d(name, c_in, c_out, k, rng, stride=stride, padding=padding)
    raise ValueError(f"unknown conv kind {kind!r} (expected 'full' or 'sfconv')")


class Model:
    """Shared plumbing: named parameter view, factorized-layer lookup, accounting."""

    layers: list

    @property
    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            for k, v in layer.params.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def set_params(self, values: dict) -> None:
        for layer in self.layers:
            for k in layer.params:
                key = f"{layer.name}.{k}"
                if key not in values:
                    raise KeyError(f"missing parameter {key}")
                v = np.asarray(values[key], dtype=np.float64)
                if v.shape != layer.params[k].shape:
                    raise ValueError(f"{key}: shape {v.shape} != {layer.params[k].shape}")
                layer.params[k] = v

    def factorized_layers(self) -> dict:
        return {l.name: l.filter for l in self.layers if isinstance(l, SFConv2d)}

    def conv_layers(self) -> list:
        return [l for l in self.layers if isinstance(l, (Conv2d, SFConv2d))]


class Sequential(Model):
    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, g):
        grads = {}
        for layer in reversed(self.layers):
            g, pg = layer.backward(g)
            for k, v in pg.items():
                grads[f"{layer.name}.{k}"] = v
        return grads

    def flops(self, shape):
        total = 0
        for layer in self.layers:
            f, shape = layer.flops(shape)
            total += f
        return total, shape


def classifier(kinds: Sequence[str], widths=(8, 16, 16, 32), in_channels=1, n_classes=3,
               image_size=32, k=3, rank=DEFAULT_RANK, seed=0) -> Sequential:
    """Four conv blocks (conv-relu, pooled after the first three), then a dense head."""
    if len(kinds) != len(widths):
        raise ValueError("need one conv kind per block")
    rng = np.random.default_rng(seed)
    layers = []
    c = in_channels
    size = image_size
    for i, (kind, width) in enumerate(zip(kinds, widths)):
        layers.append(make_conv(kind, f"conv{i + 1}", c, width, k, rng, rank))
        layers.append(ReLU(f"relu{i + 1}"))
        if i < len(widths) - 1:
            layers.append(MaxPool2d(f"pool{i + 1}"))
            size //= 2
        c = width
    layers.append(Flatten())
    layers.append(Dense("fc", c * size * size, n_classes, rng))
    return Sequential(layers)


class Segmenter(Model):
    """Three-level encoder-decoder with skip connections and a 1x1 sigmoid head.

    enc1 -> pool -> enc2 -> pool -> bottleneck -> up -> [.|enc2] -> dec2
    -> up -> [.|enc1] -> dec1 -> head
    """

    def __init__(self, kinds: Sequence[str], widths=(8, 16, 32), in_channels=1, k=3,
                 rank=DEFAULT_RANK, seed=0):
        if len(kinds) != 5:
            raise ValueError("segmenter needs 5 conv kinds (enc1, enc2, bottleneck, dec2, dec1)")
        w1, w2, w3 = widths
        rng = np.random.default_rng(seed)
        self.enc1 = make_conv(kinds[0], "enc1", in_channels, w1, k, rng, rank)
        self.enc2 = make_conv(kinds[1], "enc2", w1, w2, k, rng, rank)
        self.mid = make_conv(kinds[2], "mid", w2, w3, k, rng, rank)
        self.dec2 = make_conv(kinds[3], "dec2", w3 + w2, w2, k, rng, rank)
        self.dec1 = make_conv(kinds[4], "dec1", w2 + w1, w1, k, rng, rank)
        self.head = Conv2d("head", w1, 1, 1, rng, padding=0)
        self.acts = {n: ReLU(f"relu_{n}") for n in ("enc1", "enc2", "mid", "dec2", "dec1")}
        self.pool1, self.pool2 = MaxPool2d("pool1"), MaxPool2d("pool2")
        self.up2, self.up1 = Upsample2x("up2"), Upsample2x("up1")
        self.out = Sigmoid()
        self.layers = [self.enc1, self.enc2, self.mid, self.dec2, self.dec1, self.head]
        self._widths = (w1, w2, w3)

    def _conv(self, name, x, train):
        return self.acts[name].forward(getattr(self, name).forward(x, train), train)

    def forward(self, x, train=True):
        e1 = self._conv("enc1", x, train)
        e2 = self._conv("enc2", self.pool1.forward(e1, train), train)
        b = self._conv("mid", self.pool2.forward(e2, train), train)
        d2 = self._conv("dec2", np.concatenate([self.up2.forward(b, train), e2], axis=1), train)
        d1 = self._conv("dec1", np.concatenate([self.up1.forward(d2, train), e1], axis=1), train)
        return self.out.forward(self.head.forward(d1, train), train)

    def backward(self, g):
        grads = {}
        w1, w2, w3 = self._widths

        def back(name, g):
            g, _ = self.acts[name].backward(g)
            g, pg = getattr(self, name).backward(g)
            grads.update({f"{name}.{k}": v for k, v in pg.items()})
            return g

        g, _ = self.out.backward(g)
        g, pg = self.head.backward(g)
        grads.update({f"head.{k}": v for k, v in pg.items()})
        g = back("dec1", g)
        g_up1, g_e1 = g[:, :w2], g[:, w2:]
        g = back("dec2", self.up1.backward(g_up1)[0])
        g_up2, g_e2 = g[:, :w3], g[:, w3:]
        g = back("mid", self.up2.backward(g_up2)[0])
        g = back("enc2", self.pool2.backward(g)[0] + g_e2)
        back("enc1", self.pool1.backward(g)[0] + g_e1)
        return {k: grads[k] for k in self.params}

    def flops(self, shape):
        c, h, w = shape
        if h % 4 or w % 4:
            raise ValueError(f"segmenter needs spatial extents divisible by 4, got {(h, w)}")
        total = 0

        def run(layer, s):
            nonlocal total
            f, s = layer.flops(s)
            total += f
            return s

        w1, w2, w3 = self._widths
        e1 = run(self.acts["enc1"], run(self.enc1, shape))
        e2 = run(self.acts["enc2"], run(self.enc2, run(self.pool1, e1)))
        b = run(self.acts["mid"], run(self.mid, run(self.pool2, e2)))
        u2 = run(self.up2, b)
        d2 = run(self.acts["dec2"], run(self.dec2, (u2[0] + e2[0],) + u2[1:]))
        u1 = run(self.up1, d2)
        d1 = run(self.acts["dec1"], run(self.dec1, (u1[0] + e1[0],) + u1[1:]))
        out = run(self.out, run(self.head, d1))
        return total, out
