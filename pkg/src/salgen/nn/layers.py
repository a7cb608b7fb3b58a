"""Dense-tensor layers with explicit forward/backward rules.

Every layer works on batched row-major float arrays. Image tensors are
channels-last, (n, height, width, channels): im2col then needs no
transposes, which is what keeps CPU training affordable. Vectors are
(n, dim). forward returns the output together with an opaque context that
backward consumes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, ctx, gy):
        """Return (input_grad, param_grads) for the recorded forward pass."""
        raise NotImplementedError

    def input_grad(self, ctx, gy):
        """Input gradient only; overridden where param grads can be skipped."""
        return self.backward(ctx, gy)[0]

    def config(self) -> dict:
        return {"kind": self.kind}

    def init(self, rng: np.random.Generator, dtype) -> None:
        pass


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.params = {"w": None, "b": None}

    def init(self, rng, dtype):
        scale = np.sqrt(2.0 / self.in_dim)
        self.params["w"] = (rng.standard_normal((self.in_dim, self.out_dim)) * scale).astype(dtype)
        self.params["b"] = np.zeros(self.out_dim, dtype=dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch("dense expects (n, %d), got %s" % (self.in_dim, (x.shape,)))
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, ctx, gy):
        x = ctx
        return gy @ self.params["w"].T, {"w": x.T @ gy, "b": gy.sum(axis=0)}

    def input_grad(self, ctx, gy):
        return gy @ self.params["w"].T

    def config(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}


def _im2col(x, kernel, stride, pad):
    """Padded (n, h, w, c) -> column matrix (n*ho*wo, k*k*c) plus dims.

    Features are ordered (ki, kj, c) so each shift is one contiguous
    channel-block copy.
    """
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    n, hp, wp, c = x.shape
    ho = (hp - kernel) // stride + 1
    wo = (wp - kernel) // stride + 1
    col = np.empty((n, ho, wo, kernel * kernel * c), dtype=x.dtype)
    for idx in range(kernel * kernel):
        i, j = divmod(idx, kernel)
        col[..., idx * c : (idx + 1) * c] = x[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    return col.reshape(n * ho * wo, -1), (n, ho, wo)


class Conv2d(Layer):
    """Convolution, weight layout (in_ch, k, k, out_ch).

    Two execution paths, picked for CPU throughput at 28x28 scale: strided
    convolutions go through im2col + one GEMM; stride-1 convolutions use a
    shifted-slice GEMM per kernel tap, which avoids materializing the (much
    larger) stride-1 column matrix.
    """

    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, pad: int = 0):
        super().__init__()
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.params = {"w": None, "b": None}

    def init(self, rng, dtype):
        fan_in = self.in_ch * self.kernel * self.kernel
        scale = np.sqrt(2.0 / fan_in)
        shape = (self.in_ch, self.kernel, self.kernel, self.out_ch)
        self.params["w"] = (rng.standard_normal(shape) * scale).astype(dtype)
        self.params["b"] = np.zeros(self.out_ch, dtype=dtype)

    def _check(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_ch:
            raise ShapeMismatch("conv2d expects (n, h, w, %d), got %s" % (self.in_ch, (x.shape,)))

    def forward(self, x):
        self._check(x)
        k, s, p = self.kernel, self.stride, self.pad
        if s == 1:
            xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
            n, hp, wp, _ = xp.shape
            ho, wo = hp - k + 1, wp - k + 1
            y = np.empty((n, ho, wo, self.out_ch), dtype=x.dtype)
            ymat = y.reshape(-1, self.out_ch)
            ymat[:] = self.params["b"]
            for i in range(k):
                for j in range(k):
                    sl = np.ascontiguousarray(xp[:, i : i + ho, j : j + wo, :])
                    ymat += sl.reshape(-1, self.in_ch) @ self.params["w"][:, i, j, :]
            return y, (xp, x.shape, (ho, wo))
        col, (n, ho, wo) = _im2col(x, k, s, p)
        wmat = self.params["w"].transpose(1, 2, 0, 3).reshape(-1, self.out_ch)
        y = (col @ wmat + self.params["b"]).reshape(n, ho, wo, self.out_ch)
        return y, (col, x.shape, (ho, wo))

    def backward(self, ctx, gy):
        saved, xshape, (ho, wo) = ctx
        k, s, p = self.kernel, self.stride, self.pad
        g = gy.reshape(-1, self.out_ch)
        if s == 1:
            xp = saved
            gw = np.empty_like(self.params["w"])
            for i in range(k):
                for j in range(k):
                    sl = np.ascontiguousarray(xp[:, i : i + ho, j : j + wo, :])
                    gw[:, i, j, :] = sl.reshape(-1, self.in_ch).T @ g
            grads = {"w": gw, "b": g.sum(axis=0)}
        else:
            col = saved
            gw = (col.T @ g).reshape(k, k, self.in_ch, self.out_ch).transpose(2, 0, 1, 3)
            grads = {"w": np.ascontiguousarray(gw), "b": g.sum(axis=0)}
        return self._input_grad(gy, xshape, (ho, wo)), grads

    def input_grad(self, ctx, gy):
        _, xshape, dims = ctx
        return self._input_grad(gy, xshape, dims)

    def _input_grad(self, gy, xshape, dims):
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = dims
        n, h, w, _ = xshape
        gxp = np.zeros((n, h + 2 * p, w + 2 * p, self.in_ch), dtype=gy.dtype)
        g = gy.reshape(-1, self.out_ch)
        if s == 1:
            for i in range(k):
                for j in range(k):
                    gsl = (g @ self.params["w"][:, i, j, :].T).reshape(n, ho, wo, self.in_ch)
                    gxp[:, i : i + ho, j : j + wo, :] += gsl
        else:
            wmat = self.params["w"].transpose(1, 2, 0, 3).reshape(-1, self.out_ch)
            gcol = (g @ wmat.T).reshape(n, ho, wo, k * k, self.in_ch)
            for idx in range(k * k):
                i, j = divmod(idx, k)
                gxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += gcol[:, :, :, idx, :]
        return gxp[:, p : p + h, p : p + w] if p else gxp

    def config(self):
        return {
            "kind": self.kind,
            "in_ch": self.in_ch,
            "out_ch": self.out_ch,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
        }


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, ctx, gy):
        return gy * ctx, {}


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        # clamp keeps float32 exp in range; saturated outputs are unchanged
        y = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
        return y, y

    def backward(self, ctx, gy):
        y = ctx
        return gy * y * (1.0 - y), {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, ctx, gy):
        return gy.reshape(ctx), {}


class Reshape(Layer):
    """Reshape the per-sample trailing dimensions to a fixed target."""

    kind = "reshape"

    def __init__(self, target: tuple[int, ...]):
        super().__init__()
        self.target = tuple(target)

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.target), x.shape

    def backward(self, ctx, gy):
        return gy.reshape(ctx), {}

    def config(self):
        return {"kind": self.kind, "target": list(self.target)}


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, kernel: int, stride: int | None = None):
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeMismatch("maxpool2d expects (n, h, w, c), got %s" % (x.shape,))
        k, s = self.kernel, self.stride
        win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo, c = win.shape[:4]
        flat = win.reshape(n, ho, wo, c, k * k)
        arg = flat.argmax(axis=4)
        y = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
        return y, (arg, x.shape, (ho, wo))

    def backward(self, ctx, gy):
        arg, xshape, (ho, wo) = ctx
        k, s = self.kernel, self.stride
        gx = np.zeros(xshape, dtype=gy.dtype)
        for i in range(k):
            for j in range(k):
                sel = arg == (i * k + j)
                gx[:, i : i + s * ho : s, j : j + s * wo : s] += gy * sel
        return gx, {}

    def config(self):
        return {"kind": self.kind, "kernel": self.kernel, "stride": self.stride}


class Upsample2d(Layer):
    """Nearest-neighbor upsampling by an integer factor."""

    kind = "upsample2d"

    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeMismatch("upsample2d expects (n, h, w, c), got %s" % (x.shape,))
        f = self.factor
        return x.repeat(f, axis=1).repeat(f, axis=2), x.shape

    def backward(self, ctx, gy):
        n, h, w, c = ctx
        f = self.factor
        return gy.reshape(n, h, f, w, f, c).sum(axis=(2, 4)), {}

    def config(self):
        return {"kind": self.kind, "factor": self.factor}


_LAYER_KINDS = {
    cls.kind: cls
    for cls in (Dense, Conv2d, ReLU, Sigmoid, Flatten, Reshape, MaxPool2d, Upsample2d)
}


def build_layer(cfg: dict) -> Layer:
    """Construct an uninitialized layer from its config dict."""
    kind = cfg["kind"]
    if kind not in _LAYER_KINDS:
        raise ValueError("unknown layer kind %r" % kind)
    kwargs = {k: v for k, v in cfg.items() if k != "kind"}
    if kind == "reshape":
        kwargs["target"] = tuple(kwargs["target"])
    return _LAYER_KINDS[kind](**kwargs)
