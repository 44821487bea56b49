"""Dense-tensor numeric core: forward and backward passes for every layer
the metric model needs, with finite-difference verification helpers.

Tensors are plain numpy arrays. Layers operate on batched (N, C, H, W)
inputs; passing a single (C, H, W) tensor is accepted and treated as N=1.
Everything runs in float64 by default (tests) with float32 available for
training speed. There is no autodiff graph: each layer caches what its
hand-written backward needs, which keeps the whole stack inspectable and
lets Grad-CAM stop backpropagation at any layer boundary.
"""

import numpy as np

from .errors import ShapeError
from .rng import stream


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected 3D or 4D input, got shape {x.shape}")


# ----------------------------------------------------------------- conv2d


def conv2d(x, weights, bias, stride=1, pad=0):
    """Cross-correlation. Output size floor((H + 2*pad - k)/stride) + 1.

    Returns (out, cache). weights: (C_out, C_in, k, k); bias: (C_out,).
    """
    x, squeeze = _as_batch(x)
    n, cin, h, w = x.shape
    cout, cin2, k, k2 = weights.shape
    if k != k2:
        raise ShapeError("only square kernels are supported")
    if cin != cin2:
        raise ShapeError(f"input has {cin} channels, weights expect {cin2}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError("kernel larger than padded input")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    acc = np.zeros((n, ho, wo, cout), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            xs = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            acc += np.tensordot(xs, weights[:, :, ki, kj], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    out += bias[None, :, None, None]
    cache = (xp, x.shape, weights, stride, pad, squeeze)
    return (out[0] if squeeze else out), cache


def conv2d_backward(grad_out, cache):
    """Gradients of conv2d: returns (grad_input, grad_weights, grad_bias)."""
    xp, xshape, weights, stride, pad, squeeze = cache
    g, _ = _as_batch(grad_out)
    n, cin, h, w = xshape
    cout, _, k, _ = weights.shape
    ho, wo = g.shape[2], g.shape[3]
    grad_b = g.sum(axis=(0, 2, 3))
    grad_w = np.zeros_like(weights)
    gp = np.zeros_like(xp)
    gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # (n, ho, wo, cout)
    for ki in range(k):
        for kj in range(k):
            xs = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            grad_w[:, :, ki, kj] = np.tensordot(g, xs, axes=([0, 2, 3], [0, 2, 3]))
            spread = np.tensordot(gt, weights[:, :, ki, kj], axes=([3], [0]))
            gp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                spread.transpose(0, 3, 1, 2)
            )
    grad_x = gp[:, :, pad : pad + h, pad : pad + w] if pad else gp
    return (grad_x[0] if squeeze else grad_x), grad_w, grad_b


# ------------------------------------------------------------------- relu


def relu(x):
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(grad_out, cache):
    return grad_out * cache


# ------------------------------------------------------------------ simam


def simam(x, lam=1e-4):
    """Parameter-free attention: out = sigmoid(1/e*) * x.

    Per channel, with spatial mean mu and population variance v, each neuron
    t gets energy e* = 4(v + lam) / ((t - mu)^2 + 2v + 2lam), so
    1/e* = ((t - mu)^2 + 2v + 2lam) / (4(v + lam)). The sigmoid of that is
    the scaling factor, strictly inside (0, 1).
    """
    x, squeeze = _as_batch(x)
    n, c, h, w = x.shape
    if h * w < 2:
        raise ShapeError("simam needs at least 2 spatial neurons")
    mu = x.mean(axis=(2, 3), keepdims=True)
    a = x - mu
    v = (a * a).mean(axis=(2, 3), keepdims=True)
    q = 1.0 / (4.0 * (v + lam))
    z = (a * a + 2.0 * v + 2.0 * lam) * q
    s = 1.0 / (1.0 + np.exp(-z))
    out = s * x
    cache = (x, a, v, q, z, s, squeeze)
    return (out[0] if squeeze else out), cache


def simam_backward(grad_out, cache):
    x, a, v, q, z, s, squeeze = cache
    g, _ = _as_batch(grad_out)
    n, c, h, w = x.shape
    m = h * w
    dt = g * s
    dz = g * x * s * (1.0 - s)
    da = dz * 2.0 * a * q
    dv = (dz * 2.0 * q * (1.0 - 2.0 * z)).sum(axis=(2, 3), keepdims=True)
    da += (2.0 * a / m) * dv
    dt += da
    dmu = -da.sum(axis=(2, 3), keepdims=True)
    dt += dmu / m
    return dt[0] if squeeze else dt


# ---------------------------------------------------------------- dropout


def dropout(x, rate, mode="eval", rng=None, mask=None):
    """Inverted dropout. eval mode is the identity.

    In train mode each element is zeroed with probability `rate` and the
    survivors scaled by 1/(1-rate). Pass `mask` to reuse a frozen mask
    (finite-difference checks need deterministic forwards).
    """
    if not 0 <= rate < 1:
        raise ShapeError("dropout rate must be in [0, 1)")
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x, dtype=bool) if mask is None else mask
    if mode != "train":
        raise ShapeError(f"unknown dropout mode {mode!r}")
    if mask is None:
        if rng is None:
            raise ShapeError("train-mode dropout needs an rng or a frozen mask")
        mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate), mask


def dropout_backward(grad_out, mask, rate, mode="train"):
    if mode == "eval" or rate == 0.0:
        return grad_out
    return grad_out * mask / (1.0 - rate)


# ---------------------------------------------------------- fully connected


def fully_connected(x, weights, bias):
    """Affine map y = x @ W^T + b. weights: (out, in); x: (N, in) or (in,)."""
    x = np.asarray(x)
    squeeze = x.ndim == 1
    xb = x[None] if squeeze else x
    if xb.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"input dim {xb.shape[1]} does not match weights {weights.shape}"
        )
    out = xb @ weights.T + bias
    return (out[0] if squeeze else out), (xb, weights, squeeze)


def fully_connected_backward(grad_out, cache):
    xb, weights, squeeze = cache
    g = grad_out[None] if squeeze else grad_out
    grad_w = g.T @ xb
    grad_b = g.sum(axis=0)
    grad_x = g @ weights
    return (grad_x[0] if squeeze else grad_x), grad_w, grad_b


# ------------------------------------------------------------------ layers


class Layer:
    """Minimal layer protocol: forward caches, backward consumes the cache."""

    params = ()  # names of parameter attributes

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def param_items(self):
        return [(name, getattr(self, name)) for name in self.params]

    def grad_items(self):
        return [(name, getattr(self, "g_" + name)) for name in self.params]


class Conv2D(Layer):
    params = ("w", "b")

    def __init__(self, in_ch, out_ch, k=3, stride=1, pad=1, rng=None, dtype=np.float64):
        self.stride, self.pad = stride, pad
        fan_in = in_ch * k * k
        bound = np.sqrt(6.0 / fan_in)
        rng = rng or np.random.default_rng(0)
        self.w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        out, self._cache = conv2d(x, self.w, self.b, self.stride, self.pad)
        return out

    def backward(self, grad_out):
        gx, self.g_w, self.g_b = conv2d_backward(grad_out, self._cache)
        return gx


class ReLULayer(Layer):
    def forward(self, x, train=False, rng=None):
        out, self._cache = relu(x)
        return out

    def backward(self, grad_out):
        return relu_backward(grad_out, self._cache)


class SimAM(Layer):
    def __init__(self, lam=1e-4):
        self.lam = lam

    def forward(self, x, train=False, rng=None):
        out, self._cache = simam(x, self.lam)
        return out

    def backward(self, grad_out):
        return simam_backward(grad_out, self._cache)


class Dropout(Layer):
    def __init__(self, rate):
        self.rate = rate
        self._mask = None
        self.freeze_mask = False  # finite-difference checks set this

    def forward(self, x, train=False, rng=None):
        mode = "train" if train else "eval"
        self._mode = mode
        mask = self._mask if (self.freeze_mask and self._mask is not None) else None
        out, self._mask = dropout(x, self.rate, mode=mode, rng=rng, mask=mask)
        return out

    def backward(self, grad_out):
        return dropout_backward(grad_out, self._mask, self.rate, self._mode)


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        x, squeeze = _as_batch(x)
        self._shape = x.shape
        self._squeeze = squeeze
        out = x.reshape(x.shape[0], -1)
        return out[0] if squeeze else out

    def backward(self, grad_out):
        g = grad_out[None] if self._squeeze else grad_out
        g = g.reshape(self._shape)
        return g[0] if self._squeeze else g


class Dense(Layer):
    params = ("w", "b")

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float64):
        bound = np.sqrt(6.0 / in_dim)
        rng = rng or np.random.default_rng(0)
        self.w = rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        out, self._cache = fully_connected(x, self.w, self.b)
        return out

    def backward(self, grad_out):
        gx, self.g_w, self.g_b = fully_connected_backward(grad_out, self._cache)
        return gx


class Network:
    """A plain sequence of layers with whole- and partial-stack backward."""

    def __init__(self, layers):
        self.layers = list(layers)
        self._outputs = None

    def forward(self, x, train=False, rng=None):
        self._outputs = [x]
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
            self._outputs.append(x)
        return x

    def backward(self, grad_out, stop_at=0):
        """Backpropagate to layer index `stop_at` (0 = all the way to input).

        Returns the gradient with respect to the OUTPUT of layer stop_at-1
        (the input of layer stop_at). Parameter gradients are stored on each
        visited layer.
        """
        g = grad_out
        for layer in reversed(self.layers[stop_at:]):
            g = layer.backward(g)
        return g

    def output_of(self, layer_idx):
        """Cached forward output of layers[layer_idx] from the last forward."""
        return self._outputs[layer_idx + 1]

    def param_items(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.param_items():
                out.append((f"layer{i}.{name}", arr))
        return out

    def grad_items(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grad_items():
                out.append((f"layer{i}.{name}", arr))
        return out


# --------------------------------------------------------------- grad check


def grad_check(network, loss_fn, x, h=1e-5, samples_per_tensor=16, seed=0):
    """Compare analytic parameter gradients with central finite differences.

    loss_fn(network, x) -> scalar, and must call network.forward itself so
    that layer caches are fresh; the analytic gradients are taken from the
    layers after a loss_fn call followed by the caller's backward. Because
    finite-differencing every weight of a real model is infeasible, a seeded
    sample of entries per parameter tensor is checked.

    Central differences are only meaningful where the loss is smooth across
    the probed interval. Perturbing a conv bias shifts a whole channel's
    pre-activations, and units sitting on (or within h of) the ReLU kink
    make the numeric estimate one-sided while the analytic subgradient at 0
    is 0 by convention. Such entries are detected by comparing the forward
    and backward one-sided differences -- they split at a kink -- and are
    excluded from the comparison; a genuinely wrong analytic gradient still
    shows up on the smooth entries. Returns {param_name: {"max_rel_err",
    "checked", "skipped"}}; relative error is |a - n| / max(|a|, |n|, 1e-6).
    """
    rng = stream(seed, "test", 0)
    base = loss_fn(network, x)  # populate analytic gradients at the base point
    analytic_all = {name: g.copy() for name, g in network.grad_items()}
    report = {}

    def one_sided(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        lp = loss_fn(network, x)
        flat[i] = orig - step
        lm = loss_fn(network, x)
        flat[i] = orig
        return (lp - lm) / (2 * step), abs((lp - base) / step - (base - lm) / step)

    for name, arr in network.param_items():
        analytic = analytic_all[name]
        flat = arr.reshape(-1)
        n_entries = flat.size
        idx = (
            np.arange(n_entries)
            if n_entries <= samples_per_tensor
            else rng.choice(n_entries, size=samples_per_tensor, replace=False)
        )
        worst = 0.0
        checked = 0
        skipped = 0
        for i in idx:
            # A large forward/backward split means either a kink inside the
            # probed interval or plain curvature. Halving the step halves a
            # curvature gap but leaves a kink gap unchanged, so halve until
            # the gap is negligible (trust the central difference) or stops
            # shrinking (a kink: finite differences say nothing there).
            step = h
            prev_gap = None
            central = None
            for _level in range(4):
                c, gap = one_sided(flat, i, step)
                if gap <= 1e-2 * max(abs(c), 1e-6):
                    central = c
                    break
                if prev_gap is not None and gap > 0.6 * prev_gap:
                    break
                prev_gap = gap
                step /= 2
            if central is None:
                skipped += 1
                continue
            a = analytic.reshape(-1)[i]
            err = abs(a - central) / max(abs(a), abs(central), 1e-6)
            worst = max(worst, err)
            checked += 1
        report[name] = {"max_rel_err": worst, "checked": checked, "skipped": skipped}
    # refresh caches/gradients at the unperturbed point
    loss_fn(network, x)
    return report
