"""Minimal differentiable compute layer.

Tensors are plain float64 numpy arrays (row-major, shape + flat data). The
layer vocabulary is fixed: dense, conv1d, nearest-repeat upsample, activation,
and residual blocks over those. Dense/activation ops treat every leading axis
as batch and act on the last axis; conv1d/upsample act on the second-to-last
(time) axis.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Input/parameter dimensions do not line up."""


class StructureError(ValueError):
    """Activation list inconsistent with the network that produced it."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finiteness is required."""


class OptimError(ValueError):
    """Optimizer rejected a step (non-finite gradient)."""


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


def gaussian_sample(mu, logvar, rng):
    """Reparameterized draw mu + exp(logvar/2) * eps, logvar clamped."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu shape {mu.shape} != logvar shape {logvar.shape}")
    lv = np.clip(logvar, LOGVAR_MIN, LOGVAR_MAX)
    return mu + np.exp(0.5 * lv) * rng.standard_normal(mu.shape)


def smooth_l1(pred, target):
    """Mean smooth-L1 (Huber, delta=1). Returns (value, d/dpred)."""
    diff = pred - target
    a = np.abs(diff)
    quad = a < 1.0
    val = np.where(quad, 0.5 * diff * diff, a - 0.5)
    grad = np.clip(diff, -1.0, 1.0) / diff.size
    return float(val.mean()), grad


# ---------------------------------------------------------------------------
# activations

def _silu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def _dsilu(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


_ACTIVATIONS = {
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "silu": (_silu, _dsilu),
}


# ---------------------------------------------------------------------------
# layers

class Dense:
    def __init__(self, weight, bias):
        self.weight = as_tensor(weight)
        self.bias = as_tensor(bias)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, x):
        nin = self.weight.shape[0]
        if x.shape[-1] != nin:
            raise ShapeError(f"dense expects {nin} input features, got {x.shape[-1]}")
        return x @ self.weight + self.bias

    def backward(self, x, g):
        xf = x.reshape(-1, x.shape[-1])
        gf = g.reshape(-1, g.shape[-1])
        grads = {"weight": xf.T @ gf, "bias": gf.sum(axis=0)}
        return grads, (gf @ self.weight.T).reshape(x.shape)

    def spec(self):
        return {"kind": "dense", "nin": self.weight.shape[0], "nout": self.weight.shape[1]}


class Conv1d:
    def __init__(self, weight, bias, stride=1, pad=0):
        self.weight = as_tensor(weight)  # (Cout, Cin, K)
        self.bias = as_tensor(bias)
        self.stride = int(stride)
        self.pad = int(pad)

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def _to3d(self, x):
        if x.ndim < 2:
            raise ShapeError("conv1d needs at least (T, C) input")
        lead = x.shape[:-2]
        return np.ascontiguousarray(x.reshape((-1,) + x.shape[-2:])), lead

    def forward(self, x):
        cin = self.weight.shape[1]
        if x.shape[-1] != cin:
            raise ShapeError(f"conv1d expects {cin} input channels, got {x.shape[-1]}")
        x3, lead = self._to3d(x)
        T = x3.shape[1]
        K = self.weight.shape[2]
        if T + 2 * self.pad < K:
            raise ShapeError(f"conv1d input length {T} too short for kernel {K}")
        y3 = kernels.conv1d_forward(x3, self.weight, self.bias, self.stride, self.pad)
        y3 = np.asarray(y3)
        return y3.reshape(lead + y3.shape[1:])

    def backward(self, x, g):
        x3, lead = self._to3d(x)
        g3 = np.ascontiguousarray(g.reshape((-1,) + g.shape[-2:]))
        gx, gw, gb = kernels.conv1d_backward(x3, self.weight, g3, self.stride, self.pad)
        gx = np.asarray(gx)
        return {"weight": np.asarray(gw), "bias": np.asarray(gb)}, gx.reshape(x.shape)

    def spec(self):
        cout, cin, k = self.weight.shape
        return {"kind": "conv1d", "cin": cin, "cout": cout, "k": k,
                "stride": self.stride, "pad": self.pad}


class Upsample:
    """Nearest-repeat upsampling along the time axis (no parameters)."""

    def __init__(self, factor):
        self.factor = int(factor)

    def params(self):
        return []

    def forward(self, x):
        if x.ndim < 2:
            raise ShapeError("upsample needs at least (T, C) input")
        return np.repeat(x, self.factor, axis=-2)

    def backward(self, x, g):
        T = x.shape[-2]
        shaped = g.reshape(g.shape[:-2] + (T, self.factor, g.shape[-1]))
        return {}, shaped.sum(axis=-2)

    def spec(self):
        return {"kind": "upsample", "factor": self.factor}


class Activation:
    def __init__(self, fn):
        if fn not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def params(self):
        return []

    def forward(self, x):
        return _ACTIVATIONS[self.fn][0](x)

    def backward(self, x, g):
        return {}, g * _ACTIVATIONS[self.fn][1](x)

    def spec(self):
        return {"kind": "act", "fn": self.fn}


class Residual:
    """y = x + body(x); body is a short chain with matching in/out shape."""

    def __init__(self, body):
        self.body = list(body)

    def params(self):
        return [(f"body{i}.{n}", p) for i, l in enumerate(self.body)
                for n, p in l.params()]

    def forward(self, x):
        h = x
        for l in self.body:
            h = l.forward(h)
        if h.shape != x.shape:
            raise ShapeError("residual body must preserve shape")
        return x + h

    def backward(self, x, g):
        acts = [x]
        for l in self.body:
            acts.append(l.forward(acts[-1]))
        grads = {}
        gi = g
        for i in reversed(range(len(self.body))):
            sub, gi = self.body[i].backward(acts[i], gi)
            for n, v in sub.items():
                grads[f"body{i}.{n}"] = v
        return grads, gi + g

    def spec(self):
        return {"kind": "residual", "body": [l.spec() for l in self.body]}


# ---------------------------------------------------------------------------
# seeded layer builders

# variance-preserving init gain per following activation
# (1/E[act(x)^2] for x ~ N(0,1); tanh uses the usual 5/3)
GAIN = {"identity": 1.0, "tanh": 5.0 / 3.0, "silu": 1.676}


def dense(rng, nin, nout, gain=1.0):
    w = rng.normal(0.0, gain / np.sqrt(nin), size=(nin, nout))
    return Dense(w, np.zeros(nout))


def conv1d(rng, cin, cout, k=3, stride=1, pad=None, gain=1.0):
    if pad is None:
        pad = (k - 1) // 2
    w = rng.normal(0.0, gain / np.sqrt(cin * k), size=(cout, cin, k))
    return Conv1d(w, np.zeros(cout), stride=stride, pad=pad)


def resblock(rng, ch, k=3, act="tanh"):
    return Residual([conv1d(rng, ch, ch, k, gain=GAIN[act]), Activation(act),
                     conv1d(rng, ch, ch, k)])


def _build_chain(specs, rng):
    """Build layers left to right, applying the next activation's gain to the
    preceding parametric layer."""
    layers = []
    for i, s in enumerate(specs):
        if s["kind"] in ("dense", "conv1d"):
            gain = 1.0
            if i + 1 < len(specs) and specs[i + 1]["kind"] == "act":
                gain = GAIN[specs[i + 1]["fn"]]
            if s["kind"] == "dense":
                layers.append(dense(rng, s["nin"], s["nout"], gain=gain))
            else:
                layers.append(conv1d(rng, s["cin"], s["cout"], s["k"],
                                     s["stride"], s["pad"], gain=gain))
        elif s["kind"] == "act":
            layers.append(Activation(s["fn"]))
        elif s["kind"] == "upsample":
            layers.append(Upsample(s["factor"]))
        elif s["kind"] == "residual":
            layers.append(Residual(_build_chain(s["body"], rng)))
        else:
            raise ValueError(f"unknown layer kind {s['kind']!r}")
    return layers


class Network:
    """Ordered layer chain with named parameters in a stable order."""

    def __init__(self, layers):
        self.layers = list(layers)

    def named_parameters(self):
        return [(f"layer{i}.{n}", p) for i, l in enumerate(self.layers)
                for n, p in l.params()]

    def param_count(self):
        return sum(p.size for _, p in self.named_parameters())

    def forward(self, x):
        """All intermediate activations plus the final output (len L+1)."""
        acts = [as_tensor(x)]
        for i, l in enumerate(self.layers):
            try:
                acts.append(l.forward(acts[-1]))
            except ShapeError as e:
                raise ShapeError(f"layer{i} ({l.spec()['kind']}): {e}") from None
        return acts

    def apply(self, x):
        return self.forward(x)[-1]

    def backward(self, acts, output_grad):
        """Analytic grads for every parameter and the input.

        acts must come from forward() on this same network.
        """
        if len(acts) != len(self.layers) + 1:
            raise StructureError(
                f"expected {len(self.layers) + 1} activations, got {len(acts)}")
        if acts[-1].shape != output_grad.shape:
            raise StructureError("output_grad shape does not match final activation")
        grads = {}
        g = output_grad
        for i in reversed(range(len(self.layers))):
            sub, g = self.layers[i].backward(acts[i], g)
            for n, v in sub.items():
                grads[f"layer{i}.{n}"] = v
        return grads, g

    def spec(self):
        return [l.spec() for l in self.layers]

    @classmethod
    def from_spec(cls, spec, rng):
        return cls(_build_chain(spec, rng))


def _probe_loss(net, x):
    y = net.forward(x)[-1]
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite output while probing gradients")
    return 0.5 * float((y * y).sum())


def grad_check(net, x, eps, max_entries=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    Probes the scalar loss 0.5*sum(y^2). With max_entries set, checks a seeded
    random subset of parameter entries per parameter (for big trained nets);
    otherwise every entry.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x)
    acts = net.forward(x)
    if not np.all(np.isfinite(acts[-1])):
        raise NumericError("non-finite output in grad_check")
    grads, _ = net.backward(acts, acts[-1].copy())
    worst = 0.0
    for name, p in net.named_parameters():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            idxs = range(flat.size)
        for i in idxs:
            old = flat[i]
            flat[i] = old + eps
            lp = _probe_loss(net, x)
            flat[i] = old - eps
            lm = _probe_loss(net, x)
            flat[i] = old
            num = (lp - lm) / (2.0 * eps)
            ana = gflat[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# optimizer

class OptimState:
    """Adaptive-moment optimizer state (first/second moments, step count)."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {n: np.zeros_like(p) for n, p in params}
        self.v = {n: np.zeros_like(p) for n, p in params}


def adam_step(params, grads, state):
    """One bias-corrected adaptive-moment update, applied in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OptimError(f"non-finite gradient for parameter '{name}'")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        if name not in grads:
            continue
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def receptive_field(layer_specs):
    """Input frames seen by one output frame, from kernel sizes and strides."""
    rf = 1
    jump = 1
    for s in layer_specs:
        if s["kind"] == "conv1d":
            rf += (s["k"] - 1) * jump
            jump *= s["stride"]
        elif s["kind"] == "residual":
            inner_rf, inner_jump = 1, jump
            for b in s["body"]:
                if b["kind"] == "conv1d":
                    inner_rf += (b["k"] - 1) * inner_jump
                    inner_jump *= b["stride"]
            rf += inner_rf - 1
            jump = inner_jump
        elif s["kind"] == "upsample":
            jump = max(jump // s["factor"], 1)
    return rf
