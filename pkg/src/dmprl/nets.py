"""Dense networks with hand-written reverse-mode gradients.

All arithmetic is float64 (gradient checks at 1e-4 tolerance are unreliable
in single precision). Hidden layers are rectified; the output head is either
linear (critic) or a bounds-scaled tanh (actor), which keeps actions strictly
inside their limits while staying differentiable end to end. Also includes a
bias-corrected adaptive-moment optimizer, Polyak averaging, and a versioned
binary checkpoint format.
"""

from __future__ import annotations

import json
import struct

import numpy as np

CHECKPOINT_MAGIC = b"DMPRLCK1"


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or of an incompatible version."""


class Mlp:
    """Fully-connected net: affine layers, ReLU hidden activations.

    ``out="linear"`` leaves the last affine output untouched; ``out="tanh"``
    maps it into (out_lo, out_hi) via mid + half*tanh(z).

    Weights use fan-in-scaled uniform init, biases start at zero, and the
    final layer is shrunk by ``final_scale`` to keep initial outputs small.
    """

    def __init__(
        self,
        sizes,
        out: str = "linear",
        out_lo: float = -1.0,
        out_hi: float = 1.0,
        rng=None,
        final_scale: float = 0.01,
    ):
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        if out not in ("linear", "tanh"):
            raise ValueError(f"unknown output head {out!r}")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.sizes = [int(s) for s in sizes]
        self.out = out
        self.out_lo = float(out_lo)
        self.out_hi = float(out_hi)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        last = len(self.sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            if i == last:
                w = w * final_scale
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    # -- evaluation ---------------------------------------------------------

    def forward_cached(self, x):
        """Evaluate and keep the activations needed for backward().

        Accepts a single input vector or a (n, d) batch; the output matches.
        """
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        h = arr[None, :] if single else arr
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise ValueError(
                f"input shape {arr.shape} does not match input size {self.sizes[0]}"
            )
        acts = [h]
        head_u = None
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            if i == n_layers - 1:
                if self.out == "tanh":
                    head_u = np.tanh(z)
                    mid = 0.5 * (self.out_hi + self.out_lo)
                    half = 0.5 * (self.out_hi - self.out_lo)
                    h = mid + half * head_u
                else:
                    h = z
            else:
                h = np.maximum(z, 0.0)
                acts.append(h)
        cache = (acts, head_u, single)
        return (h[0] if single else h), cache

    def forward(self, x):
        return self.forward_cached(x)[0]

    def backward(self, cache, output_gradient):
        """Exact reverse-mode pass.

        Returns (grads, input_gradient) where grads is a list of (dW, db)
        per layer. The input gradient is what lets an actor receive updates
        through a critic's action input. ReLU uses subgradient 0 at 0.
        """
        acts, head_u, single = cache
        g = np.asarray(output_gradient, dtype=float)
        if single:
            g = g[None, :]
        if g.shape != (acts[0].shape[0], self.sizes[-1]):
            raise ValueError(f"output gradient shape {g.shape} does not match cache")
        if self.out == "tanh":
            half = 0.5 * (self.out_hi - self.out_lo)
            g = g * (half * (1.0 - head_u * head_u))
        grads: list = [None] * len(self.weights)
        for i in reversed(range(len(self.weights))):
            a_in = acts[i]
            grads[i] = (g.T @ a_in, g.sum(axis=0))
            g = g @ self.weights[i]
            if i > 0:
                # rectifier derivative: output > 0 exactly where z > 0
                g = g * (a_in > 0.0)
        return grads, (g[0] if single else g)

    # -- parameter plumbing -------------------------------------------------

    def param_list(self) -> list[np.ndarray]:
        """Live references, ordered [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def clone(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.sizes = list(self.sizes)
        twin.out = self.out
        twin.out_lo = self.out_lo
        twin.out_hi = self.out_hi
        twin.weights = [w.copy() for w in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        return twin

    def spec(self) -> dict:
        return {
            "sizes": self.sizes,
            "out": self.out,
            "out_lo": self.out_lo,
            "out_hi": self.out_hi,
        }


def flatten_grads(grads) -> list[np.ndarray]:
    """Per-layer (dW, db) pairs -> flat list matching param_list() order."""
    out = []
    for dw, db in grads:
        out.extend((dw, db))
    return out


def add_grads(a, b, scale: float = 1.0):
    """Elementwise a + scale*b over per-layer (dW, db) pairs."""
    return [(dwa + scale * dwb, dba + scale * dbb) for (dwa, dba), (dwb, dbb) in zip(a, b)]


class Adam:
    """Bias-corrected adaptive-moment updates.

    With both decay constants set to 0 the update degenerates to a plain
    gradient step ``p -= lr*g`` (used by fidelity tests).
    """

    def __init__(self, net: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.param_list()]
        self.v = [np.zeros_like(p) for p in net.param_list()]

    def step(self, params, grads) -> None:
        """Update params in place; grads must match param_list() order."""
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("parameter/gradient count mismatch")
        self.t += 1
        if self.beta1 == 0.0 and self.beta2 == 0.0:
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def state(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
        }


def optimizer_step(params, grads, opt: Adam):
    """Functional alias for Adam.step; returns the updated params."""
    opt.step(params, grads)
    return params


def soft_update(target: Mlp, source: Mlp, lam: float) -> Mlp:
    """Polyak interpolation in place: target <- lam*target + (1-lam)*source."""
    if not 0.0 < lam < 1.0:
        raise ValueError("lam must lie in (0, 1)")
    tp, sp = target.param_list(), source.param_list()
    if len(tp) != len(sp) or any(a.shape != b.shape for a, b in zip(tp, sp)):
        raise ValueError("target and source shapes differ")
    for pt, ps in zip(tp, sp):
        pt *= lam
        pt += (1.0 - lam) * ps
    return target


def actor_net(cfg, rng=None) -> Mlp:
    """10 -> 64 -> 128 -> 64 -> 3 with a bounds-scaled tanh head."""
    return Mlp([10, 64, 128, 64, 3], out="tanh", out_lo=cfg.f_min, out_hi=cfg.f_max, rng=rng)


def critic_net(rng=None) -> Mlp:
    """13 -> 64 -> 128 -> 64 -> 1, linear head over [state, action] input."""
    return Mlp([13, 64, 128, 64, 1], out="linear", rng=rng)


# -- checkpoint format -------------------------------------------------------
#
# magic (8 bytes) | header length (uint32 LE) | JSON header | float64 LE
# payload. The payload concatenates, per net in header["order"], every
# parameter in param_list() order, then per optimizer in header["opt_order"]
# the first- and second-moment accumulators in the same order.


def save_checkpoint(path, nets: dict, optimizers: dict | None = None, rng_states: dict | None = None, extra: dict | None = None) -> None:
    optimizers = optimizers or {}
    order = sorted(nets)
    opt_order = sorted(optimizers)
    header = {
        "version": 1,
        "order": order,
        "nets": {name: nets[name].spec() for name in order},
        "opt_order": opt_order,
        "optimizers": {name: optimizers[name].state() for name in opt_order},
        "rng": rng_states or {},
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays: list[np.ndarray] = []
    for name in order:
        arrays.extend(nets[name].param_list())
    for name in opt_order:
        arrays.extend(optimizers[name].m)
        arrays.extend(optimizers[name].v)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    """Returns (nets, optimizers, header); rejects foreign files loudly."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a recognized checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    off += hlen
    if header.get("version") != 1:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")

    def take(shape):
        nonlocal off
        count = int(np.prod(shape, dtype=int)) if shape else 1
        end = off + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload")
        arr = np.frombuffer(raw[off:end], dtype="<f8").astype(float).reshape(shape)
        off = end
        return arr

    nets = {}
    for name in header["order"]:
        spec = header["nets"][name]
        net = Mlp.__new__(Mlp)
        net.sizes = [int(s) for s in spec["sizes"]]
        net.out = spec["out"]
        net.out_lo = float(spec["out_lo"])
        net.out_hi = float(spec["out_hi"])
        net.weights = []
        net.biases = []
        for n_in, n_out in zip(net.sizes[:-1], net.sizes[1:]):
            net.weights.append(take((n_out, n_in)))
            net.biases.append(take((n_out,)))
        nets[name] = net
    optimizers = {}
    for name in header["opt_order"]:
        st = header["optimizers"][name]
        net = nets.get(name)
        if net is None:
            raise CheckpointError(f"{path}: optimizer {name!r} has no matching net")
        opt = Adam(net, lr=st["lr"], beta1=st["beta1"], beta2=st["beta2"], eps=st["eps"])
        opt.t = int(st["t"])
        opt.m = [take(p.shape) for p in net.param_list()]
        opt.v = [take(p.shape) for p in net.param_list()]
        optimizers[name] = opt
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} unexpected trailing bytes")
    return nets, optimizers, header
