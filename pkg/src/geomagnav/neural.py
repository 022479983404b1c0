"""Small fully-connected networks in float64 numpy.

Hidden layers use ReLU; the output layer is either linear (critics) or
tanh (actors, mapped to action bounds by the caller).  Gradients are
exact reverse-mode; the input gradient is returned so a critic's
dQ/da can be chained into an actor.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

OUTPUT_ACTIVATIONS = ("linear", "tanh")
CKPT_MAGIC = b"GMNVCKPT"
CKPT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class MLP:
    def __init__(self, sizes, output_activation: str = "linear", rng: np.random.Generator | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"bad layer sizes {sizes}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = sizes
        self.output_activation = output_activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    @classmethod
    def from_layers(cls, layers, output_activation="linear") -> "MLP":
        net = cls.__new__(cls)
        net.weights = [np.array(w, dtype=np.float64) for w, _ in layers]
        net.biases = [np.array(b, dtype=np.float64).reshape(-1) for _, b in layers]
        net.sizes = [net.weights[0].shape[0]] + [w.shape[1] for w in net.weights]
        for w, b, n_in in zip(net.weights, net.biases, net.sizes):
            if w.ndim != 2 or w.shape[0] != n_in or b.shape != (w.shape[1],):
                raise ShapeError("layer shapes do not chain")
        net.output_activation = output_activation
        return net

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        return MLP.from_layers([(w.copy(), b.copy()) for w, b in zip(self.weights, self.biases)],
                               self.output_activation)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"input shape {x.shape} does not match {self.sizes[0]} inputs")
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            if k < last:
                h = np.maximum(z, 0.0)
            else:
                h = np.tanh(z) if self.output_activation == "tanh" else z
            acts.append(h)
        cache = (acts, pre, squeeze)
        return (h[0] if squeeze else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Returns ``(grads, grad_input)``; grads align with :meth:`parameters`."""
        acts, pre, squeeze = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ShapeError(f"output gradient shape {g.shape} != {acts[-1].shape}")
        last = len(self.weights) - 1
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for k in range(last, -1, -1):
            if k == last:
                if self.output_activation == "tanh":
                    g = g * (1.0 - acts[-1] ** 2)
            else:
                g = g * (pre[k] > 0.0)
            grads[2 * k] = acts[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k].T
        return grads, (g[0] if squeeze else g)


def forward(net: MLP, x):
    return net.forward(x)


def backward(net: MLP, cache, grad_out):
    return net.backward(cache, grad_out)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: MLP, lr: float = 1e-3, **kw) -> "AdamState":
        params = net.parameters()
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(net: MLP, grads, state: AdamState) -> None:
    """In-place bias-corrected Adam update; rejects non-finite gradients untouched."""
    params = net.parameters()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteError("non-finite gradient; update rejected")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def soft_update(target: MLP, online: MLP, tau: float) -> MLP:
    tp, op = target.parameters(), online.parameters()
    if len(tp) != len(op) or any(a.shape != b.shape for a, b in zip(tp, op)):
        raise ShapeError("target and online networks differ in shape")
    for t, o in zip(tp, op):
        t *= 1.0 - tau
        t += tau * o
    return target


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   magic[8] version:u16 config_sha256[32] meta_len:u32 meta_json
#   n_nets:u16, then per net:
#     name_len:u16 name act_len:u16 act n_layers:u16 (in:u32 out:u32)*n_layers
#     has_adam:u8 [t:u64 lr:f8 beta1:f8 beta2:f8 eps:f8]
#   followed by all parameter blobs (<f8) in manifest order, then each
#   net's Adam m/v blobs.


def config_hash(config: dict) -> bytes:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).digest()


def _pack_str(buf, s: str):
    raw = s.encode()
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read_exact(buf, n: int) -> bytes:
    raw = buf.read(n)
    if len(raw) != n:
        raise ValueError("truncated checkpoint")
    return raw


def _unpack_str(buf) -> str:
    (n,) = struct.unpack("<H", _read_exact(buf, 2))
    return _read_exact(buf, n).decode()


def dump_checkpoint(nets: dict[str, MLP], adams: dict[str, AdamState] | None = None,
                    meta: dict | None = None, config: dict | None = None) -> bytes:
    adams = adams or {}
    meta = meta or {}
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<H", CKPT_VERSION))
    buf.write(config_hash(config or {}))
    mj = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(mj)))
    buf.write(mj)
    names = list(nets)
    buf.write(struct.pack("<H", len(names)))
    for name in names:
        net = nets[name]
        _pack_str(buf, name)
        _pack_str(buf, net.output_activation)
        buf.write(struct.pack("<H", len(net.weights)))
        for w in net.weights:
            buf.write(struct.pack("<II", *w.shape))
        st = adams.get(name)
        buf.write(struct.pack("<B", st is not None))
        if st is not None:
            buf.write(struct.pack("<Qdddd", st.t, st.lr, st.beta1, st.beta2, st.eps))
    for name in names:
        for p in nets[name].parameters():
            buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    for name in names:
        st = adams.get(name)
        if st is None:
            continue
        ms = st.m or [np.zeros_like(p) for p in nets[name].parameters()]
        vs = st.v or [np.zeros_like(p) for p in nets[name].parameters()]
        for arr in (*ms, *vs):
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def load_checkpoint(data: bytes):
    """Inverse of :func:`dump_checkpoint`: ``(nets, adams, meta, config_sha256)``."""
    buf = io.BytesIO(data)
    if _read_exact(buf, 8) != CKPT_MAGIC:
        raise ValueError("not a geomagnav checkpoint")
    (version,) = struct.unpack("<H", _read_exact(buf, 2))
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    chash = _read_exact(buf, 32)
    (mlen,) = struct.unpack("<I", _read_exact(buf, 4))
    meta = json.loads(_read_exact(buf, mlen).decode())
    (n_nets,) = struct.unpack("<H", _read_exact(buf, 2))
    manifest = []
    for _ in range(n_nets):
        name = _unpack_str(buf)
        act = _unpack_str(buf)
        (n_layers,) = struct.unpack("<H", _read_exact(buf, 2))
        shapes = [struct.unpack("<II", _read_exact(buf, 8)) for _ in range(n_layers)]
        (has_adam,) = struct.unpack("<B", _read_exact(buf, 1))
        hyper = struct.unpack("<Qdddd", _read_exact(buf, 40)) if has_adam else None
        manifest.append((name, act, shapes, hyper))

    def blob(shape):
        n = int(np.prod(shape))
        return np.frombuffer(_read_exact(buf, 8 * n), dtype="<f8").astype(np.float64).reshape(shape)

    nets = {}
    for name, act, shapes, _ in manifest:
        layers = [(blob(s), blob((s[1],))) for s in shapes]
        nets[name] = MLP.from_layers(layers, act)
    adams = {}
    for name, _, _, hyper in manifest:
        if hyper is None:
            continue
        pshapes = [p.shape for p in nets[name].parameters()]
        m = [blob(s) for s in pshapes]
        v = [blob(s) for s in pshapes]
        t, lr, b1, b2, eps = hyper
        adams[name] = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=int(t), m=m, v=v)
    if buf.read(1):
        raise ValueError("trailing bytes in checkpoint")
    return nets, adams, meta, chash
