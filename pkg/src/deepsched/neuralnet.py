"""Small dense networks with hand-written backprop, masked softmax heads, Adam,
soft target updates and a versioned binary checkpoint format."""

from __future__ import annotations

import io
import json
import struct

import numpy as np

RELU = "relu"
LINEAR = "linear"

NET_MAGIC = b"DSNN"
BUNDLE_MAGIC = b"DSCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class DenseNet:
    """Fully connected feedforward net; parameters held in float64.

    `branches` describes how the output splits into independent softmax heads
    (1L actor: N_RBG branches of |U|+1 logits).
    """

    def __init__(self, sizes, activations=None, branches=None, rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = [RELU] * (n_layers - 1) + [LINEAR]
        if len(activations) != n_layers or any(a not in (RELU, LINEAR) for a in activations):
            raise ValueError("one activation (relu/linear) per layer required")
        branches = (sizes[-1],) if branches is None else tuple(int(b) for b in branches)
        if sum(branches) != sizes[-1]:
            raise ValueError(f"branch sizes {branches} do not sum to output size {sizes[-1]}")
        self.sizes = sizes
        self.activations = list(activations)
        self.branches = branches
        rng = np.random.default_rng() if rng is None else rng
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)   # He-uniform
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input size {x.shape[-1]} != {self.n_in}")
        inputs, pre = [], []
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if act == RELU else z
        self._cache = (inputs, pre, single)
        return h[0] if single else h

    def backward(self, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of sum(grad_out * output) w.r.t. params(), in params() order."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        inputs, pre, single = self._cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g[None, :]
        grads = []
        for i in reversed(range(len(self.weights))):
            if self.activations[i] == RELU:
                g = g * (pre[i] > 0)
            grads.append(g.sum(axis=0))
            grads.append(inputs[i].T @ g)
            g = g @ self.weights[i].T
        self.grad_input = g[0] if single else g
        return grads[::-1]

    def copy(self) -> "DenseNet":
        net = DenseNet.__new__(DenseNet)
        net.sizes = list(self.sizes)
        net.activations = list(self.activations)
        net.branches = tuple(self.branches)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        net._cache = None
        return net

    def load_params(self, params) -> None:
        for dst, src in zip(self.params(), params):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src

    def descriptor(self) -> dict:
        return {"sizes": self.sizes, "activations": self.activations,
                "branches": list(self.branches)}

    def frozen(self) -> "FrozenNet":
        return FrozenNet(self)


class FrozenNet:
    """Single-sample float32 inference with preallocated buffers."""

    def __init__(self, net: DenseNet):
        self.weights = [np.ascontiguousarray(w, dtype=np.float32) for w in net.weights]
        self.biases = [b.astype(np.float32) for b in net.biases]
        self.relu = [a == RELU for a in net.activations]
        self.buffers = [np.empty(w.shape[1], dtype=np.float32) for w in self.weights]
        self.x = np.empty(net.n_in, dtype=np.float32)
        self.passes = 0

    def infer(self, x: np.ndarray) -> np.ndarray:
        self.x[...] = x
        h = self.x
        for w, b, relu, buf in zip(self.weights, self.biases, self.relu, self.buffers):
            np.dot(h, w, out=buf)
            buf += b
            if relu:
                np.maximum(buf, 0.0, out=buf)
            h = buf
        self.passes += 1
        return h


def masked_softmax(logits: np.ndarray, mask: np.ndarray, branches: int | None = None) -> np.ndarray:
    """Softmax over each branch of the last axis with invalid entries set to exactly 0.

    logits/mask: (..., n_branches * n_actions) or (..., n_branches, n_actions).
    Returns (..., n_branches, n_actions).
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if branches is not None:
        logits = logits.reshape(*logits.shape[:-1], branches, -1)
        mask = mask.reshape(logits.shape)
    if logits.shape != mask.shape:
        raise ValueError("logits and mask shapes differ")
    if not np.all(mask.any(axis=-1)):
        raise ValueError("every branch needs at least one valid action")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """log-probabilities on valid entries; 0 on invalid ones (never -inf)."""
    z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.where(mask, np.exp(z - zmax), 0.0).sum(axis=-1, keepdims=True))
    return np.where(mask, logits - lse, 0.0)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Chain rule through a (masked) softmax; masked entries have p = 0 and get 0."""
    g = np.where(probs > 0, grad_probs, 0.0)
    return probs * (g - (probs * g).sum(axis=-1, keepdims=True))


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError("gradient count does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> list[np.ndarray]:
        return self.m + self.v + [np.array([self.t, self.lr], dtype=np.float64)]

    def load_state_arrays(self, arrays) -> None:
        n = len(self.params)
        for dst, src in zip(self.m + self.v, arrays[:2 * n]):
            dst[...] = src
        self.t = int(arrays[2 * n][0])
        self.lr = float(arrays[2 * n][1])


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> None:
    for t, o in zip(target.params(), online.params()):
        if t.shape != o.shape:
            raise ValueError("target and online shapes differ")
        t *= (1.0 - tau)
        t += tau * o


# ---- serialization ------------------------------------------------------

def serialize(net: DenseNet) -> bytes:
    header = json.dumps({**net.descriptor(), "dtype": "<f8"}, sort_keys=True).encode()
    body = b"".join(p.astype("<f8").tobytes() for p in net.params())
    return NET_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + body


def deserialize(data: bytes) -> DenseNet:
    if not data:
        raise CheckpointError("empty payload")
    if len(data) < 10 or data[:4] != NET_MAGIC:
        raise CheckpointError("bad network header")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    try:
        desc = json.loads(data[10:10 + hlen])
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError("corrupt network descriptor") from exc
    net = DenseNet(desc["sizes"], desc["activations"], desc["branches"],
                   rng=np.random.default_rng(0))
    offset = 10 + hlen
    expected = offset + sum(p.size for p in net.params()) * 8
    if len(data) != expected:
        raise CheckpointError(f"payload length {len(data)} != expected {expected}")
    for p in net.params():
        n = p.size * 8
        p[...] = np.frombuffer(data, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
        offset += n
    return net


def _array_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.asarray(a), allow_pickle=False)
    return buf.getvalue()


def _array_from_bytes(b: bytes) -> np.ndarray:
    return np.load(io.BytesIO(b), allow_pickle=False)


def pack_bundle(meta: dict, nets: dict[str, DenseNet], arrays: dict[str, np.ndarray]) -> bytes:
    """Agent checkpoint: metadata, named networks and named arrays."""
    blobs, index = [], []
    for name, net in nets.items():
        b = serialize(net)
        index.append({"name": name, "kind": "net", "size": len(b)})
        blobs.append(b)
    for name, arr in arrays.items():
        b = _array_bytes(arr)
        index.append({"name": name, "kind": "array", "size": len(b)})
        blobs.append(b)
    header = json.dumps({"meta": meta, "index": index}, sort_keys=True).encode()
    return BUNDLE_MAGIC + struct.pack("<HI", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def unpack_bundle(data: bytes) -> tuple[dict, dict[str, DenseNet], dict[str, np.ndarray]]:
    if not data:
        raise CheckpointError("empty checkpoint")
    if len(data) < 10 or data[:4] != BUNDLE_MAGIC:
        raise CheckpointError("not an agent checkpoint")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[10:10 + hlen])
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError("corrupt checkpoint header") from exc
    offset = 10 + hlen
    nets, arrays = {}, {}
    for entry in header["index"]:
        blob = data[offset:offset + entry["size"]]
        if len(blob) != entry["size"]:
            raise CheckpointError("truncated checkpoint")
        offset += entry["size"]
        if entry["kind"] == "net":
            nets[entry["name"]] = deserialize(blob)
        else:
            arrays[entry["name"]] = _array_from_bytes(blob)
    if offset != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    return header["meta"], nets, arrays
