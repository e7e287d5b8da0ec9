"""Dense linear algebra and gradient machinery.

Matrices are plain C-ordered ``float64`` numpy arrays. Fully connected
networks carry an explicit reverse-mode backward pass; the optimizer is Adam.
"""
import json
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ShapeError, TrainingError

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


def as_matrix(a):
    m = np.array(a, dtype=np.float64, order="C", ndmin=2)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def symmetrize(m):
    return 0.5 * (m + m.T)


def cholesky(m):
    """Lower Cholesky factor; raises ``SingularMatrixError`` with the pivot index."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {m.shape}")
    return kernels.cholesky(m)


def invert_spd(m):
    """Inverse of a symmetric positive definite matrix via Cholesky.

    The input is symmetrized first, so round-off asymmetry is tolerated.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"invert_spd needs a square matrix, got {m.shape}")
    return kernels.spd_inverse(symmetrize(m))


def floor_psd(m, floor=1e-12):
    """Symmetrize and clamp negative eigenvalues to ``floor``.

    A successful Cholesky proves positive definiteness, in which case the
    clamp is a no-op and the eigendecomposition is skipped.
    """
    m = symmetrize(np.asarray(m, dtype=np.float64))
    try:
        kernels.cholesky(m)
        return m
    except ArithmeticError:
        pass
    vals, vecs = np.linalg.eigh(m)
    vals = np.where(vals < 0.0, floor, vals)
    return symmetrize((vecs * vals) @ vecs.T)


def _activate(name, a):
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    return a


def _activation_grad(name, out, upstream):
    # derivative expressed through the activation output
    if name == "tanh":
        return upstream * (1.0 - out * out)
    if name == "relu":
        return upstream * (out > 0.0)
    if name == "sigmoid":
        return upstream * out * (1.0 - out)
    return upstream


class Mlp:
    """Fully connected network ``sizes[0] -> ... -> sizes[-1]``.

    ``weights[i]`` has shape ``(sizes[i], sizes[i+1])`` so a row-vector batch
    multiplies from the left.
    """

    def __init__(self, sizes, hidden="tanh", output="identity", weights=None, biases=None, rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"invalid layer sizes {sizes}")
        if hidden not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")
        self.sizes = sizes
        self.hidden = hidden
        self.output = output
        if weights is None:
            rng = np.random.default_rng(0) if rng is None else rng
            weights, biases = [], []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
                biases.append(np.zeros(fan_out))
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ShapeError(f"layer {i} parameters do not match sizes {sizes}")

    @classmethod
    def zeros(cls, sizes, hidden="tanh", output="identity"):
        ws = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        bs = [np.zeros(b) for b in sizes[1:]]
        return cls(sizes, hidden, output, ws, bs)

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]``; arrays are shared, not copied."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        return Mlp(self.sizes, self.hidden, self.output,
                   [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"network expects input size {self.n_in}, got {x.shape[-1]}")
        return x

    def forward(self, x, keep=False):
        """Evaluate on a vector or a row batch; with ``keep`` also return layer outputs."""
        x = self._check_input(x)
        acts = [x]
        h = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = _activate(self.hidden if i < last else self.output, h @ w + b)
            acts.append(h)
        return (h, acts) if keep else h

    __call__ = forward

    def backward(self, acts, upstream):
        """Reverse pass given the ``acts`` cached by ``forward(keep=True)``.

        ``upstream`` is dLoss/dOutput with the output's shape. Returns
        ``(param_grads, input_grad)`` with ``param_grads`` ordered like
        :meth:`parameters`.
        """
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ShapeError(f"upstream gradient shape {g.shape} != output shape {acts[-1].shape}")
        grads = [None] * (2 * self.n_layers)
        last = self.n_layers - 1
        for i in range(last, -1, -1):
            g = _activation_grad(self.hidden if i < last else self.output, acts[i + 1], g)
            a_in = acts[i]
            if g.ndim == 1:
                grads[2 * i] = np.outer(a_in, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = a_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g

    # -- serialization -------------------------------------------------
    def manifest(self, offset=0):
        layers = []
        for w, b in zip(self.weights, self.biases):
            layers.append({"weight_offset": offset, "weight_shape": list(w.shape),
                           "bias_offset": offset + w.size, "bias_shape": [b.size]})
            offset += w.size + b.size
        return {"sizes": self.sizes, "hidden": self.hidden, "output": self.output,
                "dtype": "<f8", "layers": layers}

    def to_bytes(self):
        return b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in self.parameters())

    @classmethod
    def from_buffer(cls, manifest, buf):
        data = np.frombuffer(buf, dtype="<f8")
        ws, bs = [], []
        for layer in manifest["layers"]:
            wo, (r, c) = layer["weight_offset"], layer["weight_shape"]
            bo, (n,) = layer["bias_offset"], layer["bias_shape"]
            ws.append(data[wo:wo + r * c].reshape(r, c).astype(np.float64))
            bs.append(data[bo:bo + n].astype(np.float64))
        return cls(manifest["sizes"], manifest["hidden"], manifest["output"], ws, bs)

    def save(self, bin_path, manifest_path=None):
        """Write parameters as raw little-endian doubles plus a JSON manifest."""
        bin_path = Path(bin_path)
        bin_path.write_bytes(self.to_bytes())
        man = self.manifest()
        man["file"] = bin_path.name
        if manifest_path is not None:
            Path(manifest_path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return man

    @classmethod
    def load(cls, bin_path, manifest):
        if not isinstance(manifest, dict):
            manifest = json.loads(Path(manifest).read_text())
        return cls.from_buffer(manifest, Path(bin_path).read_bytes())

    def equals(self, other):
        return (self.sizes == other.sizes and self.hidden == other.hidden
                and self.output == other.output
                and all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())))


class Adam:
    """Bias-corrected adaptive-moment optimizer updating arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ShapeError("parameter/gradient list length does not match optimizer state")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or p.shape != self.m[i].shape:
                raise ShapeError(f"parameter {i}: shape {p.shape} vs gradient {g.shape}")
            if not np.all(np.isfinite(g)):
                bad = np.argwhere(~np.isfinite(g))[0]
                raise TrainingError(f"non-finite gradient in parameter {i} at {tuple(bad)}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params
