"""Feed-forward critic over concatenated state-action input.

Value, action-gradient, and parameter-gradient passes are written out by
hand (reverse mode over a fixed affine-rectifier stack). Parameters live in
one flat float64 vector with per-layer weight and bias views into it, so
optimizer steps and Polyak blends operate on a single array.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_MAGIC = b"HJQCRITIC\x00"
_FORMAT_VERSION = 1
_HEADER_LEN = 16


@dataclass
class ForwardCache:
    """Intermediate tensors of one batched forward pass.

    ``acts[0]`` is the joined input, ``acts[i+1] = relu(pres[i])``, and
    ``out`` is the final Q column squeezed to shape (batch,).
    """

    acts: list
    pres: list
    out: np.ndarray


class MlpCritic:
    """Q(x, a): affine layers with rectifier hidden activations.

    ``hidden=()`` degenerates to a single affine map (debug mode).
    """

    def __init__(self, state_dim, action_dim, hidden=(256, 256)):
        state_dim, action_dim = int(state_dim), int(action_dim)
        if state_dim < 1 or action_dim < 1:
            raise ValueError("state_dim and action_dim must be positive")
        hidden = tuple(int(s) for s in hidden)
        if any(s < 1 for s in hidden):
            raise ValueError("hidden layer sizes must be positive")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = hidden
        sizes = [state_dim + action_dim, *hidden, 1]
        self._sizes = sizes
        count = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        self._flat = np.zeros(count)
        self.weights = []
        self.biases = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = self._flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            self.weights.append(w)
            self.biases.append(self._flat[offset:offset + fan_out])
            offset += fan_out

    # ------------------------------------------------------------ parameters

    @property
    def layer_sizes(self):
        return list(self._sizes)

    @property
    def num_params(self):
        return self._flat.size

    def get_flat(self):
        """Copy of all parameters, layer by layer (row-major weights, bias)."""
        return self._flat.copy()

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != self._flat.shape:
            raise ValueError(f"expected {self._flat.size} parameters, got {vec.size}")
        self._flat[:] = vec

    def copy(self):
        twin = MlpCritic(self.state_dim, self.action_dim, self.hidden)
        twin._flat[:] = self._flat
        return twin

    @classmethod
    def init_random(cls, state_dim, action_dim, rng, hidden=(256, 256)):
        """Uniform weights and biases in +-1/sqrt(fan_in) per layer."""
        critic = cls(state_dim, action_dim, hidden)
        for w, b in zip(critic.weights, critic.biases):
            bound = 1.0 / math.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, w.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        return critic

    # ------------------------------------------------------------ forward

    def _join(self, xs, acts):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        acts = np.atleast_2d(np.asarray(acts, dtype=float))
        if xs.shape[1] != self.state_dim:
            raise ValueError(f"state dim {xs.shape[1]} != {self.state_dim}")
        if acts.shape[1] != self.action_dim:
            raise ValueError(f"action dim {acts.shape[1]} != {self.action_dim}")
        if xs.shape[0] != acts.shape[0]:
            raise ValueError("state/action batch sizes differ")
        return np.concatenate([xs, acts], axis=1)

    def forward_cache(self, xs, acts):
        z = self._join(xs, acts)
        layer_acts = [z]
        pres = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            pre = layer_acts[-1] @ w + b
            pres.append(pre)
            layer_acts.append(np.maximum(pre, 0.0))
        out = (layer_acts[-1] @ self.weights[-1] + self.biases[-1])[:, 0]
        return ForwardCache(acts=layer_acts, pres=pres, out=out)

    def forward_many(self, xs, acts):
        return self.forward_cache(xs, acts).out

    def forward(self, x, a):
        return float(self.forward_many([np.asarray(x, float)], [np.asarray(a, float)])[0])

    # ------------------------------------------------------------ gradients

    def grad_action_from_cache(self, cache):
        """d out / d action per sample; rectifier derivative is 1[pre > 0]."""
        n = cache.out.shape[0]
        g = np.tile(self.weights[-1][:, 0], (n, 1))
        for layer in range(len(cache.pres) - 1, -1, -1):
            g = (g * (cache.pres[layer] > 0.0)) @ self.weights[layer].T
        return g[:, self.state_dim:]

    def grad_action_many(self, xs, acts):
        return self.grad_action_from_cache(self.forward_cache(xs, acts))

    def grad_action(self, x, a):
        return self.grad_action_many([np.asarray(x, float)], [np.asarray(a, float)])[0]

    def loss_grad_from_cache(self, cache, targets):
        """Mean squared error against targets and its flat parameter gradient."""
        targets = np.asarray(targets, dtype=float).reshape(-1)
        n = cache.out.shape[0]
        if targets.size != n:
            raise ValueError("targets length differs from batch size")
        resid = cache.out - targets
        loss = float(resid @ resid) / n
        deltas = (2.0 / n) * resid[:, None]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = cache.acts[layer].T @ deltas
            grads_b[layer] = deltas.sum(axis=0)
            if layer > 0:
                deltas = (deltas @ self.weights[layer].T) * (cache.pres[layer - 1] > 0.0)
        flat = np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in zip(grads_w, grads_b)]
        )
        return loss, flat

    def grad_params(self, xs, acts, targets):
        """Flat gradient of mean((Q(x,a) - y)^2) over a non-empty batch."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[0] == 0:
            raise ValueError("empty batch")
        return self.loss_grad_from_cache(self.forward_cache(xs, acts), targets)[1]

    def min_abs_preactivation(self, x, a):
        """Distance of the nearest hidden unit to its rectifier kink."""
        cache = self.forward_cache([np.asarray(x, float)], [np.asarray(a, float)])
        if not cache.pres:
            return math.inf
        return min(float(np.abs(p).min()) for p in cache.pres)


@dataclass
class PolyakPair:
    """Online critic plus its slowly blended target copy."""

    online: MlpCritic
    target: MlpCritic

    @classmethod
    def create(cls, critic):
        return cls(online=critic, target=critic.copy())


def polyak_update(pair, alpha):
    """Blend target parameters toward the online critic: (1-a)*t + a*o."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"polyak alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return pair.target
    if alpha == 1.0:
        pair.target._flat[:] = pair.online._flat
        return pair.target
    t = pair.target._flat
    t *= 1.0 - alpha
    t += alpha * pair.online._flat
    return pair.target


# ------------------------------------------------------------ checkpoints

def save_checkpoint(critic, path):
    """Binary dump: 16-byte header, layer shape table, float64 LE payload.

    Header: 10-byte magic, format version byte, uint16 action width, zero pad.
    """
    parts = [_MAGIC + struct.pack("<BHxxx", _FORMAT_VERSION, critic.action_dim)]
    parts.append(struct.pack("<I", len(critic.weights)))
    for w in critic.weights:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
    for w, b in zip(critic.weights, critic.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_LEN + 4 or raw[:len(_MAGIC)] != _MAGIC:
        raise ValueError("not a critic checkpoint")
    version, action_dim = struct.unpack_from("<BH", raw, len(_MAGIC))
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (n_layers,) = struct.unpack_from("<I", raw, _HEADER_LEN)
    if n_layers < 1:
        raise ValueError("checkpoint declares no layers")
    offset = _HEADER_LEN + 4
    if len(raw) < offset + 8 * n_layers:
        raise ValueError("truncated checkpoint")
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", raw, offset))
        offset += 8
    for (_, prev_out), (next_in, _) in zip(shapes[:-1], shapes[1:]):
        if prev_out != next_in:
            raise ValueError("inconsistent layer shapes in checkpoint")
    if shapes[-1][1] != 1:
        raise ValueError("checkpoint output width must be 1")
    if not 1 <= action_dim < shapes[0][0]:
        raise ValueError("checkpoint action width inconsistent with input layer")
    payload = sum(8 * (i * o + o) for i, o in shapes)
    if len(raw) != offset + payload:
        raise ValueError("checkpoint size mismatch")
    critic = MlpCritic(
        shapes[0][0] - action_dim, action_dim, tuple(o for _, o in shapes[:-1])
    )
    for w, b in zip(critic.weights, critic.biases):
        w[...] = np.frombuffer(raw, "<f8", w.size, offset).reshape(w.shape)
        offset += 8 * w.size
        b[...] = np.frombuffer(raw, "<f8", b.size, offset)
        offset += 8 * b.size
    return critic
