"""Dense ReLU network with hand-written reverse mode and an AdamW optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .errors import ContractError, ParseError

CKPT_MAGIC = b"DCCMNN01"


class Mlp:
    """Feed-forward network: affine layers, ReLU between them, linear output.

    Weights are stored as ``(fan_out, fan_in)`` matrices and inputs are row
    batches, so a layer computes ``z = x @ W.T + b``.
    """

    def __init__(self, layer_sizes, seed: int = 0, weights=None, biases=None):
        self.layer_sizes = [int(s) for s in layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ContractError(f"invalid layer sizes {layer_sizes}")
        self.seed = seed
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, biases = [], []
            for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
                biases.append(np.zeros(fan_out))
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        return sum((i + 1) * o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def params(self):
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, self.seed, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ContractError(f"expected {self.n_params} parameters, got {flat.shape}")
        i = 0
        for p in self.params():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def forward(self, x, cache: bool = False):
        """Evaluate on a single input vector or a ``(batch, n_in)`` array.

        With ``cache=True`` returns ``(output, cache)`` for :meth:`backward`.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n_in,):
            raise ContractError(f"input width {x.shape[-1:]} != {self.n_in}")
        single = x.ndim == 1
        a = np.atleast_2d(x)
        acts, pres = [a], []
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            pres.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            acts.append(a)
        out = a[0] if single else a
        if cache:
            return out, {"acts": acts, "pres": pres, "single": single}
        return out

    __call__ = forward

    def backward(self, upstream, cache):
        """Reverse-mode pass for ``sum(upstream * output)``.

        Returns ``(grads, dx)`` where ``grads`` follows :meth:`params` order and
        ``dx`` has the input's shape. ReLU'(0) is taken as 0.
        """
        if not cache or "acts" not in cache:
            raise ContractError("backward needs the cache of a forward pass")
        acts, pres = cache["acts"], cache["pres"]
        delta = np.atleast_2d(np.asarray(upstream, dtype=float))
        if delta.shape != acts[-1].shape:
            raise ContractError(f"upstream shape {delta.shape} != output {acts[-1].shape}")
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(delta.T @ acts[i])
            delta = delta @ self.weights[i]
            if i > 0:
                delta = delta * (pres[i - 1] > 0.0)
        grads.reverse()
        dx = delta[0] if cache["single"] else delta
        return grads, dx


@dataclass
class AdamW:
    """Bias-corrected adaptive-moment update with decoupled weight decay."""

    learning_rate: float = 0.05
    beta1: float = 0.1
    beta2: float = 0.9
    weight_decay: float = 0.5
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("beta1 and beta2 must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")

    def reset(self):
        self.t, self.m, self.v = 0, [], []

    def step(self, net: Mlp, grads) -> int:
        """Update ``net`` in place; returns the count of skipped non-finite entries."""
        params = net.params()
        if len(grads) != len(params):
            raise ContractError("gradient list does not match network parameters")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        skipped = 0
        for p, g, m, v in zip(params, grads, self.m, self.v):
            ok = np.isfinite(g)
            skipped += int(g.size - ok.sum())
            g = np.where(ok, g, 0.0)
            m[...] = np.where(ok, self.beta1 * m + (1 - self.beta1) * g, m)
            v[...] = np.where(ok, self.beta2 * v + (1 - self.beta2) * g * g, v)
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p
            p -= np.where(ok, self.learning_rate * upd, 0.0)
        self.skipped += skipped
        return skipped


def save_checkpoint(net: Mlp, path, meta: dict | None = None) -> None:
    header = {"format": "dccm-mlp", "version": 1, "layer_sizes": net.layer_sizes,
              "seed": net.seed, "n_params": net.n_params, "meta": meta or {}}
    write_container(path, CKPT_MAGIC, header, net.get_flat().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[Mlp, dict]:
    header, payload, offset = read_container(path, CKPT_MAGIC)
    try:
        sizes = [int(s) for s in header["layer_sizes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: checkpoint header lacks layer_sizes") from exc
    net = Mlp(sizes, seed=header.get("seed", 0))
    expect = net.n_params * 8
    if len(payload) != expect:
        raise ParseError(f"{path}: parameter block is {len(payload)} bytes at byte offset "
                         f"{offset}, expected {expect}")
    net.set_flat(np.frombuffer(payload, dtype="<f8"))
    return net, header.get("meta", {})
