"""Deep ReLU value and policy networks with frozen first and last layers.

The network computes

    x_0 = G x,   x_h = relu(W_h x_{h-1}) / sqrt(m),   out = C x_D

where G (m x d input map) and C (head, one row per output) stay frozen
for the whole run and only the hidden square layers W_1..W_D train.
Entries of G and W are drawn i.i.d. normal with variance 2, head
entries with variance 1, which keeps layer norms roughly constant in
depth.  The relu subgradient at exactly zero is taken as zero.

Trainable parameters flatten layer-major, row-major within each layer
(numpy C order); when the frozen parts are included they go
input map first, then hidden layers, then head.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

# Norms within this relative distance of the radius count as inside the
# ball, which makes repeated projection bit-stable (a freshly projected
# point re-tests as inside instead of being rescaled by one ulp).
PROJECTION_INSIDE_REL = 1e-12

_CHECKPOINT_MAGIC = 0x44454341
_CHECKPOINT_VERSION = 1


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a probability vector using one uniform draw."""
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


class FCNet:
    """Width-m, depth-D ReLU network with frozen input map and head."""

    def __init__(self, input_map: np.ndarray, hidden: list[np.ndarray],
                 head: np.ndarray, snapshot: list[np.ndarray], seed: int = -1):
        self.input_map = np.asarray(input_map, dtype=float)
        self.hidden = [np.asarray(w, dtype=float) for w in hidden]
        self.head = np.atleast_2d(np.asarray(head, dtype=float))
        self.snapshot = [np.asarray(w, dtype=float).copy() for w in snapshot]
        self.seed = int(seed)
        m, d = self.input_map.shape
        for h, w in enumerate(self.hidden):
            if w.shape != (m, m):
                raise DimensionError(f"hidden layer {h} has shape {w.shape}, expected ({m}, {m})")
        if self.head.shape[1] != m:
            raise DimensionError(f"head shape {self.head.shape} incompatible with width {m}")
        if len(self.snapshot) != len(self.hidden):
            raise DimensionError("snapshot depth differs from hidden depth")
        self._sqrt_m = np.sqrt(float(m))

    # -- construction -----------------------------------------------------

    @classmethod
    def initialize(cls, m: int, depth: int, input_dim: int, head_rows: int = 1,
                   seed: int | None = None, rng: np.random.Generator | None = None) -> "FCNet":
        """Fresh network; draw order is input map, hidden layers, head."""
        if m < 1 or depth < 1 or input_dim < 1 or head_rows < 1:
            raise ConfigError(
                f"invalid sizes m={m}, depth={depth}, input_dim={input_dim}, head_rows={head_rows}"
            )
        if rng is None:
            rng = np.random.default_rng(seed)
        std = np.sqrt(2.0)
        G = rng.normal(0.0, std, size=(m, input_dim))
        hidden = [rng.normal(0.0, std, size=(m, m)) for _ in range(depth)]
        head = rng.normal(0.0, 1.0, size=(head_rows, m))
        return cls(G, hidden, head, snapshot=hidden, seed=-1 if seed is None else seed)

    # -- shape info --------------------------------------------------------

    @property
    def width(self) -> int:
        return self.input_map.shape[0]

    @property
    def depth(self) -> int:
        return len(self.hidden)

    @property
    def input_dim(self) -> int:
        return self.input_map.shape[1]

    @property
    def head_rows(self) -> int:
        return self.head.shape[0]

    @property
    def n_hidden_params(self) -> int:
        return self.depth * self.width * self.width

    def clone_hidden(self) -> list[np.ndarray]:
        return [w.copy() for w in self.hidden]

    # -- forward -----------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimensionError(f"input shape {x.shape}, expected ({self.input_dim},)")
        sq = float(x @ x)
        if abs(sq - 1.0) > 1e-8:
            raise DomainError(f"input must have unit norm, got |x|^2 = {sq!r}")
        return x

    def forward_cache(self, x: np.ndarray, hidden: list[np.ndarray] | None = None):
        """Returns (activations [x_0..x_D], preactivations [z_1..z_D])."""
        x = self._check_input(x)
        ws = self.hidden if hidden is None else hidden
        acts = [self.input_map @ x]
        pres = []
        for w in ws:
            z = w @ acts[-1]
            pres.append(z)
            acts.append(relu(z) / self._sqrt_m)
        return acts, pres

    def logits(self, x: np.ndarray, hidden: list[np.ndarray] | None = None) -> np.ndarray:
        acts, _ = self.forward_cache(x, hidden)
        return self.head @ acts[-1]

    def value(self, x: np.ndarray, hidden: list[np.ndarray] | None = None) -> float:
        out = self.logits(x, hidden)
        if out.shape != (1,):
            raise DimensionError("value() needs a single-row head")
        return float(out[0])

    # -- gradients ----------------------------------------------------------

    def grad_weighted(self, x: np.ndarray, out_weights: np.ndarray,
                      hidden: list[np.ndarray] | None = None,
                      with_frozen: bool = False):
        """Gradient of out_weights . logits with respect to the hidden stack.

        Returns the per-layer gradient list; with_frozen additionally
        returns the input-map and head gradients.  Uses the strict z > 0
        relu mask, so the subgradient at a kink is zero.
        """
        ws = self.hidden if hidden is None else hidden
        acts, pres = self.forward_cache(x, hidden)
        u = np.asarray(out_weights, dtype=float)
        if u.shape != (self.head_rows,):
            raise DimensionError(f"output weights shape {u.shape}, expected ({self.head_rows},)")
        g = self.head.T @ u
        wgrads: list[np.ndarray] = [None] * len(ws)  # type: ignore[list-item]
        for h in range(len(ws) - 1, -1, -1):
            dz = np.where(pres[h] > 0.0, g, 0.0) / self._sqrt_m
            wgrads[h] = np.outer(dz, acts[h])
            g = ws[h].T @ dz
        if not with_frozen:
            return wgrads
        grad_inmap = np.outer(g, self._check_input(x))
        grad_head = np.outer(u, acts[-1])
        return wgrads, grad_inmap, grad_head

    def grad_value(self, x: np.ndarray, hidden: list[np.ndarray] | None = None) -> list[np.ndarray]:
        if self.head_rows != 1:
            raise DimensionError("grad_value() needs a single-row head")
        return self.grad_weighted(x, np.ones(1), hidden)

    def value_and_grad(self, x: np.ndarray, hidden: list[np.ndarray] | None = None):
        """Scalar output and its hidden-stack gradient in one pass."""
        if self.head_rows != 1:
            raise DimensionError("value_and_grad() needs a single-row head")
        ws = self.hidden if hidden is None else hidden
        acts, pres = self.forward_cache(x, hidden)
        q = float(self.head[0] @ acts[-1])
        g = self.head[0].copy()
        wgrads: list[np.ndarray] = [None] * len(ws)  # type: ignore[list-item]
        for h in range(len(ws) - 1, -1, -1):
            dz = np.where(pres[h] > 0.0, g, 0.0) / self._sqrt_m
            wgrads[h] = np.outer(dz, acts[h])
            g = ws[h].T @ dz
        return q, wgrads

    # -- policy head ---------------------------------------------------------

    def probs(self, x: np.ndarray) -> np.ndarray:
        """Softmax over head rows; strictly positive, sums to one."""
        logit = self.logits(x)
        stable = logit - logit.max()
        e = np.exp(stable)
        return e / e.sum()

    def log_prob_grad(self, x: np.ndarray, action: int, cap: bool = False,
                      train_all: bool = False) -> np.ndarray:
        """Flat gradient of log softmax probability of `action`.

        cap rescales the result to unit norm when it is longer than one.
        train_all extends the gradient to the frozen input map and head
        (order: input map, hidden layers, head).
        """
        if not (0 <= action < self.head_rows):
            raise DomainError(f"action {action} out of range for {self.head_rows} rows")
        p = self.probs(x)
        u = -p
        u[action] += 1.0
        if train_all:
            wgrads, g_in, g_head = self.grad_weighted(x, u, with_frozen=True)
            flat = np.concatenate([g_in.ravel()] + [g.ravel() for g in wgrads] + [g_head.ravel()])
        else:
            flat = flatten_mats(self.grad_weighted(x, u))
        if cap:
            n = float(np.sqrt(flat @ flat))
            if n > 1.0:
                flat = flat / n
        return flat

    def sample_action(self, x: np.ndarray, rng: np.random.Generator) -> int:
        return sample_index(self.probs(x), rng)

    # -- flat parameter access -------------------------------------------------

    def train_flat(self, train_all: bool = False) -> np.ndarray:
        if train_all:
            return np.concatenate([self.input_map.ravel()]
                                  + [w.ravel() for w in self.hidden]
                                  + [self.head.ravel()])
        return flatten_mats(self.hidden)

    def add_train_flat(self, delta: np.ndarray, train_all: bool = False) -> None:
        expected = self.train_flat(train_all).size
        if delta.shape != (expected,):
            raise DimensionError(f"update shape {delta.shape}, expected ({expected},)")
        if train_all:
            k = self.input_map.size
            self.input_map += delta[:k].reshape(self.input_map.shape)
            for w in self.hidden:
                w += delta[k:k + w.size].reshape(w.shape)
                k += w.size
            self.head += delta[k:].reshape(self.head.shape)
        else:
            k = 0
            for w in self.hidden:
                w += delta[k:k + w.size].reshape(w.shape)
                k += w.size

    def frozen_digest(self) -> str:
        """Hash of the frozen parts; unchanged by default training."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.input_map).tobytes())
        h.update(np.ascontiguousarray(self.head).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# flattening and projection


def flatten_mats(mats: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(w).ravel() for w in mats])


def unflatten_mats(flat: np.ndarray, like: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    k = 0
    for w in like:
        out.append(flat[k:k + w.size].reshape(w.shape).copy())
        k += w.size
    if k != flat.size:
        raise DimensionError(f"flat vector has {flat.size} entries, layout expects {k}")
    return out


def project_layer(w: np.ndarray, w0: np.ndarray, radius: float) -> tuple[np.ndarray, bool]:
    """Project one layer onto the Frobenius ball of `radius` around w0.

    Returns (projected, clipped).  Points already inside come back
    unchanged (the same array object), so repeated projection is
    bit-exact as long as the radius is not vanishingly small next to
    the center's own norm.
    """
    if radius <= 0.0:
        raise ConfigError(f"ball radius must be positive, got {radius}")
    delta = w - w0
    n = float(np.sqrt((delta * delta).sum()))
    if n <= radius * (1.0 + PROJECTION_INSIDE_REL):
        return w, False
    return w0 + (radius / n) * delta, True


def project_layers(hidden: list[np.ndarray], snapshot: list[np.ndarray],
                   radius: float) -> tuple[list[np.ndarray], list[bool]]:
    """Per-layer ball projection of a whole hidden stack."""
    if len(hidden) != len(snapshot):
        raise DimensionError("stack depth differs from snapshot depth")
    outs, hits = [], []
    for w, w0 in zip(hidden, snapshot):
        pw, hit = project_layer(w, w0, radius)
        outs.append(pw)
        hits.append(hit)
    return outs, hits


# ---------------------------------------------------------------------------
# checkpoint io


def save_net(net: FCNet, path, config_hash: str = "") -> None:
    """Write a little-endian binary checkpoint plus a JSON sidecar.

    Layout: seven int64 header fields (magic, version, m, depth,
    input_dim, head_rows, seed), then float64 arrays for the input map,
    the hidden snapshot, the current hidden stack, and the head, each in
    flattening order.
    """
    path = str(path)
    header = struct.pack(
        "<7q", _CHECKPOINT_MAGIC, _CHECKPOINT_VERSION,
        net.width, net.depth, net.input_dim, net.head_rows, net.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(net.input_map.astype("<f8").tobytes())
        fh.write(flatten_mats(net.snapshot).astype("<f8").tobytes())
        fh.write(flatten_mats(net.hidden).astype("<f8").tobytes())
        fh.write(net.head.astype("<f8").tobytes())
    sidecar = {
        "config_hash": config_hash,
        "width": net.width,
        "depth": net.depth,
        "input_dim": net.input_dim,
        "head_rows": net.head_rows,
        "seed": net.seed,
    }
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_net(path) -> FCNet:
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 56:
        raise ConfigError(f"checkpoint {path} is truncated")
    magic, version, m, depth, d, head_rows, seed = struct.unpack("<7q", raw[:56])
    if magic != _CHECKPOINT_MAGIC:
        raise ConfigError(f"{path} is not a checkpoint file")
    if version != _CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    counts = [m * d, depth * m * m, depth * m * m, head_rows * m]
    expected = 56 + 8 * sum(counts)
    if len(raw) != expected:
        raise ConfigError(f"checkpoint {path} has {len(raw)} bytes, expected {expected}")
    vals = np.frombuffer(raw, dtype="<f8", offset=56)
    o = 0
    blocks = []
    for c in counts:
        blocks.append(vals[o:o + c].copy())
        o += c
    G = blocks[0].reshape(m, d)
    like = [np.empty((m, m))] * depth
    snapshot = unflatten_mats(blocks[1], like)
    hidden = unflatten_mats(blocks[2], like)
    head = blocks[3].reshape(head_rows, m)
    return FCNet(G, hidden, head, snapshot=snapshot, seed=int(seed))
