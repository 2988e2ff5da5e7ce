"""Multilayer perceptrons, prior samplers, the mixture decoder, Adam, and checkpoints."""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg_ad import NonFiniteError, Tensor, as_tensor, concat, matmul, take_rows

ACTIVATIONS = {
    "tanh": lambda t: t.tanh(),
    "relu": lambda t: t.relu(),
    "sigmoid": lambda t: t.sigmoid(),
    "linear": lambda t: t,
}


class MlpNetwork:
    """Fully connected network ``widths[0] -> ... -> widths[-1]``.

    Weights use Glorot-uniform initialization from ``rng``; biases start at 0.
    With ``skip=True`` the input, tiled to the output width, is added to the
    output, so a multi-head decoder predicts every head relative to its input.
    """

    def __init__(self, widths, hidden="tanh", output="linear", rng=None, skip=False):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError("an MLP needs at least input and output widths >= 1")
        if skip and widths[-1] % widths[0]:
            raise ValueError(f"a skip connection needs the output width {widths[-1]} "
                             f"to be a multiple of the input width {widths[0]}")
        for act in (hidden, output):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        rng = np.random.default_rng(rng)
        self.widths = widths
        self.hidden = hidden
        self.output = output
        self.skip = bool(skip)
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def __call__(self, x):
        return mlp_forward(self, x)


def mlp_forward(net: MlpNetwork, x, identity_input=False) -> Tensor:
    """Forward pass.

    With ``identity_input=True`` the input is taken to be the identity matrix
    of size ``in_dim`` (one-hot rows), so the first product reduces to the
    weight matrix itself.
    """
    if identity_input:
        h = net.weights[0] + net.biases[0]
    else:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != net.in_dim:
            raise ValueError(f"input of shape {x.shape} does not match width {net.in_dim}")
        h = matmul(x, net.weights[0]) + net.biases[0]
    for w, b in zip(net.weights[1:], net.biases[1:]):
        h = matmul(ACTIVATIONS[net.hidden](h), w) + b
    out = ACTIVATIONS[net.output](h)
    if net.skip:
        tile = np.tile(np.eye(net.in_dim), net.out_dim // net.in_dim)
        out = out + (tile if identity_input else matmul(x, tile))
    return out


# -- priors -------------------------------------------------------------------
REGIONS = ("box", "disk", "ring", "corners")


@dataclass(frozen=True)
class PriorSpec:
    """Noise source for mixture decoders.

    ``kind`` is ``uniform``, ``categorical`` or ``hybrid`` (uniform part
    followed by a one-hot part).  ``region`` reshapes the uniform part:
    ``box`` is ``[-1, 1]^k``; ``disk``, ``ring`` and ``corners`` are uniform on
    the unit disk, the annulus ``0.5 <= r <= 1``, and the four corner squares of
    side 0.5 inside ``[-1, 1]^k``.
    """

    kind: str = "uniform"
    uniform_dim: int = 0
    categories: int = 0
    region: str = "box"

    def __post_init__(self):
        if self.kind not in ("uniform", "categorical", "hybrid"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.region not in REGIONS:
            raise ValueError(f"unknown prior region {self.region!r}")
        if self.kind == "uniform" and self.categories:
            raise ValueError("a uniform prior has no categories")
        if self.kind == "categorical" and self.uniform_dim:
            raise ValueError("a categorical prior has no uniform part")
        if self.kind in ("categorical", "hybrid") and self.categories < 1:
            raise ValueError("categorical priors need at least one category")
        if self.kind == "hybrid" and self.uniform_dim < 1:
            raise ValueError("hybrid priors need a uniform part")

    @property
    def dim(self) -> int:
        return self.uniform_dim + self.categories

    @classmethod
    def empty(cls):
        return cls("uniform", 0, 0)

    @classmethod
    def from_dict(cls, d):
        return cls(**d) if d else cls.empty()


def _uniform_region(region, count, k, rng):
    if region == "box":
        return rng.uniform(-1.0, 1.0, (count, k))
    out = np.empty((count, k))
    filled = 0
    while filled < count:
        cand = rng.uniform(-1.0, 1.0, (2 * (count - filled) + 16, k))
        r = np.linalg.norm(cand, axis=1)
        if region == "disk":
            keep = r <= 1.0
        elif region == "ring":
            keep = (r >= 0.5) & (r <= 1.0)
        else:
            keep = np.all(np.abs(cand) >= 0.5, axis=1)
        cand = cand[keep][: count - filled]
        out[filled : filled + len(cand)] = cand
        filled += len(cand)
    return out


def sample_prior(prior: PriorSpec, count: int, rng) -> np.ndarray:
    """Draw ``count`` noise rows of width ``prior.dim``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    parts = []
    if prior.uniform_dim:
        parts.append(_uniform_region(prior.region, count, prior.uniform_dim, rng))
    if prior.categories:
        labels = rng.integers(0, prior.categories, count)
        parts.append(np.eye(prior.categories)[labels])
    if not parts:
        return np.zeros((count, 0))
    return np.concatenate(parts, axis=1)


def enumerate_prior(prior: PriorSpec) -> np.ndarray:
    """All one-hot states of a categorical prior, in order."""
    if prior.kind != "categorical":
        raise ValueError("only categorical priors can be enumerated")
    return np.eye(prior.categories)


def mixture_decode(dec: MlpNetwork, Y, prior: PriorSpec, K: int, rng=None,
                   mode="input", enumerate_states=False) -> Tensor:
    """``K`` decoder outputs per feature row, returned as ``N x K x d_X``.

    ``mode="input"`` concatenates each row of ``Y`` with ``K`` noise draws
    (or, with ``enumerate_states``, with every one-hot state).  ``mode="output"``
    lets the decoder emit ``K * d_X`` values which are split into heads.
    """
    Y = as_tensor(Y)
    if Y.ndim != 2:
        raise ValueError("features must be an N x d_Y batch")
    if K < 1:
        raise ValueError("K must be >= 1")
    N = Y.shape[0]
    if mode == "output":
        if dec.in_dim != Y.shape[1] or dec.out_dim % K:
            raise ValueError("output-head decoder width does not fit K heads")
        out = dec(Y)
        return out.reshape(N, K, dec.out_dim // K)
    if mode != "input":
        raise ValueError(f"unknown mixture mode {mode!r}")
    if dec.in_dim != Y.shape[1] + prior.dim:
        raise ValueError(
            f"decoder input width {dec.in_dim} != d_Y {Y.shape[1]} + prior width {prior.dim}"
        )
    if prior.dim == 0:
        if K != 1:
            raise ValueError("K > 1 needs a non-empty prior")
        return dec(Y).reshape(N, 1, dec.out_dim)
    if enumerate_states:
        states = enumerate_prior(prior)
        if states.shape[0] != K:
            raise ValueError("enumeration needs K equal to the category count")
        noise = np.tile(states, (N, 1))
    else:
        noise = sample_prior(prior, N * K, rng)
    Yrep = take_rows(Y, np.repeat(np.arange(N), K))
    out = dec(concat([Yrep, Tensor(noise)], axis=1))
    return out.reshape(N, K, dec.out_dim)


@dataclass
class Trajectory:
    path: np.ndarray  # (steps + 1) x B x d
    fan: np.ndarray | None = None  # steps x B x K x d


def recursive_rollout(dec: MlpNetwork, x0, steps: int, K: int, prior: PriorSpec, rng,
                      mode="input", enumerate_states=False, keep_fan=False) -> Trajectory:
    """Feed decoder outputs back as inputs, picking one of ``K`` candidates per step.

    ``x0`` is a single vector or a batch ``B x d`` of starting points.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    path = [x]
    fans = []
    for _ in range(steps):
        cand = mixture_decode(dec, x, prior, K, rng, mode, enumerate_states).data
        pick = rng.integers(0, K, x.shape[0])
        x = cand[np.arange(x.shape[0]), pick]
        path.append(x)
        if keep_fan:
            fans.append(cand)
    return Trajectory(np.stack(path), np.stack(fans) if keep_fan else None)


# -- optimizer ------------------------------------------------------------------
@dataclass
class OptimizerState:
    """Adam moments for a list of parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    maximize: bool = True
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw):
        st = cls(**kw)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def optimizer_step(state: OptimizerState, params, grads=None):
    """One Adam update in place; ascends when ``state.maximize`` is set."""
    if grads is None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    if len(params) != len(state.m):
        raise ValueError("optimizer state does not match the parameter list")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {i} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    sign = 1.0 if state.maximize else -1.0
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data + sign * state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- checkpoints --------------------------------------------------------------------
CHECKPOINT_FORMAT = "cebound-checkpoint"
CHECKPOINT_VERSION = 1


class CorruptCheckpointError(ValueError):
    pass


def _encode(a):
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    raw = base64.b64decode(d["data"].encode("ascii"), validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def _net_record(net):
    return {
        "widths": net.widths,
        "hidden": net.hidden,
        "output": net.output,
        "skip": net.skip,
        "params": [_encode(p.data) for p in net.params],
    }


def _net_from_record(rec):
    net = MlpNetwork(rec["widths"], rec["hidden"], rec["output"], rng=0, skip=rec.get("skip", False))
    arrays = [_decode(p) for p in rec["params"]]
    if [a.shape for a in arrays] != [p.shape for p in net.params]:
        raise CorruptCheckpointError("parameter shapes do not match the layer widths")
    for p, a in zip(net.params, arrays):
        p.data = a
    return net


def save_checkpoint(path, nets: dict, optimizers: dict | None = None, meta: dict | None = None):
    """Write named networks (and optional Adam states) as versioned JSON."""
    body = {
        "nets": {name: _net_record(net) for name, net in nets.items()},
        "optimizers": {
            name: {
                "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
                "maximize": st.maximize, "step": st.step,
                "m": [_encode(a) for a in st.m], "v": [_encode(a) for a in st.v],
            }
            for name, st in (optimizers or {}).items()
        },
        "meta": meta or {},
    }
    payload = json.dumps(body, sort_keys=True)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sha256": hashlib.sha256(payload.encode()).hexdigest(),
        "body": body,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))
    return Path(path)


def load_checkpoint(path):
    """Return ``(nets, optimizers, meta)`` from :func:`save_checkpoint` output."""
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError(f"{path}: unknown checkpoint format")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {doc.get('version')} is not supported")
    body = doc["body"]
    if hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest() != doc.get("sha256"):
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    try:
        nets = {name: _net_from_record(rec) for name, rec in body["nets"].items()}
        opts = {}
        for name, rec in body["optimizers"].items():
            st = OptimizerState(rec["lr"], rec["beta1"], rec["beta2"], rec["eps"], rec["maximize"], rec["step"])
            st.m = [_decode(a) for a in rec["m"]]
            st.v = [_decode(a) for a in rec["v"]]
            opts[name] = st
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed record ({exc})") from exc
    return nets, opts, body["meta"]


def checkpoint_roundtrip(net: MlpNetwork, path) -> MlpNetwork:
    """Save ``net`` to ``path`` and load it back."""
    save_checkpoint(path, {"net": net})
    return load_checkpoint(path)[0]["net"]
