"""Gated combination network, contrastive loss, and analytic gradients.

The network fuses a reference image embedding x_R with a condition text
embedding e:

    g = normalize(lam * image_mlp(x_R) + (1 - lam) * text_mlp(e)
                  + joint_mlp([x_R; e]))

where lam is a per-example gate computed from the concatenated pair. Training
minimizes a temperature-scaled InfoNCE objective whose positives are the
matching target embeddings within a batch. All gradients are derived by hand
in float64; there is no autodiff dependency.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFinite, SchemaError

GCCK_MAGIC = b"GCCK"
GCCK_VERSION = 1
_NORM_FLOOR = 1e-12

Array = np.ndarray


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class MlpParams:
    """Stacked affine layers with rectifier activations between them."""

    weights: list[Array]
    biases: list[Array]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatch("weights and biases must pair up, one per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionMismatch(f"layer {i} has shapes {w.shape} / {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise DimensionMismatch(
                    f"layer {i} input width {w.shape[0]} does not chain")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def create(
        cls,
        in_dim: int,
        out_dim: int,
        hidden: Sequence[int],
        rng: np.random.Generator,
    ) -> "MlpParams":
        """Uniform fan-in-scaled initialization over the given layer widths."""
        dims = [in_dim, *hidden, out_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights=weights, biases=biases)

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def mlp_forward(params: MlpParams, x: Array) -> tuple[Array, list[Array]]:
    """Apply the MLP to a (batch, in_dim) array; returns output + activations."""
    acts = [x]
    out = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = out @ w + b
        if i < last:
            out = np.maximum(out, 0.0)
        acts.append(out)
    return out, acts


def mlp_backward(
    params: MlpParams, acts: list[Array], d_out: Array
) -> tuple[Array, "MlpGrads"]:
    """Propagate d_out back through cached activations."""
    d_weights: list[Array] = [None] * len(params.weights)  # type: ignore[list-item]
    d_biases: list[Array] = [None] * len(params.biases)  # type: ignore[list-item]
    last = len(params.weights) - 1
    grad = d_out
    for i in range(last, -1, -1):
        if i < last:
            grad = grad * (acts[i + 1] > 0)
        d_weights[i] = acts[i].T @ grad
        d_biases[i] = grad.sum(axis=0)
        grad = grad @ params.weights[i].T
    return grad, MlpGrads(weights=d_weights, biases=d_biases)


@dataclass
class MlpGrads:
    weights: list[Array]
    biases: list[Array]


@dataclass
class CombinerParams:
    """The four sub-networks plus the embedding dimension they operate on."""

    image_mlp: MlpParams
    text_mlp: MlpParams
    joint_mlp: MlpParams
    gate_mlp: MlpParams
    dim: int
    sigmoid_gate: bool = True

    def __post_init__(self) -> None:
        d = self.dim
        expected = {
            "image_mlp": (d, d),
            "text_mlp": (d, d),
            "joint_mlp": (2 * d, d),
            "gate_mlp": (2 * d, 1),
        }
        for name, (want_in, want_out) in expected.items():
            mlp: MlpParams = getattr(self, name)
            if mlp.in_dim != want_in or mlp.out_dim != want_out:
                raise DimensionMismatch(
                    f"{name} is {mlp.in_dim}->{mlp.out_dim}, "
                    f"expected {want_in}->{want_out}")

    @classmethod
    def init(
        cls,
        dim: int,
        seed: int = 0,
        hidden_factor: int = 4,
        sigmoid_gate: bool = True,
    ) -> "CombinerParams":
        """Two-layer MLPs with hidden width hidden_factor * dim."""
        rng = np.random.default_rng(seed)
        hidden = [hidden_factor * dim]
        return cls(
            image_mlp=MlpParams.create(dim, dim, hidden, rng),
            text_mlp=MlpParams.create(dim, dim, hidden, rng),
            joint_mlp=MlpParams.create(2 * dim, dim, hidden, rng),
            gate_mlp=MlpParams.create(2 * dim, 1, hidden, rng),
            dim=dim,
            sigmoid_gate=sigmoid_gate,
        )

    def copy(self) -> "CombinerParams":
        return CombinerParams(
            image_mlp=self.image_mlp.copy(),
            text_mlp=self.text_mlp.copy(),
            joint_mlp=self.joint_mlp.copy(),
            gate_mlp=self.gate_mlp.copy(),
            dim=self.dim,
            sigmoid_gate=self.sigmoid_gate,
        )

    def mlps(self) -> list[tuple[str, MlpParams]]:
        return [
            ("image_mlp", self.image_mlp),
            ("text_mlp", self.text_mlp),
            ("joint_mlp", self.joint_mlp),
            ("gate_mlp", self.gate_mlp),
        ]


@dataclass
class CombinerGrads:
    image_mlp: MlpGrads
    text_mlp: MlpGrads
    joint_mlp: MlpGrads
    gate_mlp: MlpGrads

    def mlps(self) -> list[tuple[str, MlpGrads]]:
        return [
            ("image_mlp", self.image_mlp),
            ("text_mlp", self.text_mlp),
            ("joint_mlp", self.joint_mlp),
            ("gate_mlp", self.gate_mlp),
        ]


def iter_param_arrays(params: CombinerParams) -> Iterator[tuple[str, Array]]:
    """Named parameter tensors in a fixed order (shared with gradients)."""
    for name, mlp in params.mlps():
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            yield f"{name}.w{i}", w
            yield f"{name}.b{i}", b


def iter_grad_arrays(grads: CombinerGrads) -> Iterator[tuple[str, Array]]:
    for name, mlp in grads.mlps():
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            yield f"{name}.w{i}", w
            yield f"{name}.b{i}", b


@dataclass
class CombinerCache:
    """Forward-pass intermediates needed by the backward pass."""

    params: CombinerParams
    x_ref: Array
    cond: Array
    joint_in: Array
    image_acts: list[Array]
    text_acts: list[Array]
    joint_acts: list[Array]
    gate_acts: list[Array]
    gate_raw: Array
    lam: Array
    unnormalized: Array
    norms: Array
    output: Array


def _check_batch(name: str, arr: Array, dim: int) -> Array:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != dim:
        raise DimensionMismatch(
            f"{name} has shape {np.asarray(arr).shape}, expected (batch, {dim})")
    return out


def combine_batch(
    params: CombinerParams, x_ref: Array, cond: Array
) -> tuple[Array, CombinerCache]:
    """Forward pass over a batch; returns unit-norm rows plus the cache."""
    x_ref = _check_batch("x_ref", x_ref, params.dim)
    cond = _check_batch("cond", cond, params.dim)
    if x_ref.shape[0] != cond.shape[0]:
        raise DimensionMismatch(
            f"batch sizes differ: {x_ref.shape[0]} vs {cond.shape[0]}")
    joint_in = np.concatenate([x_ref, cond], axis=1)
    image_out, image_acts = mlp_forward(params.image_mlp, x_ref)
    text_out, text_acts = mlp_forward(params.text_mlp, cond)
    joint_out, joint_acts = mlp_forward(params.joint_mlp, joint_in)
    gate_raw, gate_acts = mlp_forward(params.gate_mlp, joint_in)
    lam = _sigmoid(gate_raw) if params.sigmoid_gate else gate_raw
    unnormalized = lam * image_out + (1.0 - lam) * text_out + joint_out
    norms = np.linalg.norm(unnormalized, axis=1, keepdims=True)
    if not np.all(np.isfinite(unnormalized)) or np.any(norms < _NORM_FLOOR):
        raise NonFinite(
            f"combiner output degenerate: min norm {norms.min():.3e}, "
            f"finite={np.all(np.isfinite(unnormalized))}")
    output = unnormalized / norms
    cache = CombinerCache(
        params=params, x_ref=x_ref, cond=cond, joint_in=joint_in,
        image_acts=image_acts, text_acts=text_acts, joint_acts=joint_acts,
        gate_acts=gate_acts, gate_raw=gate_raw, lam=lam,
        unnormalized=unnormalized, norms=norms, output=output)
    return output, cache


def combiner_forward(x_ref: Array, cond: Array, params: CombinerParams) -> Array:
    """Fuse one reference/condition pair into a unit query vector."""
    for name, vec in (("x_ref", x_ref), ("cond", cond)):
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (params.dim,):
            raise DimensionMismatch(
                f"{name} has shape {v.shape}, expected ({params.dim},)")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-4:
            raise NonFinite(f"{name} has norm {norm:.6f}, expected unit input")
    out, _ = combine_batch(
        params, np.asarray(x_ref)[None, :], np.asarray(cond)[None, :])
    return out[0]


def conditional_score(x_target: Array, query: Array) -> float:
    """Similarity of a fused query against one target embedding."""
    x_target = np.asarray(x_target, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    if x_target.shape != query.shape or x_target.ndim != 1:
        raise DimensionMismatch(
            f"shape mismatch: {x_target.shape} vs {query.shape}")
    return float(x_target @ query)


def info_nce_loss(queries: Array, targets: Array, tau: float) -> tuple[float, Array]:
    """Batch contrastive loss; row i's positive is targets row i.

    Returns (loss, logits) where logits[i, j] = q_i . t_j / tau. Uses the
    max-subtraction stabilization for the log-sum-exp.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    queries = np.asarray(queries, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if queries.ndim != 2 or queries.shape != targets.shape:
        raise DimensionMismatch(
            f"queries {queries.shape} and targets {targets.shape} must match")
    batch = queries.shape[0]
    if batch < 2:
        raise ValueError(f"contrastive batch needs >= 2 rows, got {batch}")
    logits = (queries @ targets.T) / tau
    peak = logits.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
    loss = float(np.mean(lse - np.diagonal(logits)))
    if not np.isfinite(loss):
        raise NonFinite(
            f"InfoNCE loss is {loss}; logit range "
            f"[{logits.min():.3e}, {logits.max():.3e}] at tau={tau}")
    return loss, logits


def _softmax_rows(logits: Array) -> Array:
    peak = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - peak)
    return ex / ex.sum(axis=1, keepdims=True)


def backward(cache: CombinerCache, targets: Array, tau: float) -> CombinerGrads:
    """Gradients of the InfoNCE loss w.r.t. every combiner parameter."""
    params = cache.params
    queries = cache.output
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != queries.shape:
        raise DimensionMismatch(
            f"targets {targets.shape} must match queries {queries.shape}")
    batch = queries.shape[0]
    logits = (queries @ targets.T) / tau
    probs = _softmax_rows(logits)
    d_logits = (probs - np.eye(batch)) / batch
    d_query = (d_logits @ targets) / tau

    # normalize backward: d u = (d g - g (g . d g)) / ||u||
    inner = (d_query * queries).sum(axis=1, keepdims=True)
    d_unnorm = (d_query - queries * inner) / cache.norms

    lam = cache.lam
    image_out = cache.image_acts[-1]
    text_out = cache.text_acts[-1]
    d_image_out = d_unnorm * lam
    d_text_out = d_unnorm * (1.0 - lam)
    d_joint_out = d_unnorm
    d_lam = (d_unnorm * (image_out - text_out)).sum(axis=1, keepdims=True)
    if params.sigmoid_gate:
        d_gate_raw = d_lam * lam * (1.0 - lam)
    else:
        d_gate_raw = d_lam

    _, image_grads = mlp_backward(params.image_mlp, cache.image_acts, d_image_out)
    _, text_grads = mlp_backward(params.text_mlp, cache.text_acts, d_text_out)
    _, joint_grads = mlp_backward(params.joint_mlp, cache.joint_acts, d_joint_out)
    _, gate_grads = mlp_backward(params.gate_mlp, cache.gate_acts, d_gate_raw)

    grads = CombinerGrads(
        image_mlp=image_grads, text_mlp=text_grads,
        joint_mlp=joint_grads, gate_mlp=gate_grads)
    for name, g in iter_grad_arrays(grads):
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"gradient {name} is not finite")
    return grads


def loss_and_grads(
    params: CombinerParams, x_ref: Array, cond: Array, targets: Array, tau: float
) -> tuple[float, CombinerGrads]:
    """Convenience: forward, loss, and backward in one call."""
    queries, cache = combine_batch(params, x_ref, cond)
    loss, _ = info_nce_loss(queries, np.asarray(targets, dtype=np.float64), tau)
    return loss, backward(cache, targets, tau)


def save_checkpoint(params: CombinerParams, path: str | Path) -> None:
    """Versioned binary dump; float64 little-endian, row-major."""
    with open(Path(path), "wb") as fh:
        fh.write(GCCK_MAGIC)
        flags = 1 if params.sigmoid_gate else 0
        fh.write(struct.pack("<III", GCCK_VERSION, params.dim, flags))
        fh.write(struct.pack("<I", len(params.mlps())))
        for _, mlp in params.mlps():
            fh.write(struct.pack("<I", len(mlp.weights)))
            for w in mlp.weights:
                fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            for w, b in zip(mlp.weights, mlp.biases):
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> CombinerParams:
    path = Path(path)
    blob = path.read_bytes()
    offset = len(GCCK_MAGIC)
    if blob[:offset] != GCCK_MAGIC:
        raise SchemaError("not a GCCK checkpoint file", str(path))

    def take(fmt: str) -> tuple:
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise SchemaError("checkpoint truncated", str(path))
        vals = struct.unpack_from(fmt, blob, offset)
        offset += size
        return vals

    version, dim, flags = take("<III")
    if version != GCCK_VERSION:
        raise SchemaError(f"unsupported GCCK version {version}", str(path))
    (n_mlps,) = take("<I")
    if n_mlps != 4:
        raise SchemaError(f"expected 4 sub-networks, found {n_mlps}", str(path))
    mlps = []
    for _ in range(n_mlps):
        (n_layers,) = take("<I")
        if not 1 <= n_layers <= 64:
            raise SchemaError(f"implausible layer count {n_layers}", str(path))
        shapes = [take("<II") for _ in range(n_layers)]
        weights, biases = [], []
        for rows, cols in shapes:
            need = (rows * cols + cols) * 8
            if offset + need > len(blob):
                raise SchemaError("checkpoint truncated", str(path))
            w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
            offset += rows * cols * 8
            b = np.frombuffer(blob, dtype="<f8", count=cols, offset=offset)
            offset += cols * 8
            weights.append(w.reshape(rows, cols).copy())
            biases.append(b.copy())
        mlps.append(MlpParams(weights=weights, biases=biases))
    if offset != len(blob):
        raise SchemaError("trailing bytes after checkpoint payload", str(path))
    return CombinerParams(
        image_mlp=mlps[0], text_mlp=mlps[1], joint_mlp=mlps[2], gate_mlp=mlps[3],
        dim=dim, sigmoid_gate=bool(flags & 1))
