"""Feed-forward covariate network with tape-based reverse-mode gradients.

The architecture is fixed: each categorical input passes through its own
embedding table followed by a sigmoid (a linear map on the one-hot coding),
numeric and boolean inputs pass straight through, the concatenation feeds a
stack of sigmoid hidden layers, and a linear head emits one output per
basis coefficient.  Gaussian dropout multiplies activations by N(1, p/(1-p))
noise in train mode and is the identity in eval mode.

``forward`` records every intermediate needed by ``backward``; the tape is
rebuilt on every call and never cached.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, UsageError

TRAIN = "train"
EVAL = "eval"


@dataclass(frozen=True)
class NetworkSpec:
    numeric_inputs: int
    boolean_inputs: int = 0
    categorical_cardinalities: tuple[int, ...] = ()
    embedding_width: int = 10
    embedding_dropout: float = 0.7
    hidden_widths: tuple[int, ...] = (100, 100)
    hidden_dropout: float = 0.1
    output_count: int = 1

    def __post_init__(self):
        object.__setattr__(
            self, "categorical_cardinalities", tuple(int(c) for c in self.categorical_cardinalities)
        )
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.numeric_inputs < 0 or self.boolean_inputs < 0:
            raise ConfigError("input counts must be nonnegative")
        if any(c < 1 for c in self.categorical_cardinalities):
            raise ConfigError("categorical cardinalities must be >= 1")
        if self.categorical_cardinalities and self.embedding_width < 1:
            raise ConfigError("embedding width must be >= 1")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigError("hidden widths must be >= 1")
        if self.output_count < 1:
            raise ConfigError("output count must be >= 1")
        for rate in (self.embedding_dropout, self.hidden_dropout):
            if not (0.0 <= rate < 1.0):
                raise ConfigError("dropout rates must lie in [0, 1)")

    @property
    def concat_width(self) -> int:
        return (
            self.numeric_inputs
            + self.boolean_inputs
            + len(self.categorical_cardinalities) * self.embedding_width
        )


@dataclass
class NetworkParams:
    spec: NetworkSpec
    embeddings: list[np.ndarray]
    weights: list[np.ndarray]  # hidden layers then head, each (fan_in, fan_out)
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.embeddings, *self.weights, *self.biases]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            spec=self.spec,
            embeddings=[e.copy() for e in self.embeddings],
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class GradientBuffer:
    embeddings: list[np.ndarray]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [*self.embeddings, *self.weights, *self.biases]

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "GradientBuffer":
        return cls(
            embeddings=[np.zeros_like(e) for e in params.embeddings],
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
        )

    def add(self, other: "GradientBuffer") -> "GradientBuffer":
        for a, b in zip(self.arrays(), other.arrays()):
            a += b
        return self


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Glorot-style uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    embeddings = []
    for card in spec.categorical_cardinalities:
        limit = np.sqrt(6.0 / (1.0 + spec.embedding_width))
        embeddings.append(rng.uniform(-limit, limit, size=(card, spec.embedding_width)))
    weights, biases = [], []
    fan_in = spec.concat_width
    for width in (*spec.hidden_widths, spec.output_count):
        limit = np.sqrt(6.0 / (fan_in + width)) if fan_in > 0 else 0.0
        weights.append(rng.uniform(-limit, limit, size=(fan_in, width)))
        biases.append(np.zeros(width))
        fan_in = width
    return NetworkParams(spec=spec, embeddings=embeddings, weights=weights, biases=biases)


@dataclass
class Tape:
    spec: NetworkSpec
    mode: str
    numeric: np.ndarray
    boolean: np.ndarray
    categorical: np.ndarray
    emb_sigmoid: list[np.ndarray] = field(default_factory=list)
    emb_noise: list[np.ndarray | None] = field(default_factory=list)
    layer_inputs: list[np.ndarray] = field(default_factory=list)
    layer_sigmoid: list[np.ndarray] = field(default_factory=list)
    layer_noise: list[np.ndarray | None] = field(default_factory=list)
    head_input: np.ndarray | None = None


def _gaussian_noise(rate: float, shape, mode: str, rng) -> np.ndarray | None:
    if mode != TRAIN or rate == 0.0:
        return None
    if rng is None:
        raise UsageError("train-mode forward with dropout needs an rng")
    sigma = np.sqrt(rate / (1.0 - rate))
    return 1.0 + sigma * rng.standard_normal(shape)


def _check_inputs(spec: NetworkSpec, numeric, boolean, categorical):
    numeric = np.atleast_2d(np.asarray(numeric, dtype=np.float64))
    boolean = np.atleast_2d(np.asarray(boolean, dtype=np.float64))
    categorical = np.atleast_2d(np.asarray(categorical, dtype=np.int64))
    n = max(numeric.shape[0], boolean.shape[0], categorical.shape[0])
    if numeric.shape != (n, spec.numeric_inputs):
        if spec.numeric_inputs == 0 and numeric.size == 0:
            numeric = np.zeros((n, 0))
        else:
            raise DataError(f"numeric block must be (n, {spec.numeric_inputs})")
    if boolean.shape != (n, spec.boolean_inputs):
        if spec.boolean_inputs == 0 and boolean.size == 0:
            boolean = np.zeros((n, 0))
        else:
            raise DataError(f"boolean block must be (n, {spec.boolean_inputs})")
    ncat = len(spec.categorical_cardinalities)
    if categorical.shape != (n, ncat):
        if ncat == 0 and categorical.size == 0:
            categorical = np.zeros((n, 0), dtype=np.int64)
        else:
            raise DataError(f"categorical block must be (n, {ncat})")
    if not np.all(np.isfinite(numeric)):
        raise DataError("non-finite numeric input")
    if not np.all(np.isfinite(boolean)):
        raise DataError("non-finite boolean input")
    for i, card in enumerate(spec.categorical_cardinalities):
        col = categorical[:, i]
        if np.any(col < 0) or np.any(col >= card):
            raise DataError(f"categorical column {i} has level outside [0, {card})")
    return numeric, boolean, categorical


def forward(params: NetworkParams, numeric, boolean, categorical, mode: str = EVAL, rng=None):
    """Run the network on a batch; returns (outputs (n, out), Tape)."""
    if mode not in (TRAIN, EVAL):
        raise UsageError(f"unknown mode {mode!r}")
    spec = params.spec
    numeric, boolean, categorical = _check_inputs(spec, numeric, boolean, categorical)
    tape = Tape(spec=spec, mode=mode, numeric=numeric, boolean=boolean, categorical=categorical)

    blocks = [numeric, boolean]
    for i, table in enumerate(params.embeddings):
        emb = expit(table[categorical[:, i]])
        tape.emb_sigmoid.append(emb)
        noise = _gaussian_noise(spec.embedding_dropout, emb.shape, mode, rng)
        tape.emb_noise.append(noise)
        blocks.append(emb if noise is None else emb * noise)
    act = np.concatenate(blocks, axis=1) if blocks else numeric

    nhidden = len(spec.hidden_widths)
    for layer in range(nhidden):
        tape.layer_inputs.append(act)
        sig = expit(act @ params.weights[layer] + params.biases[layer])
        tape.layer_sigmoid.append(sig)
        noise = _gaussian_noise(spec.hidden_dropout, sig.shape, mode, rng)
        tape.layer_noise.append(noise)
        act = sig if noise is None else sig * noise

    tape.head_input = act
    out = act @ params.weights[nhidden] + params.biases[nhidden]
    return out, tape


def backward(params: NetworkParams, tape: Tape, cotangent) -> GradientBuffer:
    """Gradient of <outputs, cotangent> w.r.t. every parameter.

    ``cotangent`` has the same shape as the forward outputs; batch rows are
    summed.  Dropout noise recorded on the tape is replayed exactly.
    """
    spec = tape.spec
    cot = np.atleast_2d(np.asarray(cotangent, dtype=np.float64))
    n = tape.head_input.shape[0]
    if cot.shape != (n, spec.output_count):
        raise UsageError(f"cotangent must be (n, {spec.output_count})")

    grads = GradientBuffer.zeros_like(params)
    nhidden = len(spec.hidden_widths)

    grads.weights[nhidden][:] = tape.head_input.T @ cot
    grads.biases[nhidden][:] = cot.sum(axis=0)
    d_act = cot @ params.weights[nhidden].T

    for layer in range(nhidden - 1, -1, -1):
        noise = tape.layer_noise[layer]
        if noise is not None:
            d_act = d_act * noise
        sig = tape.layer_sigmoid[layer]
        d_pre = d_act * sig * (1.0 - sig)
        grads.weights[layer][:] = tape.layer_inputs[layer].T @ d_pre
        grads.biases[layer][:] = d_pre.sum(axis=0)
        d_act = d_pre @ params.weights[layer].T

    offset = spec.numeric_inputs + spec.boolean_inputs
    for i in range(len(spec.categorical_cardinalities)):
        width = spec.embedding_width
        d_emb = d_act[:, offset : offset + width]
        noise = tape.emb_noise[i]
        if noise is not None:
            d_emb = d_emb * noise
        sig = tape.emb_sigmoid[i]
        d_table_rows = d_emb * sig * (1.0 - sig)
        np.add.at(grads.embeddings[i], tape.categorical[:, i], d_table_rows)
        offset += width
    return grads
