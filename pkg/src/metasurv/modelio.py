"""Self-describing model files and run manifests.

Model files are JSON: kind, network spec and parameters, per-event knot
grids, positivity kind, and (proportional-hazards only) the baseline jumps.
Floats serialize via ``repr`` (shortest round-trip form), so save/load
reproduces predictions bit-exactly; the baseline's fast-path arrays are
rebuilt from the stored jumps with the same operations that produced them.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .basis import make_basis
from .errors import DataError
from .models import (
    DH,
    PH,
    QR,
    BaselineHazard,
    DhMnnModel,
    MnnModel,
    PhMnnModel,
    PositivityMap,
    QrMnnModel,
    StepFunction,
)
from .network import NetworkParams, NetworkSpec

FORMAT = "metasurv-model"
VERSION = 1


def _spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "numeric_inputs": spec.numeric_inputs,
        "boolean_inputs": spec.boolean_inputs,
        "categorical_cardinalities": list(spec.categorical_cardinalities),
        "embedding_width": spec.embedding_width,
        "embedding_dropout": spec.embedding_dropout,
        "hidden_widths": list(spec.hidden_widths),
        "hidden_dropout": spec.hidden_dropout,
        "output_count": spec.output_count,
    }


def _spec_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(
        numeric_inputs=int(d["numeric_inputs"]),
        boolean_inputs=int(d["boolean_inputs"]),
        categorical_cardinalities=tuple(d["categorical_cardinalities"]),
        embedding_width=int(d["embedding_width"]),
        embedding_dropout=float(d["embedding_dropout"]),
        hidden_widths=tuple(d["hidden_widths"]),
        hidden_dropout=float(d["hidden_dropout"]),
        output_count=int(d["output_count"]),
    )


def model_to_dict(model: MnnModel) -> dict:
    kind = {PhMnnModel: PH, QrMnnModel: QR, DhMnnModel: DH}[type(model)]
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "positivity": model.positivity.kind,
        "network": {
            "spec": _spec_to_dict(model.params.spec),
            "embeddings": [e.tolist() for e in model.params.embeddings],
            "weights": [w.tolist() for w in model.params.weights],
            "biases": [b.tolist() for b in model.params.biases],
        },
        "bases": [{"kind": b.kind, "knots": b.grid.knots.tolist()} for b in model.bases],
        "baseline": None,
    }
    if isinstance(model, PhMnnModel) and model.baseline is not None:
        doc["baseline"] = [
            {
                "times": base.jump_times.tolist(),
                "increments": base.jump_sizes.tolist(),
                "infinite_from": base.infinite_from,
            }
            for base in model.baseline
        ]
    return doc


def model_from_dict(doc: dict) -> MnnModel:
    if doc.get("format") != FORMAT:
        raise DataError("not a model file")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported model file version {doc.get('version')!r}")
    spec = _spec_from_dict(doc["network"]["spec"])
    params = NetworkParams(
        spec=spec,
        embeddings=[np.asarray(e, dtype=np.float64).reshape(c, spec.embedding_width)
                    for e, c in zip(doc["network"]["embeddings"], spec.categorical_cardinalities)],
        weights=[np.asarray(w, dtype=np.float64) for w in doc["network"]["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in doc["network"]["biases"]],
    )
    bases = tuple(make_basis(b["kind"], b["knots"]) for b in doc["bases"])
    positivity = PositivityMap(doc["positivity"])
    kind = doc["kind"]
    if kind == QR:
        return QrMnnModel(params=params, bases=bases, positivity=positivity)
    if kind == DH:
        return DhMnnModel(params=params, bases=bases, positivity=positivity)
    if kind != PH:
        raise DataError(f"unknown model kind {kind!r}")
    model = PhMnnModel(params=params, bases=bases, positivity=positivity)
    if doc.get("baseline") is not None:
        baselines = []
        for basis, bdoc in zip(bases, doc["baseline"]):
            times = np.asarray(bdoc["times"], dtype=np.float64)
            incs = np.asarray(bdoc["increments"], dtype=np.float64)
            baselines.append(rebuild_baseline(basis, times, incs, bdoc.get("infinite_from")))
        model = model.with_baseline(baselines)
    return model


def rebuild_baseline(basis, times: np.ndarray, increments: np.ndarray, infinite_from) -> BaselineHazard:
    """Reassembles a baseline from its finite jumps (same ops as estimation)."""
    all_times = times
    all_incs = increments
    if infinite_from is not None:
        all_times = np.concatenate([times, [infinite_from]])
        all_incs = np.concatenate([increments, [np.inf]])
    step = StepFunction.from_increments(all_times, all_incs)
    if times.size:
        nus = basis.evaluate(times)
        cum_basis = np.cumsum(increments[:, None] * nus, axis=0)
    else:
        cum_basis = np.empty((0, basis.size))
    return BaselineHazard(
        step=step,
        jump_times=times,
        jump_sizes=increments,
        cum_basis=cum_basis,
        infinite_from=None if infinite_from is None else float(infinite_from),
    )


def save_model(path, model: MnnModel) -> None:
    with Path(path).open("w") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path) -> MnnModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    with path.open() as fh:
        return model_from_dict(json.load(fh))


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command: str, config: dict, seed, artifacts: dict) -> None:
    """Run manifest: command, config echo, seed, artifact digests."""
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "artifacts": {
            name: {"path": str(p), "sha256": sha256_of(p)} for name, p in artifacts.items()
        },
    }
    with Path(path).open("w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
