"""Model files: JSON lines, one section per line.

The first line is a header naming the kind of model and every section that
follows, so a truncated file reports the first missing section. Matrices
are stored row-major with explicit shapes; floats use Python's shortest
round-trip representation, so loading is lossless and re-saving a loaded
model is byte-identical.
"""
from __future__ import annotations

import json
from typing import Union

import numpy as np

from .dictionary import Dictionary
from .edmd_multistep import CondensedModel
from .edmd_onestep import OneStepModel
from .errors import ModelFormatError

FORMAT = "mskoopman-model"
VERSION = 1

Model = Union[OneStepModel, CondensedModel]


def _matrix(name, a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"section": name, "shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sections(model: Model) -> list:
    if isinstance(model, OneStepModel):
        return [
            {"section": "meta", "residual": model.residual, "num_samples": model.num_samples,
             "extra": model.meta},
            _matrix("A", model.A), _matrix("B", model.B), _matrix("C", model.C),
        ]
    diag = {"section": "diagnostics"}
    for key in ("converged", "iterations", "objective"):
        val = getattr(model, key)
        diag[key] = None if val is None else val.tolist()
    return ([{"section": "meta", "provenance": model.provenance, "H": model.H,
              "extra": model.meta}]
            + [_matrix(f"E_{k + 1}", e) for k, e in enumerate(model.E_blocks)]
            + [_matrix(f"F_{k + 1}", f) for k, f in enumerate(model.F_blocks)]
            + [diag])


def save_model(model: Model, path) -> None:
    kind = "onestep" if isinstance(model, OneStepModel) else "condensed"
    body = [dict(model.dictionary.to_dict(), section="dictionary")] + _sections(model)
    header = {"section": "header", "format": FORMAT, "version": VERSION, "kind": kind,
              "sections": [s["section"] for s in body]}
    with open(path, "w") as fh:
        for s in [header] + body:
            fh.write(_dumps(s) + "\n")


def _load_matrix(sec) -> np.ndarray:
    shape = tuple(sec["shape"])
    data = np.array(sec["data"], dtype=float)
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"section {sec['section']}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def load_model(path) -> Model:
    with open(path) as fh:
        lines = fh.read().split("\n")
    parsed = {}
    order = []
    for line in lines:
        if not line.strip():
            continue
        try:
            sec = json.loads(line)
        except json.JSONDecodeError:
            # a truncated last line is reported as a missing section below
            break
        parsed[sec.get("section")] = sec
        order.append(sec.get("section"))
    header = parsed.get("header")
    if header is None or order[:1] != ["header"]:
        raise ModelFormatError(f"{path}: missing section 'header'")
    if header.get("format") != FORMAT:
        raise ModelFormatError(f"{path}: not a model file (format {header.get('format')!r})")
    if header.get("version") != VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {header.get('version')!r}, "
                               f"expected {VERSION}")
    for name in header["sections"]:
        if name not in parsed:
            raise ModelFormatError(f"{path}: missing section {name!r}")
    dictionary = Dictionary.from_dict(parsed["dictionary"])
    meta = parsed["meta"]
    try:
        if header["kind"] == "onestep":
            return OneStepModel(_load_matrix(parsed["A"]), _load_matrix(parsed["B"]),
                                _load_matrix(parsed["C"]), dictionary, meta["residual"],
                                meta["num_samples"], meta.get("extra") or {})
        if header["kind"] == "condensed":
            H = meta["H"]
            E = tuple(_load_matrix(parsed[f"E_{k}"]) for k in range(1, H + 1))
            F = tuple(_load_matrix(parsed[f"F_{k}"]) for k in range(1, H + 1))
            diag = parsed["diagnostics"]
            conv, iters, obj = (None if diag[key] is None else np.array(diag[key])
                                for key in ("converged", "iterations", "objective"))
            return CondensedModel(E, F, dictionary, meta["provenance"], conv, iters, obj,
                                  meta.get("extra") or {})
    except ModelFormatError:
        raise
    except Exception as exc:  # shape/consistency problems from the model constructors
        raise ModelFormatError(f"{path}: inconsistent model: {exc}") from exc
    raise ModelFormatError(f"{path}: unknown model kind {header['kind']!r}")
