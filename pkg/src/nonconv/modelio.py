"""Model files: a TOML schema gathering the pieces the command line needs.

A model file may declare any subset of the sections below; each command
states which pieces it requires.

    [alphabet]        labels = ["a", "b"]
    [source]          mu = [...]            # independent draws
                      P = [[...], ...]      # or a transition matrix
                      initial = [...]       # optional initial law for P
    [generator]       rates = [[...], ...]  # continuous-time jump rates
    [schedule]        k = 2, ell = 3, tail = [[0, 0, 1]]    # constant first
    [alpha]           alphas = [1.0, 2.0], ell = 2, tail = []
    [observable]      values = nested lists  (or pattern = [...], value = x,
                      size = M for an indicator)
    [sft]             adjacency = [[...], ...], potential = optional
    [[field.cells]]   duration, rates, weight?, drift?, drift_linear?

The configuration hash in every report is the SHA-256 of the parsed file
rendered as canonical JSON, so formatting and key order do not affect it.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .conttime import FieldCell, GeneratorMatrix, SlowField
from .errors import ValidationError
from .model import (
    AlphaSchedule,
    FiniteAlphabet,
    Observable,
    ProbVector,
    QSchedule,
    StochasticMatrix,
)
from .symbolic import SFTSpec

_SECTIONS = (
    "alphabet",
    "source",
    "generator",
    "schedule",
    "alpha",
    "observable",
    "sft",
    "field",
)


@dataclass(frozen=True)
class ModelSpec:
    """Everything a model file declared; undeclared pieces are None."""

    alphabet: FiniteAlphabet | None = None
    mu: ProbVector | None = None
    P: StochasticMatrix | None = None
    initial: ProbVector | None = None
    generator: GeneratorMatrix | None = None
    schedule: QSchedule | None = None
    alpha: AlphaSchedule | None = None
    observable: Observable | None = None
    sft: SFTSpec | None = None
    potential: Observable | None = None
    field: SlowField | None = None
    config_hash: str = ""

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValidationError(
                "model file is missing required piece(s): " + ", ".join(missing)
            )

    @property
    def declared(self) -> tuple[str, ...]:
        out = []
        for f in fields(self):
            if f.name == "config_hash":
                continue
            if getattr(self, f.name) is not None:
                out.append(f.name)
        return tuple(out)


def config_hash(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _alphabet_size(pieces: dict) -> int | None:
    for key in ("mu", "P", "generator"):
        if pieces.get(key) is not None:
            return pieces[key].size
    if pieces.get("alphabet") is not None:
        return pieces["alphabet"].size
    if pieces.get("sft") is not None:
        return pieces["sft"].n_symbols
    return None


def _parse_observable(section: dict, pieces: dict) -> Observable:
    if "values" in section:
        values = np.asarray(section["values"], dtype=np.float64)
        if "arity" in section and values.ndim != int(section["arity"]):
            raise ValidationError(
                f"observable values have arity {values.ndim}, "
                f"declared {section['arity']}"
            )
        return Observable(values)
    if "pattern" in section:
        size = section.get("size", _alphabet_size(pieces))
        if size is None:
            raise ValidationError(
                "indicator observable needs an alphabet size (none declared)"
            )
        return Observable.indicator(
            int(size), section["pattern"], float(section.get("value", 1.0))
        )
    raise ValidationError("observable section needs 'values' or 'pattern'")


def _parse_field(section: dict) -> SlowField:
    cells = section.get("cells")
    if not cells:
        raise ValidationError("field section needs at least one [[field.cells]]")
    out = []
    for cell in cells:
        if "duration" not in cell or "rates" not in cell:
            raise ValidationError("each field cell needs 'duration' and 'rates'")
        out.append(
            FieldCell(
                duration=float(cell["duration"]),
                generator=GeneratorMatrix(np.asarray(cell["rates"], dtype=np.float64)),
                weight=(
                    np.asarray(cell["weight"], dtype=np.float64)
                    if "weight" in cell
                    else None
                ),
                drift=(
                    np.asarray(cell["drift"], dtype=np.float64)
                    if "drift" in cell
                    else None
                ),
                drift_linear=(
                    np.asarray(cell["drift_linear"], dtype=np.float64)
                    if "drift_linear" in cell
                    else None
                ),
            )
        )
    return SlowField(cells=tuple(out))


def model_from_dict(data: dict) -> ModelSpec:
    unknown = set(data.keys()) - set(_SECTIONS)
    if unknown:
        raise ValidationError(
            f"unknown model section(s): {', '.join(sorted(unknown))}"
        )
    pieces: dict = {}

    if "alphabet" in data:
        labels = data["alphabet"].get("labels")
        if labels is None:
            raise ValidationError("alphabet section needs 'labels'")
        pieces["alphabet"] = FiniteAlphabet(tuple(str(s) for s in labels))

    if "source" in data:
        src = data["source"]
        if ("mu" in src) == ("P" in src):
            raise ValidationError("source needs exactly one of 'mu' or 'P'")
        if "mu" in src:
            pieces["mu"] = ProbVector(np.asarray(src["mu"], dtype=np.float64))
        else:
            pieces["P"] = StochasticMatrix(np.asarray(src["P"], dtype=np.float64))
            if "initial" in src:
                pieces["initial"] = ProbVector(
                    np.asarray(src["initial"], dtype=np.float64)
                )

    if "generator" in data:
        rates = data["generator"].get("rates")
        if rates is None:
            raise ValidationError("generator section needs 'rates'")
        pieces["generator"] = GeneratorMatrix(np.asarray(rates, dtype=np.float64))

    if "schedule" in data:
        sch = data["schedule"]
        if "k" not in sch or "ell" not in sch:
            raise ValidationError("schedule section needs 'k' and 'ell'")
        pieces["schedule"] = QSchedule(
            k=int(sch["k"]),
            ell=int(sch["ell"]),
            tail=tuple(tuple(int(c) for c in poly) for poly in sch.get("tail", [])),
        )

    if "alpha" in data:
        alp = data["alpha"]
        if "alphas" not in alp:
            raise ValidationError("alpha section needs 'alphas'")
        alphas = tuple(float(a) for a in alp["alphas"])
        pieces["alpha"] = AlphaSchedule(
            alphas=alphas,
            ell=int(alp.get("ell", len(alphas))),
            tail=tuple(
                tuple(float(c) for c in poly) for poly in alp.get("tail", [])
            ),
        )

    if "sft" in data:
        sft = data["sft"]
        if "adjacency" not in sft:
            raise ValidationError("sft section needs 'adjacency'")
        pieces["sft"] = SFTSpec(np.asarray(sft["adjacency"]))
        if "potential" in sft:
            pieces["potential"] = Observable(
                np.asarray(sft["potential"], dtype=np.float64)
            )

    if "observable" in data:
        pieces["observable"] = _parse_observable(data["observable"], pieces)

    if "field" in data:
        pieces["field"] = _parse_field(data["field"])

    return ModelSpec(config_hash=config_hash(data), **pieces)


def load_model(path: str) -> ModelSpec:
    """Parse and validate a model file; every numeric object is constructed
    through its validating type, so a loaded model is a checked model."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"model file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"model file is not valid TOML: {exc}") from exc
    return model_from_dict(data)
