"""Named field specifications.

    bm                     Brownian motion, N = d = 1
    fbm:<h>                fractional Brownian motion, N = 1
    fbm2d:<h>              Levy fractional Brownian sheet-like field, N = 2
    aniso:<h>:<p,..>[:<c,..>]  anisotropic fBm
    exceptional            difference of two independent Brownian motions
    intersect:<A>x<B>[x..] differences of independent copies of presets
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from .field import FieldSpec, SpecificationError
from .models import AnisotropicFBM, ModelError, MultiFBM
from .moments import intersection_field

NAMES = ("bm", "fbm", "fbm2d", "aniso", "exceptional", "intersect")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise SpecificationError(f"bad number list {text!r}") from exc


def preset(name: str) -> FieldSpec:
    name = name.strip()
    try:
        if name == "bm":
            return FieldSpec.from_model(MultiFBM(0.5), N=1, name="bm")
        if name == "exceptional":
            bm = preset("bm")
            return intersection_field([bm, bm], name="exceptional")
        head, _, rest = name.partition(":")
        if head == "fbm":
            return FieldSpec.from_model(MultiFBM(float(rest)), N=1, name=name)
        if head == "fbm2d":
            return FieldSpec.from_model(MultiFBM(float(rest)), N=2, name=name)
        if head == "aniso":
            parts = rest.split(":")
            if len(parts) not in (2, 3):
                raise SpecificationError("aniso needs <h>:<p,..>[:<c,..>]")
            h, p = float(parts[0]), _floats(parts[1])
            c = _floats(parts[2]) if len(parts) == 3 else (1.0,) * len(p)
            return FieldSpec.from_model(AnisotropicFBM(c, p, h), name=name)
        if head == "intersect":
            parts = re.split(r"x(?=bm|fbm|aniso)", rest)
            if len(parts) < 2:
                raise SpecificationError("intersect needs at least two presets joined by 'x'")
            return intersection_field([preset(p) for p in parts], name=name)
    except (ModelError, ValueError) as exc:
        if isinstance(exc, SpecificationError):
            raise
        raise SpecificationError(f"bad preset {name!r}: {exc}") from exc
    raise SpecificationError(f"unknown preset {name!r}; known: {', '.join(NAMES)}")


def load_spec(ref: str) -> FieldSpec:
    """A preset name or the path of a field-spec JSON file."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise SpecificationError(f"cannot read spec {ref}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SpecificationError(f"spec {ref} is not valid JSON: {exc}") from exc
        if "preset" in doc:
            return preset(doc["preset"])
        return FieldSpec.from_json(doc)
    return preset(ref)
