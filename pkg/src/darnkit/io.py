"""Form documents and atomic file output.

A form document is JSON (or YAML) with 0-based indices::

    {"n": 3, "m": [1, 1, 1], "edges": [[0, 1, 1.0], [1, 2, 2.0]], "kappa": [0, 0, 1]}

Each undirected edge appears once and contributes ``c (u(x)-u(y))^2`` to the
energy ``E(u, u)``.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import yaml

from darnkit.forms import SymmetricForm

__all__ = ["form_to_dict", "form_from_dict", "load_form", "dump_form", "atomic_write", "load_document"]


def form_to_dict(form: SymmetricForm) -> dict:
    return {
        "n": form.n,
        "m": [float(x) for x in form.m],
        "edges": [[x, y, w] for x, y, w in form.edges()],
        "kappa": [float(x) for x in form.kappa],
    }


def form_from_dict(doc: dict) -> SymmetricForm:
    unknown = set(doc) - {"n", "m", "edges", "kappa"}
    if unknown:
        raise ValueError(f"unknown form fields: {sorted(unknown)}")
    n = int(doc["n"])
    m = np.asarray(doc["m"], dtype=float)
    if m.shape != (n,):
        raise ValueError(f"m has {m.shape[0]} entries, expected n={n}")
    kappa = doc.get("kappa")
    if kappa is not None and len(kappa) != n:
        raise ValueError(f"kappa has {len(kappa)} entries, expected n={n}")
    edges = doc.get("edges", [])
    for k, e in enumerate(edges):
        if len(e) != 3:
            raise ValueError(f"edges[{k}] must be [x, y, c]")
    return SymmetricForm.from_edges(n, m, edges, kappa)


def load_document(path) -> dict:
    """Read a JSON or YAML document (YAML is a superset of JSON)."""
    text = Path(path).read_text()
    return yaml.safe_load(text)


def load_form(path) -> SymmetricForm:
    return form_from_dict(load_document(path))


def dump_form(form: SymmetricForm) -> str:
    return json.dumps(form_to_dict(form), indent=2) + "\n"


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
