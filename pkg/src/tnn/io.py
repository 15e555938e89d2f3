"""Model files, run configuration and run reports.

Model files are JSON documents tagged with ``format_version``; every float
is written by Python's shortest round-trip ``repr`` (at most 17 significant
digits), so loading reproduces the parameters bit for bit. Configs are YAML
with the sections ``target``, ``model``, ``train``, ``quadrature`` and
``validation``; reports are JSON.
"""

from __future__ import annotations

import copy
import json
import platform
import sys
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import FormatError
from .model import TnnModel
from .quad import BoxDomain, Interval, tensor_rules
from .subnet import SubNetwork

MODEL_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1
SECTIONS = ("target", "model", "train", "quadrature", "validation")


# --- model files -----------------------------------------------------------


def model_to_dict(model: TnnModel) -> dict:
    rules = model.norm_rules
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "tnn",
        "dim": model.dim,
        "rank": model.rank,
        "domain": [[iv.lo, iv.hi] for iv in model.domain.intervals],
        "boundary_factor": bool(model.boundary_factor),
        "activation": model.subnets[0].activation,
        "coefficients": model.coefficients.tolist(),
        "normalization": {
            "n_sub": rules[0].n_sub,
            "n_per": rules[0].n_per,
            "norms": [st.norms.tolist() for st in model.norm_states],
        },
        "subnetworks": [
            {
                "layer_sizes": net.layer_sizes,
                "weights": [W.tolist() for W in net.weights],
                "biases": [b.tolist() for b in net.biases],
            }
            for net in model.subnets
        ],
    }


def _require(doc: dict, key: str, kind=None):
    if key not in doc:
        raise FormatError(f"model file is missing {key!r}")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise FormatError(f"model file field {key!r} has the wrong type")
    return value


def model_from_dict(doc: dict) -> TnnModel:
    if not isinstance(doc, dict):
        raise FormatError("model file must contain a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {version!r} (expected {MODEL_FORMAT_VERSION})")
    try:
        domain = BoxDomain(tuple(Interval(lo, hi) for lo, hi in _require(doc, "domain", list)))
        norm = _require(doc, "normalization", dict)
        rules = tensor_rules(domain, int(norm["n_sub"]), int(norm["n_per"]))
        activation = _require(doc, "activation", str)
        subnets = []
        for entry in _require(doc, "subnetworks", list):
            weights = [np.array(W, dtype=float) for W in entry["weights"]]
            biases = [np.array(b, dtype=float) for b in entry["biases"]]
            net = SubNetwork(weights, biases, activation)
            if net.layer_sizes != list(entry["layer_sizes"]):
                raise FormatError("subnetwork layer_sizes do not match its weights")
            subnets.append(net)
        model = TnnModel(
            domain,
            subnets,
            np.array(_require(doc, "coefficients", list), dtype=float),
            rules,
            bool(_require(doc, "boundary_factor", bool)),
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"malformed model file: {err}") from err
    if model.dim != doc.get("dim") or model.rank != doc.get("rank"):
        raise FormatError("dim/rank fields disagree with the stored parameters")
    cached = norm.get("norms")
    if cached is not None:
        for i, (st, ref) in enumerate(zip(model.norm_states, cached)):
            ref = np.asarray(ref, dtype=float)
            if ref.shape != st.norms.shape or not np.allclose(st.norms, ref, rtol=1e-12, atol=0.0):
                raise FormatError(f"cached normalisation norms of dimension {i} do not match the parameters")
    return model


def save_model(model: TnnModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=1) + "\n")
    return path


def load_model(path) -> TnnModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: not valid JSON ({err})") from err
    return model_from_dict(doc)


# --- configs ---------------------------------------------------------------


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            known = ", ".join(sorted(defaults)) or "none"
            raise FormatError(f"unknown config key {where}{key!r} (known: {known})")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise FormatError(f"config key {where}{key!r} must be a mapping")
            out[key] = _merge(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def resolve_config(given: dict | None, defaults: dict) -> dict:
    """Fill unspecified keys from ``defaults``; unknown sections or keys are errors."""
    given = {} if given is None else given
    if not isinstance(given, dict):
        raise FormatError("config must be a mapping of sections")
    return _merge(defaults, given, "")


def load_config(path) -> dict:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise FormatError(f"{path}: invalid YAML ({err})") from err
    return {} if doc is None else doc


# --- reports ---------------------------------------------------------------


def _plain(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def environment_stamp() -> dict:
    import scipy

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def make_report(command: str, config: dict, seed: int, results: dict, timing: dict) -> dict:
    """Run report; ``timing`` and ``environment`` are the only non-deterministic keys."""
    return _plain(
        {
            "format_version": REPORT_FORMAT_VERSION,
            "command": command,
            "seed": seed,
            "config": config,
            "results": results,
            "timing": timing,
            "environment": environment_stamp(),
        }
    )


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return path


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def deterministic_part(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in ("timing", "environment")}
