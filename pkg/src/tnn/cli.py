"""``tnn`` command line: interpolate, integrate, eig2d, solve-poisson."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .errors import TnnError
from .grid import grid_from_tnn, integral
from .interp import InterpConfig, train_interpolation
from .io import load_config, load_model, make_report, resolve_config, save_model, write_report
from .pde import Eig2dConfig, PoissonConfig, poisson_problem_from_model, solve_poisson, train_eig2d
from .quad import tensor_rules
from .targets import Target, builtin_target, expression_target

log = logging.getLogger("tnn")

DEFAULTS = {
    "interpolate": {
        "seed": 0,
        "target": {"name": None, "expression": None, "dim": None, "domain": None},
        "model": {"rank": 50, "hidden": [50, 50], "activation": "sin", "norm_quadrature": [16, 16]},
        "train": {
            "outer_iterations": 20,
            "batch_size": 8000,
            "adam_steps": 50000,
            "adam_lr": 0.003,
            "lbfgs_steps": 200,
            "lbfgs_lr": 0.1,
            "lbfgs_memory": 10,
            "schedule": "per_batch",
            "steps_per_batch": None,
            "log_every": 0,
        },
        "quadrature": {"n_sub": 100, "n_per": 16},
        "validation": {"validation_size": 2000, "n_test": 10000, "reference": None},
    },
    "integrate": {
        "seed": 0,
        "target": {"name": None, "dim": None},
        "model": {"path": None},
        "quadrature": {"n_sub": 100, "n_per": 16},
        "validation": {"reference": None},
    },
    "eig2d": {
        "seed": 0,
        "model": {"rank": 10, "hidden": [10, 10], "activation": "sin"},
        "train": {
            "loss": "ritz",
            "integration": "gauss",
            "steps": 5000,
            "lr": 0.02,
            "lr_final": None,
            "record_every": 100,
            "log_every": 0,
        },
        "quadrature": {"n_sub": 20, "n_per": 8, "mc_samples": 25600, "eval_n_sub": 40, "eval_n_per": 16},
    },
    "solve-poisson": {
        "seed": 0,
        "target": {"source_model": None, "dim": None},
        "model": {"rank": 20, "hidden": [50, 50], "activation": "sin"},
        "train": {
            "adam_steps": 5000,
            "adam_lr": 0.003,
            "lbfgs_steps": 200,
            "lbfgs_lr": 0.1,
            "lbfgs_memory": 10,
            "log_every": 0,
        },
        "quadrature": {"n_sub": 100, "n_per": 16},
        "validation": {"n_test": 50000},
    },
}

_INTEGRATION_ALIASES = {"gauss": "gauss", "mc": "monte_carlo", "monte_carlo": "monte_carlo"}


class UsageError(TnnError):
    """Bad configuration or missing input; exit status 2."""


def _resolve_target(section: dict) -> Target:
    name, expr = section.get("name"), section.get("expression")
    if (name is None) == (expr is None):
        raise UsageError("target: give exactly one of 'name' or 'expression'")
    if name is not None:
        return builtin_target(str(name), section.get("dim"))
    domain = section.get("domain")
    dim = section.get("dim")
    if domain is None:
        if dim is None:
            raise UsageError("target: an expression needs 'domain' or 'dim' (unit cube)")
        domain = [[0.0, 1.0]] * int(dim)
    elif len(domain) == 2 and not isinstance(domain[0], (list, tuple)):
        if dim is None:
            raise UsageError("target: a single [lo, hi] domain needs 'dim'")
        domain = [list(domain)] * int(dim)
    return expression_target(str(expr), domain)


def _relative_to(path, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _timing_split(report_dict: dict) -> tuple[dict, dict]:
    results = dict(report_dict)
    wall = results.pop("wall_time", None)
    return results, {"train_seconds": wall}


def cmd_interpolate(cfg: dict, seed: int, out: Path, base: Path) -> dict:
    target = _resolve_target(cfg["target"])
    m, t, v = cfg["model"], cfg["train"], cfg["validation"]
    config = InterpConfig(
        rank=int(m["rank"]),
        hidden=tuple(m["hidden"]),
        activation=m["activation"],
        norm_quadrature=tuple(m["norm_quadrature"]),
        validation_size=int(v["validation_size"]),
        n_test=int(v["n_test"]),
        seed=seed,
        **{k: t[k] for k in (
            "outer_iterations",
            "batch_size",
            "adam_steps",
            "adam_lr",
            "lbfgs_steps",
            "lbfgs_lr",
            "lbfgs_memory",
            "schedule",
            "steps_per_batch",
            "log_every",
        )},
    )
    model, rep = train_interpolation(target, target.domain, config)
    q = cfg["quadrature"]
    value = integral(grid_from_tnn(model, tensor_rules(model.domain, q["n_sub"], q["n_per"])))
    reference = v["reference"] if v["reference"] is not None else target.reference_integral
    results, timing = _timing_split(rep.to_dict())
    results.pop("config")
    results["target"] = target.name
    results.update(_integral_results(value, reference))
    save_model(model, out / "model.json")
    results["model_file"] = "model.json"
    return {"results": results, "timing": timing}


def _integral_results(value: float, reference) -> dict:
    res = {"integral": value, "reference": reference, "abs_error": None, "rel_error": None}
    if reference is not None:
        reference = float(reference)
        res["reference"] = reference
        res["abs_error"] = abs(value - reference)
        res["rel_error"] = abs(value - reference) / abs(reference) if reference != 0.0 else None
    return res


def cmd_integrate(cfg: dict, seed: int, out: Path, base: Path) -> dict:
    path = cfg["model"]["path"]
    if path is None:
        raise UsageError("model.path: a model file is required (create one with `tnn interpolate`)")
    path = _relative_to(path, base)
    if not path.exists():
        raise UsageError(f"model file {path} not found; create it with `tnn interpolate`")
    model = load_model(path)
    reference = cfg["validation"]["reference"]
    if reference is None and cfg["target"]["name"] is not None:
        target = builtin_target(cfg["target"]["name"], cfg["target"]["dim"] or model.dim)
        if target.domain != model.domain:
            raise UsageError(f"target {target.name} lives on a different domain than the model")
        reference = target.reference_integral
    q = cfg["quadrature"]
    t0 = time.perf_counter()
    value = integral(grid_from_tnn(model, tensor_rules(model.domain, q["n_sub"], q["n_per"])))
    results = _integral_results(value, reference)
    results.update({"dim": model.dim, "rank": model.rank, "model_file": str(path)})
    return {"results": results, "timing": {"integrate_seconds": time.perf_counter() - t0}}


def cmd_eig2d(cfg: dict, seed: int, out: Path, base: Path) -> dict:
    m, t, q = cfg["model"], cfg["train"], cfg["quadrature"]
    integration = _INTEGRATION_ALIASES.get(str(t["integration"]))
    if integration is None:
        raise UsageError(f"train.integration must be gauss or mc, got {t['integration']!r}")
    if t["loss"] not in ("ritz", "pinn"):
        raise UsageError(f"train.loss must be ritz or pinn, got {t['loss']!r}")
    config = Eig2dConfig(
        loss=t["loss"],
        integration=integration,
        rank=int(m["rank"]),
        hidden=tuple(m["hidden"]),
        activation=m["activation"],
        steps=int(t["steps"]),
        lr=float(t["lr"]),
        lr_final=None if t["lr_final"] is None else float(t["lr_final"]),
        quadrature=(q["n_sub"], q["n_per"]),
        mc_samples=int(q["mc_samples"]),
        eval_quadrature=(q["eval_n_sub"], q["eval_n_per"]),
        record_every=int(t["record_every"]),
        seed=seed,
        log_every=int(t["log_every"]),
    )
    model, rep = train_eig2d(config)
    results, timing = _timing_split(rep.to_dict())
    results.pop("config")
    results["integration"] = integration
    save_model(model, out / "eigenfunction.json")
    return {"results": results, "timing": timing}


def cmd_solve_poisson(cfg: dict, seed: int, out: Path, base: Path) -> dict:
    src = cfg["target"]["source_model"]
    if src is None:
        raise UsageError("target.source_model: an interpolated source model is required; create it with `tnn interpolate`")
    src = _relative_to(src, base)
    if not src.exists():
        raise UsageError(f"source model file {src} not found; create it first with `tnn interpolate`")
    g_model = load_model(src)
    dim = cfg["target"]["dim"]
    if dim is not None and int(dim) != g_model.dim:
        raise UsageError(f"source model is {g_model.dim}-dimensional but target.dim = {dim}")
    q, m, t = cfg["quadrature"], cfg["model"], cfg["train"]
    problem = poisson_problem_from_model(g_model, q["n_sub"], q["n_per"])
    config = PoissonConfig(
        rank=int(m["rank"]),
        hidden=tuple(m["hidden"]),
        activation=m["activation"],
        n_test=int(cfg["validation"]["n_test"]),
        seed=seed,
        **{k: t[k] for k in ("adam_steps", "adam_lr", "lbfgs_steps", "lbfgs_lr", "lbfgs_memory", "log_every")},
    )
    model, rep = solve_poisson(problem, config)
    results, timing = _timing_split(rep.to_dict())
    results.pop("config")
    results["integration"] = "gauss"
    save_model(model, out / "solution.json")
    results["model_file"] = "solution.json"
    return {"results": results, "timing": timing}


COMMANDS = {
    "interpolate": cmd_interpolate,
    "integrate": cmd_integrate,
    "eig2d": cmd_eig2d,
    "solve-poisson": cmd_solve_poisson,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnn", description="Tensor neural network quadrature, interpolation and PDE demos.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default="tnn-output", help="directory for the report and model files")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(command: str, config_path, seed: int | None = None, out="tnn-output") -> dict:
    """Run one command and write ``report.json``; returns the report."""
    config_path = Path(config_path)
    if not config_path.exists():
        raise UsageError(f"config file {config_path} not found")
    cfg = resolve_config(load_config(config_path), DEFAULTS[command])
    if seed is not None:
        cfg["seed"] = seed
    seed = int(cfg["seed"])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    body = COMMANDS[command](cfg, seed, out, config_path.parent)
    body["timing"]["total_seconds"] = time.perf_counter() - t0
    report = make_report(command, cfg, seed, body["results"], body["timing"])
    write_report(report, out / "report.json")
    return report


def _summary(report: dict) -> str:
    res = report["results"]
    keys = ("integral", "abs_error", "l2_relative", "rmse", "eigenvalue", "e_lambda")
    parts = [f"{k}={res[k]:.6e}" for k in keys if isinstance(res.get(k), float)]
    return f"{report['command']}: " + " ".join(parts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run(args.command, args.config, args.seed, args.out)
    except (UsageError, ValueError) as err:
        print(f"tnn {args.command}: error: {err}", file=sys.stderr)
        return 2
    except TnnError as err:
        print(f"tnn {args.command}: failed: {err}", file=sys.stderr)
        return 1
    print(_summary(report))
    print(f"report written to {Path(args.out) / 'report.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
