import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from tnn import cli
from tnn.errors import FormatError, InvalidArgumentError, ParseError
from tnn.io import (
    deterministic_part,
    load_config,
    load_model,
    model_from_dict,
    model_to_dict,
    read_report,
    resolve_config,
    save_model,
)
from tnn.model import TnnModel, init_tnn, tnn_eval
from tnn.quad import BoxDomain, Interval, sample_uniform, tensor_rules
from tnn.subnet import SubNetwork
from tnn.targets import builtin_target, exp_sq_integral_1d, expression_target, parse_expression


def write_config(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def constant_model(value, dom):
    const = SubNetwork([np.zeros((1, 1)), np.zeros((1, 1))], [np.zeros(1), np.ones(1)])
    return TnnModel(dom, [const.copy() for _ in range(dom.dim)], [value], tensor_rules(dom, 2, 2))


# --- model files ---------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    d=st.integers(1, 4),
    rank=st.integers(1, 5),
    boundary=st.booleans(),
    activation=st.sampled_from(["sin", "tanh"]),
)
def test_model_round_trip(seed, d, rank, boundary, activation):
    rng = np.random.default_rng(seed)
    lows = rng.uniform(-2, 0, size=d)
    dom = BoxDomain(tuple(Interval(lo, lo + w) for lo, w in zip(lows, rng.uniform(0.5, 3, size=d))))
    hidden = tuple(int(h) for h in rng.integers(2, 6, size=rng.integers(1, 3)))
    model = init_tnn(dom, rank, hidden, activation=activation, boundary_factor=boundary, rng=rng, norm_quadrature=(4, 4))
    model.set_coefficients(rng.normal(size=rank))
    doc = json.loads(json.dumps(model_to_dict(model)))
    back = model_from_dict(doc)
    X = sample_uniform(dom, 50, rng)
    a, b = tnn_eval(model, X), tnn_eval(back, X)
    assert np.all(np.abs(a - b) <= 1e-15 * np.maximum(1.0, np.abs(a)))
    assert np.array_equal(model.theta(), back.theta())


def test_model_file_rejects_bad_input(tmp_path):
    model = init_tnn(BoxDomain.cube(0, 1, 2), 2, (3,), rng=np.random.default_rng(0), norm_quadrature=(2, 2))
    doc = model_to_dict(model)
    with pytest.raises(FormatError, match="format_version"):
        model_from_dict({**doc, "format_version": 99})
    with pytest.raises(FormatError):
        model_from_dict({**doc, "rank": 7})
    bad = json.loads(json.dumps(doc))
    bad["normalization"]["norms"][0][0] *= 1.5
    with pytest.raises(FormatError, match="norms"):
        model_from_dict(bad)
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_model(p)
    save_model(model, tmp_path / "m.json")
    assert np.array_equal(load_model(tmp_path / "m.json").coefficients, model.coefficients)


# --- configs and targets -----------------------------------------------------------


def test_resolve_config():
    defaults = cli.DEFAULTS["eig2d"]
    cfg = resolve_config({"train": {"steps": 7}}, defaults)
    assert cfg["train"]["steps"] == 7 and cfg["train"]["lr"] == defaults["train"]["lr"]
    assert cfg["quadrature"] == defaults["quadrature"]
    with pytest.raises(FormatError, match="unknown config key"):
        resolve_config({"train": {"stpes": 7}}, defaults)
    with pytest.raises(FormatError):
        resolve_config({"plotting": {}}, defaults)


def test_expressions():
    X = np.random.default_rng(0).uniform(size=(20, 3))
    f = parse_expression("exp(sum(x[i]^2))")
    np.testing.assert_allclose(f(X), np.exp((X**2).sum(axis=1)), rtol=1e-15)
    g = parse_expression("exp(prod((1 + x[i]) * (1 - x[i])))")
    np.testing.assert_allclose(g(X), np.exp(np.prod(1 - X**2, axis=1)), rtol=1e-15)
    h = parse_expression("-x[1]^2 + 2*sin(pi*x[2])/cos(x[3]) - 3")
    np.testing.assert_allclose(h(X), -X[:, 0] ** 2 + 2 * np.sin(np.pi * X[:, 1]) / np.cos(X[:, 2]) - 3, rtol=1e-14)
    assert parse_expression("2^3^2")(X)[0] == 512.0


@pytest.mark.parametrize(
    "src, line, col",
    [
        ("exp(", 1, 5),
        ("1 +\n  * 2", 2, 3),
        ("x[i]", 1, 3),
        ("sum(prod(x[i]))", 1, 5),
        ("foo(1)", 1, 1),
        ("x[0]", 1, 3),
        ("1 2", 1, 3),
    ],
)
def test_parse_errors(src, line, col):
    with pytest.raises(ParseError) as info:
        parse_expression(src)
    assert (info.value.line, info.value.column) == (line, col)


def test_builtin_targets():
    t = builtin_target("exp_sum_sq_8d")
    assert t.dim == 8 and t.reference_integral == pytest.approx(exp_sq_integral_1d() ** 8, rel=1e-15)
    assert abs(t.reference_integral - 20.94727) < 1e-4
    t = builtin_target("exp_prod_1mx2", 5)
    assert t.domain == BoxDomain.cube(-1, 1, 5)
    assert t(np.zeros((1, 5)))[0] == pytest.approx(np.e)
    with pytest.raises(InvalidArgumentError):
        builtin_target("rosenbrock", 2)
    with pytest.raises(InvalidArgumentError):
        expression_target("x[4]", [[0, 1]] * 3)


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
COMMAND_PREFIXES = {"interpolate": "interpolate", "integrate": "integrate", "eig2d": "eig2d", "solve_poisson": "solve-poisson", "expression": "interpolate"}


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.rglob("*.yaml")), ids=lambda p: str(p.relative_to(CONFIG_DIR)))
def test_shipped_configs_resolve(path):
    command = next(c for prefix, c in COMMAND_PREFIXES.items() if path.name.startswith(prefix))
    cfg = resolve_config(load_config(path), cli.DEFAULTS[command])
    if command == "interpolate":
        cli._resolve_target(cfg["target"])
    if command == "eig2d":
        assert cfg["quadrature"]["n_sub"] * cfg["quadrature"]["n_per"] == 160


# --- commands ----------------------------------------------------------------------


def small_interp(tmp_path, **target):
    return write_config(
        tmp_path / "interp.yaml",
        {
            "seed": 5,
            "target": target or {"name": "exp_sum_sq", "dim": 3},
            "model": {"rank": 4, "hidden": [6, 6], "norm_quadrature": [8, 8]},
            "train": {"outer_iterations": 2, "batch_size": 200, "adam_steps": 10, "lbfgs_steps": 3},
            "quadrature": {"n_sub": 20, "n_per": 8},
            "validation": {"validation_size": 100, "n_test": 300},
        },
    )


def test_interpolate_and_integrate(tmp_path):
    out = tmp_path / "run"
    rep = cli.run("interpolate", small_interp(tmp_path), out=out)
    res = rep["results"]
    assert res["reference"] == pytest.approx(exp_sq_integral_1d() ** 3)
    assert res["abs_error"] == pytest.approx(abs(res["integral"] - res["reference"]))
    assert len(res["loss_history"]) == 2 * 13
    assert rep["config"]["train"]["lbfgs_lr"] == cli.DEFAULTS["interpolate"]["train"]["lbfgs_lr"]
    assert read_report(out / "report.json")["results"]["integral"] == res["integral"]
    cfg = write_config(tmp_path / "int.yaml", {"model": {"path": "run/model.json"}, "target": {"name": "exp_sum_sq"}})
    irep = cli.run("integrate", cfg, out=tmp_path / "int")
    assert irep["results"]["integral"] == pytest.approx(res["integral"], rel=1e-13)
    assert irep["results"]["reference"] == res["reference"]


def test_integrate_constant_model_and_refinement(tmp_path):
    save_model(constant_model(2.0, BoxDomain.cube(0, 1, 3)), tmp_path / "two.json")
    cfg = write_config(tmp_path / "c.yaml", {"model": {"path": "two.json"}, "validation": {"reference": 2.0}})
    rep = cli.run("integrate", cfg, out=tmp_path / "o")
    assert rep["results"]["integral"] == pytest.approx(2.0, rel=1e-14)
    assert rep["results"]["abs_error"] <= 1e-14
    smooth = init_tnn(BoxDomain.cube(0, 1, 3), 5, (10, 10), rng=np.random.default_rng(1))
    save_model(smooth, tmp_path / "s.json")
    vals = []
    for n_sub, n_per in ((50, 8), (100, 16)):
        cfg = write_config(tmp_path / "r.yaml", {"model": {"path": "s.json"}, "quadrature": {"n_sub": n_sub, "n_per": n_per}})
        vals.append(cli.run("integrate", cfg, out=tmp_path / "r")["results"]["integral"])
    assert abs(vals[0] - vals[1]) <= 1e-10 * abs(vals[1])


def test_eig2d_command(tmp_path):
    cfg = write_config(
        tmp_path / "e.yaml",
        {
            "model": {"rank": 3, "hidden": [6, 6]},
            "train": {"loss": "pinn", "integration": "mc", "steps": 250},
            "quadrature": {"mc_samples": 400, "eval_n_sub": 10, "eval_n_per": 8},
        },
    )
    rep = cli.run("eig2d", cfg, out=tmp_path / "e")
    assert len(rep["results"]["e_lambda_trajectory"]) == 2
    assert rep["results"]["integration"] == "monte_carlo"
    assert (tmp_path / "e" / "eigenfunction.json").exists()


def test_solve_poisson_command(tmp_path):
    out = tmp_path / "src"
    cli.run("interpolate", small_interp(tmp_path, name="exp_prod_1mx2", dim=2), out=out)
    cfg = write_config(
        tmp_path / "p.yaml",
        {
            "target": {"source_model": "src/model.json", "dim": 2},
            "model": {"rank": 3, "hidden": [6, 6]},
            "train": {"adam_steps": 5, "lbfgs_steps": 2},
            "quadrature": {"n_sub": 8, "n_per": 8},
            "validation": {"n_test": 500},
        },
    )
    rep = cli.run("solve-poisson", cfg, out=tmp_path / "p")
    assert rep["results"]["l2_relative"] > 0 and rep["results"]["n_test"] == 500
    bad = write_config(tmp_path / "bad.yaml", {"target": {"source_model": "src/model.json", "dim": 3}})
    with pytest.raises(cli.UsageError, match="dimensional"):
        cli.run("solve-poisson", bad, out=tmp_path / "p")


def test_missing_source_names_interpolate(tmp_path, capsys):
    cfg = write_config(tmp_path / "p.yaml", {"target": {"source_model": "nowhere.json"}})
    assert cli.main(["solve-poisson", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "tnn interpolate" in capsys.readouterr().err


def test_exit_codes(tmp_path, capsys):
    bad_expr = small_interp(tmp_path, expression="exp(", dim=2)
    assert cli.main(["interpolate", "--config", str(bad_expr), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err
    unknown = small_interp(tmp_path, name="rosenbrock", dim=2)
    assert cli.main(["interpolate", "--config", str(unknown), "--out", str(tmp_path / "o")]) == 2
    flags = write_config(tmp_path / "e.yaml", {"train": {"integration": "simpson"}})
    assert cli.main(["eig2d", "--config", str(flags), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["integrate", "--config", str(tmp_path / "none.yaml")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["plot", "--config", "x.yaml"])


def test_seed_flag_overrides_config(tmp_path):
    cfg = small_interp(tmp_path)
    a = cli.run("interpolate", cfg, seed=11, out=tmp_path / "a")
    b = cli.run("interpolate", cfg, out=tmp_path / "b")
    assert a["seed"] == 11 and b["seed"] == 5
    assert a["results"]["integral"] != b["results"]["integral"]
    c = cli.run("interpolate", cfg, seed=11, out=tmp_path / "c")
    assert deterministic_part(a) == deterministic_part(c)
