import math

import numpy as np
import pytest

from frameskip.acceptance import small_config, tree_differences
from frameskip.harness import Config, ConfigError, ExperimentConfig, output_root, run_experiment, seed_sequence
from frameskip.harness.results import (
    Series,
    aggregate,
    emit_plot_data,
    format_table,
    mean_stderr,
    read_csv,
    render_svg,
    separation,
    write_csv,
)

TEXT = """\
# comment line
[experiment]
kind = prediction   # trailing comment
seeds = 3

[prediction]
d = 1, 2 4
flag = yes
"""


# --- config ------------------------------------------------------------------


def test_parse_and_typed_access():
    cfg = Config.parse(TEXT)
    assert cfg.get("experiment", "kind") == "prediction"
    assert cfg.get_int("experiment", "seeds") == 3
    assert cfg.get_list("prediction", "d", int) == [1, 2, 4]
    assert cfg.get_bool("prediction", "flag") is True
    assert cfg.get_float("prediction", "missing", 0.5) == 0.5


@pytest.mark.parametrize(
    "text, field",
    [
        ("kind = x\n", "line 1"),
        ("[a]\njunk\n", "line 2"),
        ("[]\n", "line 1"),
    ],
)
def test_parse_errors_name_the_line(text, field):
    with pytest.raises(ConfigError) as err:
        Config.parse(text)
    assert err.value.field == field


def test_typed_errors_name_the_field():
    cfg = Config.parse(TEXT)
    with pytest.raises(ConfigError, match="experiment.kind"):
        cfg.get_int("experiment", "kind")
    with pytest.raises(ConfigError, match="prediction.absent"):
        cfg.get("prediction", "absent")
    cfg.set("prediction", "flag", "maybe")
    with pytest.raises(ConfigError, match="prediction.flag"):
        cfg.get_bool("prediction", "flag")
    cfg.set("prediction", "d", "")
    with pytest.raises(ConfigError, match="nonempty"):
        cfg.get_list("prediction", "d")


def test_digest_ignores_layout():
    a = Config.parse(TEXT)
    b = Config.parse("[prediction]\nflag=yes\nd = 1, 2 4\n[experiment]\nseeds=3\nkind=prediction\n")
    assert a.dumps() == b.dumps() and a.digest() == b.digest()
    b.set("experiment", "seeds", 4)
    assert a.digest() != b.digest()


@pytest.mark.parametrize(
    "edit, field",
    [
        (("experiment", "kind", "nope"), "experiment.kind"),
        (("experiment", "seeds", 0), "experiment.seeds"),
        (("experiment", "master_seed", -1), "experiment.master_seed"),
        (("env", "map", "no/such/file.map"), "env.map"),
    ],
)
def test_experiment_validation(edit, field):
    cfg = Config.parse(TEXT)
    cfg.set(*edit)
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_config(cfg)
    assert err.value.field == field


def test_map_path_relative_to_config(tmp_path):
    (tmp_path / "grid.map").write_text("S.G\n")
    path = tmp_path / "exp.cfg"
    path.write_text(TEXT + "[env]\nmap = grid.map\n")
    ExperimentConfig.from_config(Config.load(path))


def test_seed_streams_are_counter_based():
    a = np.random.default_rng(seed_sequence(5, 2, 7)).random(4)
    b = np.random.default_rng(seed_sequence(5, 2, 7)).random(4)
    c = np.random.default_rng(seed_sequence(5, 3, 7)).random(4)
    d = np.random.default_rng(seed_sequence(5, 2, 8)).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_output_root_precedence(tmp_path):
    assert output_root(tmp_path / "x", {"FSRL_OUT": "/elsewhere"}) == tmp_path / "x"
    assert str(output_root(None, {"FSRL_OUT": "/elsewhere"})) == "/elsewhere"
    assert str(output_root(None, {})) == "runs"


# --- aggregation and output ------------------------------------------------------


def test_aggregate_single_seed_flagged():
    s = aggregate([Series([1, 2], [3.0, 4.0])])
    assert s.single_seed and "single-seed" in s.flags
    assert np.all(s.stderr == 0.0)


def test_aggregate_constant_values():
    s = aggregate([Series([1, 2], [3.0, 4.0])] * 4)
    assert np.all(s.stderr == 0.0) and np.allclose(s.mean, [3.0, 4.0])


def test_aggregate_known_variance():
    runs = [Series([0.0], [v]) for v in (1.0, 2.0, 3.0, 4.0, 5.0)]
    s = aggregate(runs)
    assert s.mean[0] == 3.0
    assert abs(s.stderr[0] - math.sqrt(2.5 / 5)) <= 1e-12


def test_aggregate_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        aggregate([Series([1, 2], [0, 0]), Series([1, 3], [0, 0])])
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        Series([1, 2], [0.0])


def test_mean_stderr_and_separation():
    assert mean_stderr([2.0]) == (2.0, 0.0)
    assert separation([1.0, 1.0], [0.0, 0.0]) == math.inf
    assert separation([0.0, 0.0], [0.0, 0.0]) == 0.0
    a, b = [1.0, 2.0, 3.0], [0.0, 1.0, 2.0]
    se = math.hypot(*(mean_stderr(x)[1] for x in (a, b)))
    assert separation(a, b) == pytest.approx(1.0 / se)


def test_plot_data_empty_series(tmp_path):
    empty = aggregate([Series([], [])])
    dat, svg = emit_plot_data({"none": empty}, tmp_path / "plot")
    assert dat.read_text().splitlines() == ["# none"]
    assert svg.read_text().startswith("<svg")
    dat, svg = emit_plot_data({}, tmp_path / "nothing")
    assert dat.read_text() == ""


def test_plot_data_two_points(tmp_path):
    s = aggregate([Series([1, 2], [1.0, 2.0]), Series([1, 2], [3.0, 2.0])])
    dat, svg = emit_plot_data({"d=1": s}, tmp_path / "plot", "title", "x", "y")
    rows = [line.split() for line in dat.read_text().splitlines() if not line.startswith("#")]
    assert len(rows) == 2 and all(len(r) == 3 for r in rows)
    assert float(rows[0][1]) == 2.0 and float(rows[0][2]) == 1.0
    text = svg.read_text()
    assert text.count("<line") >= 2 and "d=1" in text


def test_svg_escapes_labels():
    s = aggregate([Series([0], [0.0])])
    assert "a &lt; b" in render_svg({"a < b": s})


def test_table_format():
    text = format_table([0.99, 1.0], [1, 3], [[-94.6, -90.0], [-106.4, -85.2]], [[3.6, 1.0], [3.0, 0.5]], "gamma \\ d")
    lines = text.splitlines()
    assert "-94.6 (3.6)" in lines[1] and "-106.4 (3.0)" in lines[2]
    assert len({len(line) for line in lines}) == 1


def test_csv_round_trip(tmp_path):
    path = write_csv(tmp_path / "a" / "t.csv", ("x", "y", "ok"), [[1, 0.1, True], {"x": 2, "y": [1.0, 2.0], "ok": False}])
    rows = read_csv(path)
    assert rows[0] == {"x": "1", "y": "0.1", "ok": "true"}
    assert rows[1]["y"] == "1.0 2.0"


# --- runs ------------------------------------------------------------------------


def test_verify_bounds_run_layout(tmp_path):
    exp = ExperimentConfig.from_config(small_config("verify-bounds"))
    out = run_experiment(exp, tmp_path)
    assert out.passed and out.directory == tmp_path / exp.digest()
    for name in ("config.cfg", "aggregate.csv", "checks.txt", "0/bounds.csv"):
        assert (out.directory / name).exists()
    agg = {r["check"]: r for r in read_csv(out.directory / "aggregate.csv")}
    assert agg["deficit"]["count"] == agg["deficit"]["holds"]
    assert len((out.directory / "checks.txt").read_text().splitlines()) == len(out.checks)
    index = (tmp_path / "index.txt").read_text().splitlines()
    assert index == [f"{exp.digest()} verify-bounds seeds=1 master=7 verify-bounds.cfg"]
    run_experiment(exp, tmp_path)
    assert (tmp_path / "index.txt").read_text().splitlines() == index


def test_rerun_is_byte_identical(tmp_path):
    exp = ExperimentConfig.from_config(small_config("prediction"))
    run_experiment(exp, tmp_path / "a")
    run_experiment(exp, tmp_path / "b")
    assert tree_differences(tmp_path / "a", tmp_path / "b") == []


def test_adding_seeds_keeps_existing_streams(tmp_path):
    two = small_config("prediction")
    three = small_config("prediction")
    three.set("experiment", "seeds", 3)
    a = run_experiment(ExperimentConfig.from_config(two), tmp_path)
    b = run_experiment(ExperimentConfig.from_config(three), tmp_path)
    for i in (0, 1):
        assert (a.directory / str(i) / "prediction.csv").read_bytes() == (b.directory / str(i) / "prediction.csv").read_bytes()


def test_kind_mismatch_rejected(tmp_path):
    exp = ExperimentConfig.from_config(small_config("prediction"))
    with pytest.raises(ConfigError):
        run_experiment(exp, tmp_path, expected_kind="control")


def test_unknown_bound_check_rejected(tmp_path):
    cfg = small_config("verify-bounds")
    cfg.set("bounds", "checks", "deficit bogus")
    with pytest.raises(ConfigError, match="bogus"):
        run_experiment(ExperimentConfig.from_config(cfg), tmp_path)


def test_control_outputs(tmp_path):
    out = run_experiment(ExperimentConfig.from_config(small_config("control")), tmp_path)
    d = out.directory
    for name in ("aggregate.csv", "table.txt", "learning_curves.dat", "learning_curves.svg", "0/control.csv", "0/scores.csv"):
        assert (d / name).exists(), name
    header = (d / "0" / "control.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["seed", "algo", "env", "d"]


def test_bandit_outputs(tmp_path):
    out = run_experiment(ExperimentConfig.from_config(small_config("bandit-bernoulli")), tmp_path)
    hist = read_csv(out.directory / "0" / "histogram.csv")
    assert sum(int(r["pulls"]) for r in hist) == 500
    header = (out.directory / "0" / "meta.csv").read_text().splitlines()[0].split(",")
    assert header == ["seed", "episode", "arm_d", "normalized_reward", "raw_return", "p_vector"]
