import csv
import json

import numpy as np
import pytest
import yaml

from sfsl.errors import ConfigError
from sfsl.harness.cli import main
from sfsl.harness.cost_model import CostModelInput, predict_all, predict_cost
from sfsl.harness.dropout import NO_DROPOUT, inject_dropout
from sfsl.harness.experiments import ExperimentConfig, linear_fit, load_config, load_preset, run_experiment
from sfsl.harness.metrics import SERVER, TrafficMeter, client_party
from sfsl.harness.transport import Network
from sfsl.wire import KeyAdvertise, RoundAbort, UnionResult, encode_frame


# -- transport ---------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["inproc", "socket"])
def test_transport_delivers_in_order_and_meters(mode):
    meter = TrafficMeter()
    with Network([1, 2], mode, meter) as net:
        meter.stage = "s1"
        net.client(1).send(KeyAdvertise(1, 5, 6))
        net.client(1).send(RoundAbort())
        net.client(2).send(UnionResult(np.arange(1, 50)))
        assert isinstance(net.server(1).recv(), KeyAdvertise)
        assert isinstance(net.server(1).recv(), RoundAbort)
        np.testing.assert_array_equal(net.server(2).recv().indices, np.arange(1, 50))
        meter.stage = "s2"
        n = net.server(2).send(RoundAbort())
        assert n == 5
        assert isinstance(net.client(2).recv(), RoundAbort)
    assert meter.conservation_errors() == []
    sent = meter.total(client_party(1), "s1", "sent") + meter.total(client_party(2), "s1", "sent")
    assert sent == meter.total(SERVER, "s1", "recv")
    assert meter.total(client_party(1), "s1", "sent") == len(encode_frame(KeyAdvertise(1, 5, 6))) + 5
    assert meter.total(SERVER, "s2", "sent") == 5


def test_meter_flags_lost_bytes():
    meter = TrafficMeter()
    meter.stage = "x"
    meter.record(client_party(1), "sent", 40)
    meter.record(SERVER, "recv", 30)
    assert meter.conservation_errors() == [("x", 30, 40)]


def test_meter_prefix_totals():
    meter = TrafficMeter()
    meter.record("a", "sent", 3, stage="psu/key_advertise")
    meter.record("a", "sent", 4, stage="psu/masked_input")
    meter.record("a", "sent", 5, stage="psuedo")
    assert meter.total("a", "psu") == 7


# -- dropout ---------------------------------------------------------------------

def test_dropout_counts():
    rng = np.random.default_rng(0)
    assert inject_dropout(range(10), 0.0, rng).dropped == frozenset()
    plan = inject_dropout(range(100), 0.2, rng)
    assert len(plan.dropped) == 20
    assert len(inject_dropout(range(10), 0.3, rng).dropped) == 3
    assert inject_dropout(range(7), 1.0, rng).dropped == frozenset(range(7))
    assert NO_DROPOUT.drops_in("update") == frozenset()


def test_dropout_seeded():
    a = inject_dropout(range(50), 0.3, np.random.default_rng(4))
    b = inject_dropout(range(50), 0.3, np.random.default_rng(4))
    assert a == b


@pytest.mark.parametrize("ratio,phase", [(-0.1, "update"), (1.5, "update"), (0.1, "download")])
def test_dropout_validation(ratio, phase):
    with pytest.raises(ConfigError):
        inject_dropout(range(4), ratio, np.random.default_rng(0), phase)


# -- cost model ------------------------------------------------------------------------

def test_sfsl_client_comm_all_ones():
    n, s, d = 20, 100, 18
    est = predict_cost(CostModelInput(n, s, 0, d, 1, 1, "client", "sfsl"))
    assert est.total == n * s + n * s * (2 * d + 1)


def test_sfl_client_comm():
    est = predict_cost(CostModelInput(20, 100, 20000, 18, role="client", scheme="sfl"))
    assert est.total == 20 + 20000 * 18


@pytest.mark.parametrize("scheme", ["sfsl", "psu"])
@pytest.mark.parametrize("n", [20, 40, 100])
def test_doubling_n_doubles_client_comm(scheme, n):
    a = predict_cost(CostModelInput(n, 100, 20000, 18, 1, 1, "client", scheme)).total
    b = predict_cost(CostModelInput(2 * n, 100, 20000, 18, 1, 1, "client", scheme)).total
    assert 1.9 <= b / a <= 2.1


def test_cost_model_all_metrics():
    out = predict_all(CostModelInput(10, 5, 100, 3, 0.8, 0.2, "server", "sfsl"))
    assert set(out) == {"comm", "comp", "storage"}
    assert all(e.total > 0 for e in out.values())


@pytest.mark.parametrize("kw", [{"n": 0}, {"p5": 1.5}, {"scheme": "x"}, {"role": "peer"}])
def test_cost_model_validation(kw):
    base = dict(n=10, s=1, m=1, d=1)
    base.update(kw)
    with pytest.raises(ConfigError):
        CostModelInput(**base)


# -- experiments ----------------------------------------------------------------------

def test_linear_fit_exact():
    slope, icpt, r2 = linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert (slope, icpt, r2) == pytest.approx((2, 1, 1))


def test_unknown_config_key(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"n": 4, "bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("raw", [{"n": 1}, {"schemes": ["nope"]}, {"cpp": "CPP9"}, {"transport": "udp"}])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


@pytest.mark.parametrize("name", ["smoke", "psu-bench", "sfsl-vs-sfl"])
def test_presets_load(name):
    assert load_preset(name).name == name


def test_smoke_experiment_writes_outputs(tmp_path):
    cfg = load_preset("smoke")
    res = run_experiment(cfg, tmp_path, seed=3)
    rows = list(csv.DictReader(res.csv_path.open()))
    assert len(rows) == cfg.rounds
    summary = json.loads(res.summary_path.read_text())
    assert summary["conservation_ok"] is True
    assert (tmp_path / "memos").is_dir()
    assert all(r["conservation_ok"] == "1" for r in rows)


def test_experiment_replayable(tmp_path):
    cfg = ExperimentConfig.from_dict({"n": 3, "m": 200, "d": 3, "set_size": 10, "samples": 10,
                                      "rounds": 2, "group": "small256", "cpp": "CPP2"})
    a = run_experiment(cfg, seed=7)
    b = run_experiment(cfg, seed=7)
    keys = ["union_size", "client_bytes_mean", "server_bytes", "mean_perturbed_size"]
    assert [[r[k] for k in keys] for r in a.rows] == [[r[k] for k in keys] for r in b.rows]


def test_socket_and_inproc_bytes_agree():
    cfg = ExperimentConfig.from_dict({"n": 3, "m": 200, "d": 3, "set_size": 10, "samples": 10, "group": "small256"})
    a = run_experiment(cfg, transport="inproc", seed=1)
    b = run_experiment(cfg, transport="socket", seed=1)
    assert a.rows[0]["client_bytes_mean"] == b.rows[0]["client_bytes_mean"]


# -- CLI --------------------------------------------------------------------------------

def test_cli_run_smoke(tmp_path, capsys):
    assert main(["run", "--preset", "smoke", "--out", str(tmp_path), "--insecure-small-group"]) == 0
    assert (tmp_path / "metrics.csv").stat().st_size > 0
    assert "mean client bytes" in capsys.readouterr().out


def test_cli_run_config_file(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"name": "tiny", "n": 3, "m": 100, "d": 2, "set_size": 5, "samples": 5}))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o"), "--seed", "2",
                 "--transport", "socket", "--insecure-small-group"]) == 0


def test_cli_full_dropout_exit_code(tmp_path):
    assert main(["run", "--preset", "smoke", "--dropout", "1", "--out", str(tmp_path), "--insecure-small-group"]) == 2


def test_cli_bad_config_is_error(tmp_path, capsys):
    path = tmp_path / "c.yaml"
    path.write_text("n: 1\n")
    assert main(["run", "--config", str(path)]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_privacy_table(tmp_path, capsys):
    path = tmp_path / "cpps.yaml"
    path.write_text(yaml.safe_dump({"mine": [0.9, 0.1, 0.8, 0.2], "CPP5": None}, sort_keys=False))
    assert main(["privacy-table", "--cpp-file", str(path), "--nj0", "98.83", "--nj1", "1.17", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["cpp"] for r in rows] == ["mine", "CPP5"]
    assert rows[1]["p7"] == 0


def test_cli_cost_model(capsys):
    assert main(["cost-model", "--scheme", "sfl", "--n", "20", "--m", "20000", "--d", "18", "--role", "client"]) == 0
    out = capsys.readouterr().out
    assert "360020" in out


def test_cli_psu_bench(tmp_path, capsys):
    assert main(["psu-bench", "--n-range", "4:8:2", "--out", str(tmp_path), "--insecure-small-group"]) == 0
    out = capsys.readouterr().out
    assert "R^2" in out


def test_cli_bad_range():
    with pytest.raises(SystemExit):
        main(["psu-bench", "--n-range", "9:3"])


def test_log_level_from_env(monkeypatch):
    import logging

    from sfsl.harness import cli

    monkeypatch.setenv("SFSL_LOG", "debug")
    root = logging.getLogger()
    old = root.handlers[:]
    root.handlers.clear()
    try:
        cli.configure_logging()
        assert root.level == logging.DEBUG
    finally:
        root.handlers[:] = old
