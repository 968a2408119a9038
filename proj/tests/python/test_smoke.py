import json
import math
import os
import subprocess

import pytest

import heatrisk


def test_numerics():
    assert heatrisk.pc_prior_rate(0.1, 0.01) == pytest.approx(-math.log(0.01) / 0.1)
    assert heatrisk.matern(0.0, 2.0, 1.5) == pytest.approx(1.0)
    assert heatrisk.matern(1.0, 1.0, 0.5) == pytest.approx(math.exp(-1.0))
    assert heatrisk.conditional_loglik([0.0] * 4, 0) == pytest.approx(-math.log(4))
    assert heatrisk.conditional_loglik([1.0, 0.0], 0) == pytest.approx(1 - math.log(1 + math.e))


def test_heatwaves():
    assert heatrisk.detect_heatwaves([34, 36, 36, 34], 35.0) == [False, True, True, False]
    assert heatrisk.detect_heatwaves([34, 36, 36, 34], 35.0, "1daylag") == [False, False, True, False]
    assert heatrisk.detect_heatwaves([36] * 4, 35.0, "heatwave_2dayslag") == [False, False, True, True]
    with pytest.raises(heatrisk.HeatriskError):
        heatrisk.detect_heatwaves([30.0], 35.0, preset="nonsense")


def test_tps_reproduces_planes():
    knots = [(0, 0), (1, 0), (0, 1), (1, 1), (0.3, 0.7)]
    values = [2 + 3 * x - y for x, y in knots]
    got = heatrisk.tps_interpolate(knots, values, 1e-6, [(0.5, 0.5), (2.0, -1.0)])
    assert got == pytest.approx([3.0, 9.0], abs=1e-6)


def test_config_and_subcommands():
    config = json.loads(heatrisk.default_config())
    assert config["seed"] is None
    stages = heatrisk.subcommands()
    for name in ("prep", "fit-gqrm", "surface", "fit-epi", "all"):
        assert name in stages


def test_small_stages(tmp_path):
    config = heatrisk.simulate(str(tmp_path / "sim"), seed=3)
    assert os.path.exists(config)
    log = heatrisk.run("prep", str(config))
    assert all("stage" in json.loads(line) for line in log.splitlines())
    heatrisk.run("aggregate", str(config), method="reanalysis")
    assert (tmp_path / "sim" / "surfaces" / "reanalysis.csv").exists()
    with pytest.raises(heatrisk.HeatriskError, match="missing_artifact"):
        heatrisk.run("fit-epi", str(config))


@pytest.mark.skipif("HEATRISK_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_errors(tmp_path):
    cli = os.environ["HEATRISK_CLI"]
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1, "colour": "blue"}')
    r = subprocess.run([cli, "prep", "--config", str(bad)], capture_output=True, text=True)
    assert r.returncode == 2
    err = json.loads(r.stderr.strip().splitlines()[-1])
    assert err["error"]["code"] == "invalid_config"
    r = subprocess.run([cli, "config", "--print-defaults"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "gqrm" in json.loads(r.stdout)
