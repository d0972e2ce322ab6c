import json
import subprocess
import sys

import numpy as np
import pytest

from mpemba_reset.cli import main
from mpemba_reset.core import purity
from mpemba_reset.experiments import (
    HAAR_COLUMNS,
    ConfigError,
    ExperimentConfig,
    HaarSampler,
    haar_state,
    histogram,
    run,
    to_csv,
    to_json,
)


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


HAAR_TOML = """
experiment = "haar-ensemble"
epsilon = 1e-3
[model]
kind = "markovian"
gamma1 = 1.0
gamma_phi = 0.16666666666666666
[ensemble]
count = 24
seed = 42
"""


def test_sampler_is_reproducible():
    a, b = HaarSampler(7), HaarSampler(7)
    np.testing.assert_array_equal(a.state(13).mat, b.state(13).mat)
    assert a.angles(0) != a.angles(1)
    assert HaarSampler(7).angles(3) != HaarSampler(8).angles(3)
    with pytest.raises(ValueError):
        HaarSampler(-1)


def test_haar_states_are_pure():
    s = HaarSampler(1)
    for i in range(50):
        assert purity(haar_state(s, i)) == pytest.approx(1.0, abs=1e-14)


def test_haar_ensemble_statistics():
    s = HaarSampler(2024)
    n = 10_000
    z = np.empty(n)
    p1 = np.empty(n)
    for i in range(n):
        r = s.state(i).mat
        z[i] = (r[0, 0] - r[1, 1]).real
        p1[i] = r[1, 1].real
    # <sigma_z> ~ U[-1, 1] has std 1/sqrt(3); the excited population has std 1/sqrt(12)
    assert abs(z.mean()) < 3 / np.sqrt(3 * n)
    assert abs(p1.mean() - 0.5) < 3 / np.sqrt(12 * n)


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig.from_toml(write(tmp_path, HAAR_TOML))
    assert cfg.count == 24 and cfg.seed == 42
    assert cfg.output["format"] == "csv"


@pytest.mark.parametrize("text,field", [
    ('experiment = "nope"', "experiment"),
    ('experiment = "haar-ensemble"\n[model]\nkind = "x"', "model.kind"),
    ('experiment = "haar-ensemble"\n[model]\nkind = "markovian"\ngamma1 = -1.0', "model"),
    ('experiment = "haar-ensemble"\n[model]\nkind = "markovian"\nkappa = 1.0', "model"),
    ('experiment = "haar-ensemble"\nepsilon = 2.0', "epsilon"),
    ('experiment = "haar-ensemble"\n[ensemble]\ncount = 0', "ensemble.count"),
    ('experiment = "haar-ensemble"\n[ensemble]\nseed = -3', "ensemble.seed"),
    ('experiment = "haar-ensemble"\n[output]\nformat = "xml"', "output.format"),
    ('experiment = "haar-ensemble"\n[ancilla]\np0 = 0.5\ncoherence = 0.9', "ancilla"),
    ('epsilon = 0.1', "experiment"),
    ('experiment = "haar-ensemble"\nbogus = 1', "bogus"),
])
def test_config_errors_name_the_field(tmp_path, text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        ExperimentConfig.from_toml(write(tmp_path, text))


def test_toml_syntax_error_reports_line(tmp_path):
    with pytest.raises(ConfigError, match="line 2"):
        ExperimentConfig.from_toml(write(tmp_path, 'experiment = "haar-ensemble"\nepsilon = = 1'))


def test_haar_csv_header_and_rows(tmp_path):
    res = run(ExperimentConfig.from_toml(write(tmp_path, HAAR_TOML)))
    text = to_csv(res)
    header = text.splitlines()[0].split(",")
    assert tuple(header[: len(HAAR_COLUMNS)]) == HAAR_COLUMNS
    assert {"model", "gamma1", "gamma_phi", "omega_q", "ancilla_p0", "epsilon"} <= set(header)
    assert len(text.splitlines()) == 25
    doc = json.loads(to_json(res))
    assert len(doc["records"]) == 24 and "median" in doc["summary"]


def test_histogram_default_bins():
    h = histogram([1.0, 1.5, 1.99, 2.5])
    assert len(h["counts"]) == 50
    assert sum(h["counts"]) == 3


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, 'experiment = "nope"', "bad.toml")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    good = write(tmp_path, HAAR_TOML)
    out = tmp_path / "o.csv"
    assert main(["run", "--config", str(good), "--out", str(out), "--seed", "5"]) == 0
    assert out.read_text().splitlines()[1].split(",")[1] == "5"
    assert main(["spectrum", "--model", "markovian", "--count", "3"]) == 0
    assert main(["spectrum", "--model", "markovian", "--gamma1", "-1"]) == 2
    capsys.readouterr()


def test_cli_numerical_failure_exit_code(tmp_path):
    # a reset horizon far too short for the curve to settle
    text = HAAR_TOML + "[grid]\nt_max = 0.5\n"
    assert main(["run", "--config", str(write(tmp_path, text))]) == 3


def test_cli_entry_point_validate():
    proc = subprocess.run([sys.executable, "-m", "mpemba_reset.cli", "validate"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.count("PASS") == 4


def test_json_output_format(tmp_path):
    out = tmp_path / "o.json"
    assert main(["run", "--config", str(write(tmp_path, HAAR_TOML)), "--out", str(out), "--format", "json"]) == 0
    assert json.loads(out.read_text())["experiment"] == "haar-ensemble"


def test_thread_count_does_not_change_output(tmp_path):
    cfg = write(tmp_path, HAAR_TOML)
    outs = []
    for threads in (1, 3):
        out = tmp_path / f"t{threads}.csv"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--threads", str(threads)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_speedup_map_and_finite_temperature_small(tmp_path):
    res = run(ExperimentConfig.from_dict({"experiment": "speedup-map", "grid": {"n": 6}}))
    for r in res.rows:
        expected = max(r["t2"] / r["t1"], 1.0)
        assert r["speedup"] == pytest.approx(expected, abs=1e-8)
    res = run(ExperimentConfig.from_dict({"experiment": "finite-temperature", "model": {"kind": "thermal"},
                                          "grid": {"n_nbar": 4, "n_ratio": 4}}))
    for r in res.rows:
        assert r["speedup_spectral"] == pytest.approx(max(r["speedup_formula"], 1.0), rel=1e-10)


def test_spectrum_overlaps_suppression():
    res = run(ExperimentConfig.from_dict({"experiment": "spectrum-overlaps"}))
    slow = [r for r in res.rows if abs(r["re_lambda"] + 2 / 3) < 1e-9]
    assert slow and max(r["overlap_after"] for r in slow) < 1e-12
    assert max(r["overlap_before"] for r in slow) > 0.1


def test_ancilla_coherence_shifts_speedups_toward_one():
    cfg = ExperimentConfig.from_dict({
        "experiment": "ancilla-sweep", "ensemble": {"count": 200, "seed": 3},
        "grid": {"p0": [0.5], "coherence": [0.25, 0.5]},
    })
    medians = [s["median"] for s in run(cfg).summary["settings"]]
    assert medians[0] > medians[1] > medians[2]
    assert abs(medians[2] - 1) < abs(medians[0] - 1)


@pytest.fixture(scope="module")
def population_sweep():
    cfg = ExperimentConfig.from_dict({
        "experiment": "ancilla-sweep", "ensemble": {"count": 1000, "seed": 20240601},
        "grid": {"p0": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]},
    })
    return run(cfg).summary["settings"]


def test_population_sweep_width_grows_as_excited_population_vanishes(population_sweep):
    # p0 is the ground population; excited population 1 - p0 falls along the sweep
    widths = [s["std"] for s in population_sweep]
    assert np.all(np.diff(widths) > 0)


def test_population_sweep_mean_constant_within_3_percent(population_sweep):
    means = np.array([s["mean"] for s in population_sweep])
    assert (means.max() - means.min()) / means.min() <= 0.03
