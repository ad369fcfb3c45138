from pathlib import Path

import pytest

from dqstab.cli import main, parse_grid, parse_range, InputError, EXIT_INPUT, EXIT_NOT_CONVERGED, \
    EXIT_OK, EXIT_UNSTABLE
from dqstab.freqdata import load_response_csv

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
UNSTABLE = str(FIXTURES / "plant_unstable.json")
PLL_RETUNED = str(FIXTURES / "plant_pll_retuned.json")
VAC_RETUNED = str(FIXTURES / "plant_vac_retuned.json")
MEASURED = str(FIXTURES / "plant_measured_unit.json")


def run(tmp, *args):
    return main(["--out-dir", str(tmp), *args])


@pytest.fixture(scope="module")
def unit_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert run(d, "synth", MEASURED, "--what", "wecs") == EXIT_OK
    return d / "synth_wecs.csv"


@pytest.fixture(scope="module")
def coeff_dir(tmp_path_factory, unit_csv):
    d = tmp_path_factory.mktemp("fit")
    assert run(d, "fit", str(unit_csv)) == EXIT_OK
    return d


# --- argument parsing --------------------------------------------------------

@pytest.mark.parametrize("text,n", [("1:5000:75", 75), ("0.1:10:3", 3)])
def test_parse_grid(text, n):
    assert len(parse_grid(text)) == n


@pytest.mark.parametrize("text", ["1:5000", "a:b:c", "10:1:5", "1:10:1"])
def test_parse_grid_rejects(text):
    with pytest.raises(InputError):
        parse_grid(text)


def test_parse_range():
    assert parse_range("0.05:0.30:26").size == 26
    assert parse_range("0.1:1.0").size == 10
    with pytest.raises(InputError):
        parse_range("0.1")


# --- fit -----------------------------------------------------------------------

def test_fit_writes_four_channels(coeff_dir):
    for ch in ("dd", "dq", "qd", "qq"):
        assert (coeff_dir / f"fit_{ch}.coef").exists()
    report = (coeff_dir / "fit_report.txt").read_text()
    for ch in ("dd", "qq"):
        line = next(l for l in report.splitlines() if l.startswith(ch + ":"))
        err = float(line.split("max_rel_error=")[1].split()[0])
        assert err <= 1e-3


def test_fit_empty_file_is_input_error(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert run(tmp_path, "fit", str(empty)) == EXIT_INPUT


def test_fit_unreachable_target_still_writes(tmp_path):
    assert run(tmp_path, "--seed", "3", "synth", MEASURED, "--noise", "0.01") == EXIT_OK
    code = run(tmp_path, "fit", str(tmp_path / "synth_wecs.csv"), "--err-target", "1e-6",
               "--max-order", "4")
    assert code == EXIT_NOT_CONVERGED
    assert (tmp_path / "fit_dd.coef").read_text().startswith("num")


def test_fit_base_mismatch_without_rebase(tmp_path, unit_csv):
    assert run(tmp_path, "--base-mva", "100", "fit", str(unit_csv)) == EXIT_INPUT
    assert run(tmp_path, "--base-mva", "100", "--rebase", "fit", str(unit_csv)) == EXIT_OK


# --- stability -----------------------------------------------------------------

def test_stability_unstable_fixture(tmp_path):
    assert run(tmp_path, "stability", UNSTABLE) == EXIT_UNSTABLE
    report = (tmp_path / "gnc_report.txt").read_text()
    assert "UNSTABLE" in report.upper()
    assert (tmp_path / "loci.csv").read_text().startswith("f_hz")
    for name in ("hvdc_dd", "hvdc_qq", "wind_dd", "wind_qq"):
        assert (tmp_path / f"bode_{name}.csv").exists()


@pytest.mark.xfail(strict=True, reason="critical frequency of this fixture is 6.99 Hz; see ledger")
def test_stability_report_names_8p5_hz(tmp_path):
    run(tmp_path, "stability", UNSTABLE)
    assert "8.5" in (tmp_path / "gnc_report.txt").read_text()


def test_stability_pll_retuned_is_stable(tmp_path):
    assert run(tmp_path, "stability", PLL_RETUNED) == EXIT_OK


def test_stability_with_fitted_unit(tmp_path, coeff_dir):
    assert run(tmp_path, "stability", UNSTABLE, "--coeffs", str(coeff_dir)) == EXIT_UNSTABLE


def test_stability_base_mismatch(tmp_path):
    assert run(tmp_path, "--base-mva", "100", "stability", UNSTABLE) == EXIT_INPUT


def test_stability_missing_plant(tmp_path):
    assert run(tmp_path, "stability", str(tmp_path / "nope.json")) == EXIT_INPUT


# --- extract ---------------------------------------------------------------------

def test_extract_prints_pll_triple(tmp_path, coeff_dir, capsys):
    assert run(tmp_path, "extract", MEASURED, "--coeffs", str(coeff_dir)) == EXIT_OK
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("PLL:"))
    bw = float(line.split("bandwidth ")[1].split()[0])
    fc = float(line.split("crossover ")[1].split()[0])
    pm = float(line.split("phase margin ")[1].split()[0])
    assert abs(bw - 8.5) < 0.5 and abs(fc - 5.78) < 0.2 and abs(pm - 47) < 2


def test_extract_corrupted_coefficients(tmp_path, coeff_dir):
    bad = tmp_path / "bad"
    bad.mkdir()
    for p in coeff_dir.glob("fit_*.coef"):
        (bad / p.name).write_text(p.read_text())
    (bad / "fit_qq.coef").write_text("num\n1.0\nden\nnot-a-number\n")
    assert run(tmp_path, "extract", MEASURED, "--coeffs", str(bad)) == EXIT_INPUT


def test_extract_noisy_deterministic(tmp_path):
    reports = []
    for k in range(2):
        d = tmp_path / str(k)
        run(d, "--seed", "7", "synth", MEASURED, "--noise", "0.01")
        run(d, "extract", MEASURED, "--wind-unit", str(d / "synth_wecs.csv"))
        reports.append((d / "extraction_report.txt").read_bytes())
    assert reports[0] == reports[1]


# --- sweep -----------------------------------------------------------------------

def test_sweep_kp_vac(tmp_path):
    assert run(tmp_path, "sweep", UNSTABLE, "--param", "kp_vac", "--range", "0.05:0.30:26") == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("param,re_lambda_1")
    assert len(lines) == 1 + 26 + 1
    assert lines[-1].startswith("# crossing_value=")
    verdicts = (tmp_path / "sweep_verdicts.csv").read_text().splitlines()
    assert len(verdicts) == 27


@pytest.mark.xfail(strict=True, reason="this fixture stays unstable on 0.05-0.30; see ledger")
def test_sweep_kp_vac_crossing_between_0p09_and_0p2(tmp_path):
    run(tmp_path, "sweep", UNSTABLE, "--param", "kp_vac", "--range", "0.05:0.30:26")
    value = (tmp_path / "sweep.csv").read_text().splitlines()[-1].split("=")[1]
    assert value != "none" and 0.09 < float(value) < 0.20


def test_sweep_power_gives_verdict_per_point(tmp_path):
    assert run(tmp_path, "sweep", UNSTABLE, "--param", "power_pu", "--range", "0.1:1.0") == EXIT_OK
    rows = (tmp_path / "sweep_verdicts.csv").read_text().splitlines()[1:]
    assert len(rows) == 10
    for row in rows:
        _, _, ss, gnc, _ = row.split(",")
        assert ss in ("true", "false") and gnc in ("true", "false")


@pytest.mark.parametrize("args", [
    ("--param", "not_a_gain", "--range", "0:1:5"),
    ("--param", "kp_vac", "--range", "0.1"),
])
def test_sweep_input_errors(tmp_path, args):
    assert run(tmp_path, "sweep", UNSTABLE, *args) == EXIT_INPUT


# --- synth -----------------------------------------------------------------------

def test_synth_default_grid_spans_measurement_range(unit_csv):
    rs = load_response_csv(unit_csv)
    assert len(rs.grid) == 75
    assert rs.grid.points[0] == pytest.approx(1.0) and rs.grid.points[-1] == pytest.approx(5000.0)


@pytest.mark.parametrize("noise,seed", [("0", "0"), ("0.01", "42")])
def test_synth_byte_identical(tmp_path, noise, seed):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert run(d, "--seed", seed, "synth", UNSTABLE, "--noise", noise) == EXIT_OK
        outs.append((d / "synth_wecs.csv").read_bytes())
    assert outs[0] == outs[1]


def test_synth_invalid_plant(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_farms": -1}')
    assert run(tmp_path, "synth", str(bad)) == EXIT_INPUT


def test_stability_outputs_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        run(d, "stability", PLL_RETUNED)
        outs.append([(d / n).read_bytes() for n in ("gnc_report.txt", "loci.csv")])
    assert outs[0] == outs[1]
