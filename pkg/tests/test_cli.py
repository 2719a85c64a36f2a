import csv
from dataclasses import replace

import pytest

from cusp_spectra.cli import main
from cusp_spectra.config import DiscretizationConfig, EnsembleConfig, GeometryConfig, RunConfig, SolverConfig, dumps
from cusp_spectra.experiments import CUSP_COLUMNS, run_experiment

SMALL_CUSP = RunConfig(
    experiment="cusp_rate",
    geometry=GeometryConfig(alpha=0.95, eps0=0.2, eps_levels=(0.16, 0.08, 0.04, 0.02), eps_ref=0.005),
    discretization=DiscretizationConfig(h=0.1, grading=2.0, axis_grading=0.3, quad_order=7),
    solver=SolverConfig(count=8, k=2),
)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def cusp_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cusp")
    return run_experiment(SMALL_CUSP, out)


def test_cusp_schema(cusp_run):
    r = rows(cusp_run.csv_path)
    assert tuple(r[0]) == CUSP_COLUMNS
    assert len(r) == 1 + 4 + 1
    assert r[-1][0] == "fit" and r[-1][6] == "2"
    for row in r[1:-1]:
        assert all(cell for cell in row)
        assert all(cell == "%.17g" % float(cell) for cell in row if cell != "2")
    svg = cusp_run.svg_path.read_text()
    assert svg.lstrip().startswith("<?xml") and "xlink:href=\"http" not in svg and "<image" not in svg
    assert "fitted_slope" in cusp_run.summary_path.read_text()


def test_rerun_is_byte_identical_with_cache_hits(cusp_run):
    before = {p.name: p.read_bytes() for p in (cusp_run.csv_path, cusp_run.svg_path, cusp_run.summary_path)}
    again = run_experiment(SMALL_CUSP, cusp_run.out_dir)
    assert again.cache_hits == 5
    after = {p.name: p.read_bytes() for p in (again.csv_path, again.svg_path, again.summary_path)}
    assert before == after


def test_reference_too_close_rejected(tmp_path):
    cfg = replace(SMALL_CUSP, geometry=replace(SMALL_CUSP.geometry, eps_ref=0.01))
    path = tmp_path / "c.toml"
    path.write_text(dumps(cfg))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2


def test_square_sanity_via_cli(tmp_path, capsys):
    cfg = RunConfig(experiment="square_sanity", discretization=DiscretizationConfig(h=1 / 64, quad_order=3))
    path = tmp_path / "s.toml"
    path.write_text(dumps(cfg))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 0
    r = rows(tmp_path / "o" / "report.csv")
    assert r[0] == ["n", "lambda", "analytic", "rel_error"]
    assert r[1][0] == "1" and abs(float(r[1][3])) < 0.01
    assert "square_sanity" in capsys.readouterr().out


def test_partial_csv_kept_on_failure(tmp_path, monkeypatch):
    import cusp_spectra.experiments as ex

    calls = {"n": 0}
    real = ex.schatten_distance

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 3:
            raise ex.ConfigError("injected failure")
        return real(*a, **k)

    monkeypatch.setattr(ex, "schatten_distance", flaky)
    path = tmp_path / "c.toml"
    path.write_text(dumps(SMALL_CUSP))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    r = rows(tmp_path / "o" / "report.csv")
    assert tuple(r[0]) == CUSP_COLUMNS and len(r) == 3


def test_seed_override_and_determinism(tmp_path):
    cfg = RunConfig(experiment="projector_ensemble", ensemble=EnsembleConfig(samples=300, max_dim=8))
    path = tmp_path / "p.toml"
    path.write_text(dumps(cfg))
    blobs = []
    for name, seed in (("a", "5"), ("b", "5"), ("c", "6")):
        assert main(["run", str(path), "--seed", seed, "--out", str(tmp_path / name)]) == 0
        blobs.append((tmp_path / name / "report.csv").read_bytes())
    assert blobs[0] == blobs[1] and blobs[0] != blobs[2]
    assert main(["run", str(path), "--seed", str(2 ** 64 - 1), "--out", str(tmp_path / "d")]) == 0


def test_bad_arguments(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "x.toml", "--seed", "-3"])
    with pytest.raises(SystemExit):
        main(["run", "x.toml", "--workers", "0"])
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_workers_do_not_change_output(tmp_path, cusp_run):
    cfg = replace(SMALL_CUSP, run=replace(SMALL_CUSP.run, workers=2, cache=False))
    res = run_experiment(cfg, tmp_path)
    assert res.csv_path.read_bytes() == cusp_run.csv_path.read_bytes()
