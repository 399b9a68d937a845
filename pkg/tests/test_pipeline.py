import json

import numpy as np
import pytest

from occpred.errors import InputError, StageError
from occpred.pipeline import RunConfig, read_scores_csv, run_pipeline, write_scores_csv
from occpred.synthgen import BandSpec, ChannelSpec, mixed_band_spec, save_band_spec


@pytest.fixture
def markov_spec(tmp_path):
    chans = [ChannelSpec("markov", p01=p, p10=p) for p in (0.05, 0.1, 0.2, 0.3)] + [ChannelSpec("static", state=1)]
    path = tmp_path / "band.json"
    save_band_spec(BandSpec(chans, 1200, seed=3), path)
    return path


def test_markov_smoke(markov_spec, tmp_path):
    rep = run_pipeline(RunConfig(spec=str(markov_spec), method="markov", out=str(tmp_path / "o")))
    for key in ("0.01", "0.05"):
        assert rep.pd_at[key]["pfa"] <= float(key)
    assert 0.5 < rep.average_accuracy <= 1 and 0.5 < rep.balanced_accuracy <= 1
    out = tmp_path / "o"
    expected = {
        "config.json", "grid.csv", "dataset_summary.json", "model.json", "scores.csv",
        "report.json", "per_bin_accuracy.csv", "accuracy_vs_rate.csv", "strip.csv", "run_status.json",
    }
    assert expected <= {p.name for p in out.iterdir()}
    assert json.loads((out / "run_status.json").read_text()) == {"status": "ok"}
    report = json.loads((out / "report.json").read_text())
    assert report["provenance"]["config"]["spec"] == str(markov_spec)
    assert report["provenance"]["seed"] == 0


def test_embedded_config_reproduces_report(markov_spec, tmp_path):
    run_pipeline(RunConfig(spec=str(markov_spec), method="rf", params={"n_trees": 3}, out=str(tmp_path / "a")))
    embedded = json.loads((tmp_path / "a" / "report.json").read_text())["provenance"]["config"]
    embedded["out"] = str(tmp_path / "b")
    run_pipeline(RunConfig.from_dict(embedded))
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    a["provenance"].pop("config"), b["provenance"].pop("config")
    assert a == b
    assert (tmp_path / "a" / "scores.csv").read_bytes() == (tmp_path / "b" / "scores.csv").read_bytes()


def test_thread_count_does_not_change_outputs(markov_spec, tmp_path):
    cfg = dict(spec=str(markov_spec), method="gbt", params={"n_rounds": 5})
    run_pipeline(RunConfig(**cfg, out=str(tmp_path / "x")), n_jobs=1)
    run_pipeline(RunConfig(**cfg, out=str(tmp_path / "x2")), n_jobs=4)
    for name in ("scores.csv", "model.json"):
        a = (tmp_path / "x" / name).read_text().replace(str(tmp_path / "x"), "")
        b = (tmp_path / "x2" / name).read_text().replace(str(tmp_path / "x2"), "")
        assert a == b, name


def test_oversized_k_names_windows_stage(markov_spec, tmp_path):
    out = tmp_path / "bad"
    with pytest.raises(StageError) as exc:
        run_pipeline(RunConfig(spec=str(markov_spec), method="rf", K=5000, out=str(out)))
    assert exc.value.stage == "windows"
    assert "K=5000" in str(exc.value.cause)
    status = json.loads((out / "run_status.json").read_text())
    assert status["status"] == "failed" and status["stage"] == "windows"


@pytest.mark.parametrize(
    "kw",
    [
        {},
        {"spec": "x.json", "grid": "y.csv"},
        {"spec": "missing.json"},
        {"method": "svm"},
        {"pfa": [0.0]},
        {"params": {"n_trees": 3}, "method": "gbt"},
    ],
)
def test_config_validated_before_work(kw, markov_spec, tmp_path):
    kw = {"spec": str(markov_spec), **kw} if "spec" not in kw and kw else kw
    cfg = RunConfig(**kw, out=str(tmp_path / "v"))
    with pytest.raises(StageError) as exc:
        run_pipeline(cfg)
    assert exc.value.stage == "config" and isinstance(exc.value.cause, InputError)


def test_sweep_input(tmp_path):
    from occpred.occupancy import write_sweep_csv
    from occpred.synthgen import gen_band, gen_sweep

    band = mixed_band_spec(T=400, n_static=1, n_markov=2, n_periodic=1, n_lagged=1, seed=2)
    write_sweep_csv(gen_sweep(band), tmp_path / "s.csv")
    cfg = RunConfig(sweep=str(tmp_path / "s.csv"), threshold_dbm=band.midpoint_threshold, method="markov",
                    out=str(tmp_path / "o"))
    run_pipeline(cfg)
    from occpred.occupancy import read_grid_csv

    assert read_grid_csv(tmp_path / "o" / "grid.csv") == gen_band(band)


def test_default_out_root_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv("OCCPRED_OUT", str(tmp_path / "root"))
    assert RunConfig(method="gbt").out == str(tmp_path / "root" / "gbt")


def test_scores_csv_round_trip_is_exact(tmp_path):
    r = np.random.default_rng(0)
    s = r.random((5, 3))
    write_scores_csv(np.arange(10, 15), s, tmp_path / "s.csv")
    m, back = read_scores_csv(tmp_path / "s.csv")
    assert m.tolist() == list(range(10, 15))
    assert back.tobytes() == s.tobytes()
