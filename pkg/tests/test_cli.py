import dataclasses
import json

import numpy as np
import pandas as pd
import pytest

import bfsa.cli as cli
import bfsa.config as config
import bfsa.frames as frames
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.parallel as parallel

SMALL_CONFIG = {
    "kernel": {"variant": "matern", "nugget": 1e-4, "num_centers": 2},
    "block_size": 32,
    "num_landmarks": 8,
    "trust_region": {"curvature_mode": "fisher-exact", "max_iters": 5},
    "local_trust_region": {"curvature_mode": "fisher-exact", "max_iters": 3},
    "zscore_count": 40,
    "synthetic": {
        "n": 150,
        "variant": "matern",
        "num_blocks": 4,
        "num_landmarks": 8,
        "holdout": [0.0, 0.0, 0.3, 0.3],
        "seed": 11,
    },
}


@pytest.fixture(autouse=True)
def reset_threads():
    yield
    parallel.set_thread_count(None)


@pytest.fixture
def workspace(tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(SMALL_CONFIG))
    output = tmp_path / "out"
    data = tmp_path / "data.csv"
    assert cli.main(["synthesize", "--config", str(config_path), "--data", str(data), "--output", str(output)]) == 0
    return config_path, data, output


def _run(command, workspace, *extra):
    config_path, data, output = workspace
    return cli.main([command, "--config", str(config_path), "--data", str(data), "--output", str(output), *extra])


@pytest.fixture
def fitted(workspace):
    assert _run("fit-global", workspace) == 0
    return str(workspace[2] / cli.PARAMS_NAME)


def test_synthesize_writes_data_and_truth(workspace):
    _, data, output = workspace

    dataset = frames.Dataset.from_csv(data)

    assert len(dataset) == 150
    assert dataset.holdout_mask().any()
    model, theta = kernels.model_from_dict(json.loads((output / "truth.json").read_text()))
    assert isinstance(model, kernels.StationaryModel)
    assert (output / cli.RESOLVED_CONFIG_NAME).exists()


def test_fit_global_writes_parameters_and_report(workspace, fitted):
    output = workspace[2]

    model, theta = kernels.model_from_dict(json.loads(open(fitted).read()))
    report = json.loads((output / "fit_report.json").read_text())

    assert isinstance(model, kernels.StationaryModel)
    assert model.nugget == 1e-4
    assert len(theta) == 2
    assert report["iterations"] <= 5
    assert np.all(np.diff(report["nll_trace"]) <= 1e-9)
    assert pd.read_csv(output / "fisher.csv", index_col=0).shape == (2, 2)


def test_predict_at_target_file(workspace, fitted, tmp_path):
    targets = tmp_path / "targets.csv"
    targets.write_text("x,y\n0.5,0.5\n0.1,0.9\n0.75,0.25\n")

    assert _run("predict", workspace, "--params", fitted, "--targets", str(targets)) == 0

    sut = pd.read_csv(workspace[2] / "predictions.csv")
    assert list(sut.columns) == ["x", "y", "mean", "variance"]
    assert len(sut) == 3
    assert (sut["variance"] >= 0).all()


def test_predict_with_empty_targets(workspace, fitted, tmp_path):
    targets = tmp_path / "targets.csv"
    targets.write_text("x,y\n")

    assert _run("predict", workspace, "--params", fitted, "--targets", str(targets)) == 0

    assert len(pd.read_csv(workspace[2] / "predictions.csv")) == 0


def test_predict_holdout_rows(workspace, fitted):
    _, data, output = workspace

    assert _run("predict", workspace, "--params", fitted) == 0

    summary = json.loads((output / "holdout_summary.json").read_text())
    assert summary["count"] == int(frames.Dataset.from_csv(data).holdout_mask().sum())
    assert summary["mse"] >= 0.0
    assert len(pd.read_csv(output / "predictions.csv")) == summary["count"]


def test_conditional_and_unconditional_simulation(workspace, fitted):
    _, data, output = workspace
    dataset = frames.Dataset.from_csv(data)

    assert _run("simulate", workspace, "--params", fitted, "--samples", "3", "--seed", "2") == 0
    conditional = pd.read_csv(output / "samples.csv")
    assert _run("simulate", workspace, "--params", fitted, "--samples", "2", "--unconditional") == 0
    unconditional = pd.read_csv(output / "samples.csv")

    assert list(conditional.columns) == ["x", "y", "sample_0", "sample_1", "sample_2"]
    assert len(conditional) == int(dataset.holdout_mask().sum())
    assert len(unconditional) == len(dataset.training())
    assert list(unconditional.columns)[-1] == "sample_1"


def test_diagnose(workspace, fitted):
    output = workspace[2]

    assert _run("diagnose", workspace, "--params", fitted, "--reference", "0.5", "0.5") == 0

    assert len(pd.read_csv(output / "zscores.csv")) == 40
    summary = json.loads((output / "zscore_summary.json").read_text())
    assert 0.0 <= summary["ks_statistic"] <= 1.0
    likelihoods = pd.read_csv(output / "likelihood_summary.csv")
    assert list(likelihoods["model"]) == ["two-level model, fitted parameters"]
    correlation = pd.read_csv(output / "correlation_map.csv")
    assert correlation["correlation"].max() <= 1.0 + 1e-12


def test_local_fits_feed_the_diagnostics(workspace, fitted):
    output = workspace[2]

    assert _run("fit-local", workspace) == 0
    local = pd.read_csv(output / "local_fits.csv")
    assert list(local["block"]) == [0, 1]

    assert _run("diagnose", workspace, "--params", fitted, "--local", str(output / "local_fits.json")) == 0

    likelihoods = pd.read_csv(output / "likelihood_summary.csv")
    assert list(likelihoods["model"]) == [
        "local block model",
        "two-level model, local parameters",
        "two-level model, fitted parameters",
    ]


def test_missing_data_reports_a_json_error(tmp_path, capsys):
    sut = cli.main(["fit-global", "--output", str(tmp_path / "out")])

    assert sut == 1
    error = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert error["error"] == "ValueError"
    assert "--data" in error["message"]


def test_unknown_config_keys_are_rejected(tmp_path, capsys):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"blocksize": 3}))

    assert cli.main(["bench", "--config", str(config_path), "--output", str(tmp_path)]) == 1
    assert "blocksize" in capsys.readouterr().out


def test_schema(capsys):
    assert cli.main(["schema"]) == 0

    sut = json.loads(capsys.readouterr().out)
    assert "trust_region" in sut["properties"]


NONSTATIONARY_CONFIG = dict(
    SMALL_CONFIG,
    kernel={"variant": "paciorek-schervish", "nugget": 1e-4, "num_centers": 2},
    trust_region={"curvature_mode": "fisher-exact", "max_iters": 3},
    synthetic=dict(SMALL_CONFIG["synthetic"], variant="paciorek-schervish", num_centers=2),
)


@pytest.fixture
def nonstationary_workspace(tmp_path):
    config_path = tmp_path / "nonstationary.json"
    config_path.write_text(json.dumps(NONSTATIONARY_CONFIG))
    output = tmp_path / "nonstationary"
    data = tmp_path / "nonstationary.csv"
    assert cli.main(["synthesize", "--config", str(config_path), "--data", str(data), "--output", str(output)]) == 0
    return config_path, data, output


def test_nonstationary_fit_starts_from_the_local_fits(nonstationary_workspace):
    output = nonstationary_workspace[2]

    assert _run("fit-global", nonstationary_workspace) == 0

    model, theta = kernels.model_from_dict(json.loads((output / cli.PARAMS_NAME).read_text()))
    local = pd.read_csv(output / "local_fits.csv")
    report = json.loads((output / "fit_report.json").read_text())
    assert isinstance(model, kernels.NonstationaryModel)
    assert len(theta) == 6
    np.testing.assert_allclose(model.centers, local[["centroid_x", "centroid_y"]].to_numpy())
    expected_start = local[["log_l11", "l21", "log_l22"]].to_numpy().ravel()
    np.testing.assert_allclose(report["theta_initial"], expected_start)
    assert report["nll_hat"] <= report["nll_trace"][0]


def test_nonstationary_plan_blocks_are_the_local_fit_regions(nonstationary_workspace):
    config_path, data, output = nonstationary_workspace
    assert _run("fit-global", nonstationary_workspace) == 0
    run_config = config.load_config(str(config_path))
    points = frames.Dataset.from_csv(data).training().coordinates()
    model, _ = kernels.model_from_dict(json.loads((output / cli.PARAMS_NAME).read_text()))

    sut = cli.plan_for(run_config, points, model)

    regions = geometry.kdtree_partition(points, 2)
    assert len(sut.blocks) == 2
    for block, region in zip(sut.blocks, regions):
        np.testing.assert_array_equal(block, region)
    np.testing.assert_allclose(geometry.block_centroids(points, sut.blocks), model.centers)


def test_explicit_block_count_overrides_the_regions(nonstationary_workspace):
    config_path, data, _ = nonstationary_workspace
    run_config = dataclasses.replace(config.load_config(str(config_path)), num_blocks=4)
    points = frames.Dataset.from_csv(data).training().coordinates()
    model = kernels.NonstationaryModel(centers=np.zeros((2, 2)), width=1.0)

    assert len(cli.plan_for(run_config, points, model).blocks) == 4
    assert len(cli.plan_for(config.load_config(str(config_path)), points, kernels.StationaryModel()).blocks) == 4


def test_thread_count_does_not_change_the_fit(nonstationary_workspace, tmp_path):
    config_path, data, _ = nonstationary_workspace
    reports = []
    for threads in ("1", "4"):
        output = tmp_path / f"threads_{threads}"
        args = ["fit-global", "--config", str(config_path), "--data", str(data), "--output", str(output)]
        assert cli.main(args + ["--threads", threads]) == 0
        reports.append(json.loads((output / "fit_report.json").read_text()))

    assert reports[0]["theta_hat"] == reports[1]["theta_hat"]
    assert reports[0]["nll_trace"] == reports[1]["nll_trace"]
