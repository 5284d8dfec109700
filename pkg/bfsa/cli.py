"""Command-line workflow: local fits, global fit, prediction, simulation, diagnostics and benchmarks."""
import argparse
import dataclasses
import json
import logging
import os
import sys
import typing as t

import boltons.fileutils
import numpy as np
import pandas as pd

import bfsa.bench as bench
import bfsa.bfsa_core as bfsa_core
import bfsa.config as config
import bfsa.diagnostics as diagnostics
import bfsa.frames as frames
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.likelihood as likelihood
import bfsa.optimizer as optimizer
import bfsa.predict as predict
import bfsa.synthetic as synthetic

RESOLVED_CONFIG_NAME = "resolved_config.json"
PARAMS_NAME = "params.json"


def write_json(path: str, data) -> None:
    with open(path, "w") as file:
        json.dump(data, file, indent=2)
    logging.info(f"Wrote {path}")


def write_csv(path: str, frame: pd.DataFrame, index: bool = False) -> None:
    frame.to_csv(path, index=index)
    logging.info(f"Wrote {path}")


def read_params(path: t.Optional[str]):
    if path is None:
        raise ValueError("A parameter file is required (--params).")
    with open(path) as file:
        return kernels.model_from_dict(json.load(file))


def _require_data(run_config: config.RunConfig) -> frames.Dataset:
    if run_config.paths.data is None:
        raise ValueError("A data file is required (--data).")
    return frames.Dataset.from_csv(run_config.paths.data)


def _initial_range(points: np.ndarray, num_regions: int) -> float:
    extent = points.max(axis=0) - points.min(axis=0)
    return float(max(extent.max(), 1e-8)) / (2.0 * np.sqrt(num_regions))


def _local_fits(run_config: config.RunConfig, points, y) -> t.List[optimizer.LocalFit]:
    kernel = run_config.kernel
    blocks = geometry.kdtree_partition(points, kernel.num_centers)
    initial = kernel.initial_range or _initial_range(points, kernel.num_centers)
    return optimizer.fit_local(
        points, y, blocks, kernel.nu, kernel.nugget, initial, run_config.local_trust_region
    )


def _local_frame(fits: t.List[optimizer.LocalFit]) -> pd.DataFrame:
    rows = [
        {
            "block": fit.block,
            "centroid_x": fit.centroid[0],
            "centroid_y": fit.centroid[1],
            "log_l11": fit.theta[0],
            "l21": fit.theta[1],
            "log_l22": fit.theta[2],
            "sigma2": fit.sigma2,
            "nll": fit.nll,
            "fallback": fit.fallback,
        }
        for fit in fits
    ]
    return frames.LocalFitFrame(rows)


def _local_model(run_config: config.RunConfig, fits, sigma2: float):
    centers = np.array([fit.centroid for fit in fits])
    width = run_config.kernel.width or kernels.default_width(centers)
    model = kernels.NonstationaryModel(
        centers=centers,
        width=width,
        nu=run_config.kernel.nu,
        sigma2=sigma2,
        nugget=run_config.kernel.nugget,
    )
    return model, np.concatenate([fit.theta for fit in fits])


def _basis_regions(model) -> t.Optional[int]:
    """Number of basis regions of a nonstationary model, when they can serve as k-d blocks."""
    if not isinstance(model, kernels.NonstationaryModel):
        return None
    count = len(model.centers)
    return count if count & (count - 1) == 0 else None


def plan_for(run_config: config.RunConfig, points, model) -> geometry.PartitionPlan:
    """The fit's partition; a nonstationary model's blocks are its basis regions."""
    num_blocks = run_config.blocks_for(len(points), _basis_regions(model))
    return geometry.build_plan(points, num_blocks, run_config.num_landmarks)


def fit_local_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    training = _require_data(run_config).training()
    fits = _local_fits(run_config, training.coordinates(), training.observations())
    frame = _local_frame(fits)
    write_csv(os.path.join(output_dir, "local_fits.csv"), frame)
    write_json(os.path.join(output_dir, "local_fits.json"), json.loads(frame.to_json(orient="records")))
    return 0


def fit_global_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    training = _require_data(run_config).training()
    points, y = training.coordinates(), training.observations()
    kernel = run_config.kernel
    sigma2 = kernel.sigma2 or float(np.mean(y ** 2))

    if run_config.paths.params is not None:
        model, theta0 = read_params(run_config.paths.params)
    elif kernel.variant == kernels.STATIONARY:
        model = kernels.StationaryModel(nu=kernel.nu, nugget=kernel.nugget)
        theta0 = np.array([sigma2, kernel.initial_range or _initial_range(points, 1)])
    else:
        fits = _local_fits(run_config, points, y)
        write_csv(os.path.join(output_dir, "local_fits.csv"), _local_frame(fits))
        model, theta0 = _local_model(run_config, fits, sigma2)

    plan = plan_for(run_config, points, model)
    report = optimizer.fit(model, theta0, points, y, plan, run_config.trust_region, run_config.free)

    fitted_sigma2 = report.sigma2_hat if isinstance(model, kernels.NonstationaryModel) else None
    write_json(
        os.path.join(output_dir, PARAMS_NAME),
        kernels.model_to_dict(model, report.theta_hat, fitted_sigma2),
    )
    summary = report.to_dict()
    summary["theta_initial"] = [float(v) for v in theta0]
    write_json(os.path.join(output_dir, "fit_report.json"), summary)

    names = [report.parameter_names[j] for j in report.free]
    write_csv(
        os.path.join(output_dir, "fisher.csv"),
        pd.DataFrame(report.fisher_at_mle, index=names, columns=names),
        index=True,
    )
    try:
        correlation = diagnostics.fisher_correlation(report.fisher_at_mle)
        write_csv(
            os.path.join(output_dir, "fisher_correlation.csv"),
            pd.DataFrame(correlation, index=names, columns=names),
            index=True,
        )
    except np.linalg.LinAlgError as error:
        logging.warning(f"Skipping the Fisher correlation matrix: {error}")
    return 0


def _targets(run_config: config.RunConfig, dataset: frames.Dataset):
    """Target coordinates, plus held-out values when the targets are the holdout rows."""
    if run_config.paths.targets is not None:
        return frames.read_targets(run_config.paths.targets), None
    holdout = dataset.holdout()
    targets = holdout[[frames.Dataset.X_NAME, frames.Dataset.Y_NAME]].to_numpy(dtype=float)
    return targets.reshape(-1, 2), holdout[frames.Dataset.VALUE_NAME].to_numpy(dtype=float)


def _conditioning(run_config: config.RunConfig, dataset: frames.Dataset):
    model, theta = read_params(run_config.paths.params)
    training = dataset.training()
    points, y = training.coordinates(), training.observations()
    spec = model.spec(theta)
    K = bfsa_core.assemble(spec, points, plan_for(run_config, points, model))
    return spec, points, y, K


def predict_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    dataset = _require_data(run_config)
    targets, truth = _targets(run_config, dataset)
    spec, points, y, K = _conditioning(run_config, dataset)
    pplan = predict.build_prediction_plan(spec, points, K, targets)
    mean = predict.cond_mean(K, y, pplan)
    variance = predict.cond_cov(K, pplan).diagonal()
    frame = frames.PredictionFrame(
        {"x": targets[:, 0], "y": targets[:, 1], "mean": mean, "variance": variance}
    )
    write_csv(os.path.join(output_dir, "predictions.csv"), frame)
    if truth is not None and len(truth):
        mse = float(np.mean((mean - truth) ** 2))
        logging.info(f"Holdout mean squared error {mse:.6g} over {len(truth)} points")
        write_json(
            os.path.join(output_dir, "holdout_summary.json"), {"count": len(truth), "mse": mse}
        )
    return 0


def simulate_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    dataset = _require_data(run_config)
    spec, points, y, K = _conditioning(run_config, dataset)
    if run_config.conditional:
        targets, _ = _targets(run_config, dataset)
        pplan = predict.build_prediction_plan(spec, points, K, targets)
        draws = predict.cond_simulate(K, y, pplan, run_config.seed, run_config.num_samples)
    else:
        targets = points
        draws = predict.simulate_unconditional(K, run_config.seed, run_config.num_samples)
    write_csv(os.path.join(output_dir, "samples.csv"), frames.sample_frame(targets, draws))
    return 0


def _read_local_fits(path: str) -> pd.DataFrame:
    with open(path) as file:
        return frames.LocalFitFrame(json.load(file))


def diagnose_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    dataset = _require_data(run_config)
    spec, points, y, K = _conditioning(run_config, dataset)

    count = min(run_config.zscore_count, K.n)
    report = diagnostics.spectral_zscores(K, y, count)
    write_csv(os.path.join(output_dir, "zscores.csv"), report.to_frame())
    write_json(
        os.path.join(output_dir, "zscore_summary.json"),
        {
            "count": count,
            "ks_statistic": report.ks_statistic,
            "ks_pvalue": report.ks_pvalue,
            "ks_critical_value_1pct": diagnostics.ks_critical_value(count),
            "max_zscore": float(report.zscores.max()),
        },
    )

    entries = {}
    if args.local is not None:
        local = _read_local_fits(args.local)
        entries["local block model"] = float(local["nll"].sum())
        fits = [
            optimizer.LocalFit(
                int(row.block),
                np.array([row.centroid_x, row.centroid_y]),
                np.array([row.log_l11, row.l21, row.log_l22]),
                float(row.nll),
                float(row.sigma2),
                bool(row.fallback),
            )
            for row in local.itertuples()
        ]
        local_model, local_theta = _local_model(run_config, fits, spec.matern.sigma2)
        local_K = bfsa_core.assemble(local_model.spec(local_theta), points, K.plan)
        entries["two-level model, local parameters"] = likelihood.nll(local_K, y)
    entries["two-level model, fitted parameters"] = likelihood.nll(K, y)
    write_csv(
        os.path.join(output_dir, "likelihood_summary.csv"),
        diagnostics.likelihood_summary(entries),
    )

    reference = np.asarray(args.reference if args.reference else points.mean(axis=0))
    correlation = kernels.correlation_map(spec, reference, points)
    write_csv(
        os.path.join(output_dir, "correlation_map.csv"),
        frames.CorrelationMapFrame(
            {"x": points[:, 0], "y": points[:, 1], "correlation": correlation}
        ),
    )
    return 0


def bench_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    timings, slopes = bench.run_ladder(run_config.bench, run_config.kernel.nu)
    for row in slopes.itertuples():
        logging.info(f"{row.operation}: log-log slope {row.slope:.3f}")
    write_csv(os.path.join(output_dir, "bench.csv"), bench.combined_table(timings, slopes))
    return 0


def synthesize_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    field = synthetic.synthesize(run_config.synthetic)
    path = run_config.paths.data or os.path.join(output_dir, "synthetic.csv")
    field.dataset.to_csv_path(path)
    logging.info(f"Wrote {path}")
    write_json(os.path.join(output_dir, "truth.json"), field.truth())
    return 0


def schema_command(args, run_config: config.RunConfig, output_dir: str) -> int:
    print(json.dumps(config.schema(), indent=2))
    return 0


COMMANDS = {
    "fit-local": fit_local_command,
    "fit-global": fit_global_command,
    "predict": predict_command,
    "simulate": simulate_command,
    "diagnose": diagnose_command,
    "bench": bench_command,
    "synthesize": synthesize_command,
    "schema": schema_command,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bfsa", description="Block full-scale Gaussian process estimation."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", help="JSON run configuration.")
        sub.add_argument("--threads", type=int, help="Worker threads (default: BFSA_THREADS or 1).")
        sub.add_argument("--data", help="Observation CSV with x,y,value[,holdout].")
        sub.add_argument("--targets", help="Target CSV with x,y.")
        sub.add_argument("--params", help="Model parameters written by fit-global.")
        sub.add_argument("--output", help="Output directory.")
        sub.add_argument("--seed", type=int, help="Seed for randomized commands.")
        sub.add_argument("--samples", type=int, help="Number of simulated draws.")
        if name == "simulate":
            sub.add_argument("--unconditional", action="store_true")
        if name == "diagnose":
            sub.add_argument("--local", help="local_fits.json written by fit-local.")
            sub.add_argument("--reference", type=float, nargs=2, help="Correlation map reference point.")
    return parser


def apply_overrides(run_config: config.RunConfig, args) -> config.RunConfig:
    paths = run_config.paths
    path_overrides = {
        "data": args.data,
        "targets": args.targets,
        "params": args.params,
        "output_dir": args.output,
    }
    paths = dataclasses.replace(
        paths, **{key: value for key, value in path_overrides.items() if value is not None}
    )
    overrides = {"paths": paths}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["num_samples"] = args.samples
    if getattr(args, "unconditional", False):
        overrides["conditional"] = False
    return dataclasses.replace(run_config, **overrides)


def main(argv: t.Optional[t.List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_config = apply_overrides(config.load_config(args.config), args)
        if args.command == "schema":
            return schema_command(args, run_config, "")
        config.resolve_threads(args.threads)
        output_dir = run_config.paths.output_dir
        boltons.fileutils.mkdir_p(output_dir)
        write_json(os.path.join(output_dir, RESOLVED_CONFIG_NAME), config.to_dict(run_config))
        return COMMANDS[args.command](args, run_config, output_dir)
    except (ValueError, np.linalg.LinAlgError, OSError, KeyError) as error:
        logging.error(f"{args.command} failed: {error}")
        print(json.dumps({"error": type(error).__name__, "message": str(error)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
