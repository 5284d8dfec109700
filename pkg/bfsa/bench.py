"""Timing ladder for the linear-scaling check."""
import logging
import time
import typing as t

import numpy as np
import pandas as pd
import tqdm

import bfsa.bfsa_core as bfsa_core
import bfsa.config as config
import bfsa.derivatives as derivatives
import bfsa.frames as frames
import bfsa.geometry as geometry
import bfsa.kernels as kernels
import bfsa.likelihood as likelihood
import bfsa.predict as predict

OPERATIONS = ["assemble", "nll", "sym_factorize", "gradient", "fisher_entry", "predict"]
BENCH_THETA = (1.0, 0.1)
BENCH_NUGGET = 1e-4


def time_call(func: t.Callable[[], t.Any], repeats: int) -> float:
    """Median wall time of func over repeats calls, after one warm-up call."""
    func()
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        func()
        timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def time_size(n: int, settings: config.BenchConfig, nu: float = 1.0) -> t.Dict[str, float]:
    """Seconds per operation for one problem size."""
    rng = np.random.default_rng(settings.seed + n)
    points = rng.uniform(size=(n, 2))
    y = rng.standard_normal(n)
    targets = rng.uniform(size=(settings.num_targets, 2))
    spec = kernels.StationaryModel(nu=nu, nugget=BENCH_NUGGET).spec(BENCH_THETA)
    plan = geometry.build_plan(
        points, geometry.blocks_for_size(n, settings.block_size), settings.num_landmarks
    )
    K = bfsa_core.assemble(spec, points, plan)
    first = derivatives.d_assemble(spec, points, plan, K, 0)
    second = derivatives.d_assemble(spec, points, plan, K, 1)
    solved_first = bfsa_core.solve_structured(K, first)
    solved_second = bfsa_core.solve_structured(K, second)

    def gradient_component():
        deriv = derivatives.d_assemble(spec, points, plan, K, 1)
        return likelihood.grad_exact(K, [deriv], y)

    def prediction():
        pplan = predict.build_prediction_plan(spec, points, K, targets)
        return predict.cond_mean(K, y, pplan), predict.cond_cov(K, pplan).diagonal()

    calls = {
        "assemble": lambda: bfsa_core.assemble(spec, points, plan),
        "nll": lambda: likelihood.nll(K, y),
        "sym_factorize": lambda: bfsa_core.sym_factorize(K),
        "gradient": gradient_component,
        "fisher_entry": lambda: bfsa_core.trace_product(solved_first, solved_second),
        "predict": prediction,
    }
    return {name: time_call(calls[name], settings.repeats) for name in OPERATIONS}


def fit_slopes(timings: pd.DataFrame) -> pd.DataFrame:
    """Least-squares slope of log(seconds) against log(n) per operation."""
    rows = []
    for operation in OPERATIONS:
        subset = timings[timings["operation"] == operation]
        if len(subset) < 2:
            continue
        slope = np.polyfit(np.log(subset["n"]), np.log(subset["seconds"]), 1)[0]
        rows.append({"operation": operation, "slope": float(slope)})
    return frames.SlopeFrame(rows)


def run_ladder(settings: config.BenchConfig, nu: float = 1.0) -> t.Tuple[pd.DataFrame, pd.DataFrame]:
    rows = []
    for n in tqdm.tqdm(settings.ladder, desc="Benchmarking sizes"):
        seconds = time_size(n, settings, nu)
        rows += [{"operation": name, "n": n, "seconds": seconds[name]} for name in OPERATIONS]
        logging.info(f"n={n}: " + ", ".join(f"{k}={v:.4f}s" for k, v in seconds.items()))
    timings = frames.BenchmarkFrame(rows)
    return timings, fit_slopes(timings)


def combined_table(timings: pd.DataFrame, slopes: pd.DataFrame) -> pd.DataFrame:
    """Timing rows followed by one slope row per operation."""
    return pd.concat([timings, slopes], ignore_index=True, sort=False)
