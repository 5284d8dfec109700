"""Tabular inputs and outputs, as pandas frames with named columns."""
import functools
import typing as t

import numpy as np
import pandas as pd


def frame_type(columns: t.Sequence[str]) -> functools.partial:
    """A DataFrame constructor with a fixed column order."""
    return functools.partial(pd.DataFrame, columns=list(columns))


class Dataset(pd.DataFrame):
    """Observations with columns x, y, value and an optional 0/1 holdout flag.

    Row order is the index order used by every plan and matrix built from it.
    """

    X_NAME = "x"
    Y_NAME = "y"
    VALUE_NAME = "value"
    HOLDOUT_NAME = "holdout"

    def __init__(self, *args, **kwargs):
        pd.DataFrame.__init__(self, *args, **kwargs)
        missing = [c for c in (self.X_NAME, self.Y_NAME, self.VALUE_NAME) if c not in self.columns]
        if missing:
            raise ValueError(f"Dataset is missing columns {missing}.")
        if len(self) == 0:
            raise ValueError("Dataset has no rows.")
        if self.HOLDOUT_NAME not in self.columns:
            self[self.HOLDOUT_NAME] = 0
        if not np.all(np.isfinite(self.coordinates())):
            raise ValueError("Dataset coordinates must be finite.")
        if not np.all(np.isfinite(self[self.VALUE_NAME].to_numpy(dtype=float))):
            raise ValueError("Dataset values must be finite.")
        if not self[self.HOLDOUT_NAME].isin([0, 1]).all():
            raise ValueError("The holdout column may only contain 0 and 1.")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        return cls(pd.read_csv(path))

    @classmethod
    def from_arrays(cls, points, values, holdout=None) -> "Dataset":
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        columns = {
            cls.X_NAME: points[:, 0],
            cls.Y_NAME: points[:, 1],
            cls.VALUE_NAME: np.asarray(values, dtype=float),
        }
        if holdout is not None:
            columns[cls.HOLDOUT_NAME] = np.asarray(holdout, dtype=int)
        return cls(pd.DataFrame(columns))

    def coordinates(self) -> np.ndarray:
        return self[[self.X_NAME, self.Y_NAME]].to_numpy(dtype=float)

    def observations(self) -> np.ndarray:
        return self[self.VALUE_NAME].to_numpy(dtype=float)

    def holdout_mask(self) -> np.ndarray:
        return self[self.HOLDOUT_NAME].to_numpy(dtype=int) == 1

    def training(self) -> "Dataset":
        return Dataset(pd.DataFrame(self.loc[~self.holdout_mask()]).reset_index(drop=True))

    def holdout(self) -> pd.DataFrame:
        return pd.DataFrame(self.loc[self.holdout_mask()]).reset_index(drop=True)

    def to_csv_path(self, path):
        pd.DataFrame(self).to_csv(path, index=False)


def read_targets(path) -> np.ndarray:
    """Target coordinates from a CSV with x and y columns; may be empty."""
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return np.zeros((0, 2))
    missing = [c for c in (Dataset.X_NAME, Dataset.Y_NAME) if c not in frame.columns]
    if missing:
        raise ValueError(f"Target file is missing columns {missing}.")
    targets = frame[[Dataset.X_NAME, Dataset.Y_NAME]].to_numpy(dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(targets)):
        raise ValueError("Target coordinates must be finite.")
    return targets


LocalFitFrame = frame_type(
    ["block", "centroid_x", "centroid_y", "log_l11", "l21", "log_l22", "sigma2", "nll", "fallback"]
)
PredictionFrame = frame_type(["x", "y", "mean", "variance"])
ZscoreFrame = frame_type(
    ["index", "eigenvalue", "zscore", "theoretical_quantile", "empirical_quantile"]
)
BenchmarkFrame = frame_type(["operation", "n", "seconds"])
SlopeFrame = frame_type(["operation", "slope"])
LikelihoodFrame = frame_type(["model", "nll", "difference"])
CorrelationMapFrame = frame_type(["x", "y", "correlation"])


def sample_frame(targets: np.ndarray, draws: np.ndarray) -> pd.DataFrame:
    """One row per location, one sample_<i> column per draw."""
    columns = {Dataset.X_NAME: targets[:, 0], Dataset.Y_NAME: targets[:, 1]}
    for index, draw in enumerate(draws):
        columns[f"sample_{index}"] = draw
    return pd.DataFrame(columns)
