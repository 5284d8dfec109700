"""Model-fit diagnostics: small-eigenvalue Z-scores and likelihood comparisons."""
import dataclasses
import typing as t

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.stats

import bfsa.bfsa_core as bfsa_core
import bfsa.frames as frames


@dataclasses.dataclass(frozen=True, eq=False)
class ZscoreReport:
    """Z_j = |q_j^T z| / sqrt(lambda_j) for the k smallest eigenpairs.

    Under the model the Z_j are independent half-normal draws; the QQ pairs
    compare their order statistics with half-normal quantiles.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    zscores: np.ndarray
    theoretical_quantiles: np.ndarray
    empirical_quantiles: np.ndarray
    ks_statistic: float
    ks_pvalue: float

    def to_frame(self) -> pd.DataFrame:
        return frames.ZscoreFrame(
            {
                "index": np.arange(len(self.eigenvalues)),
                "eigenvalue": self.eigenvalues,
                "zscore": self.zscores,
                "theoretical_quantile": self.theoretical_quantiles,
                "empirical_quantile": self.empirical_quantiles,
            }
        )


def spectral_zscores(K, z, k: int) -> ZscoreReport:
    """Z-scores of the data along the k eigenvectors with smallest eigenvalues.

    K is either a dense matrix or a BfsaMatrix, which is reconstructed densely.
    """
    matrix = K.dense() if isinstance(K, bfsa_core.BfsaMatrix) else np.asarray(K, dtype=float)
    z = np.asarray(z, dtype=float)
    n = matrix.shape[0]
    if z.shape != (n,):
        raise ValueError(f"Expected a data vector of length {n}, got shape {z.shape}.")
    if not 1 <= k <= n:
        raise ValueError(f"Need 1 <= k <= {n}, got k={k}.")

    eigenvalues, eigenvectors = scipy.linalg.eigh(
        (matrix + matrix.T) / 2.0, subset_by_index=[0, k - 1]
    )
    if eigenvalues[0] <= 0:
        raise ValueError(
            f"The covariance has a nonpositive eigenvalue {eigenvalues[0]:.3e} among the {k} smallest."
        )
    zscores = np.abs(eigenvectors.T @ z) / np.sqrt(eigenvalues)
    probabilities = (np.arange(1, k + 1) - 0.5) / k
    theoretical = scipy.stats.halfnorm.ppf(probabilities)
    statistic, pvalue = scipy.stats.kstest(zscores, "halfnorm")
    return ZscoreReport(
        eigenvalues,
        eigenvectors,
        zscores,
        theoretical,
        np.sort(zscores),
        float(statistic),
        float(pvalue),
    )


def ks_critical_value(k: int, alpha: float = 0.01) -> float:
    """Critical value of the one-sample Kolmogorov-Smirnov statistic for k samples."""
    return float(scipy.stats.kstwo.ppf(1.0 - alpha, k))


def likelihood_summary(
    entries: t.Mapping[str, float], baseline: t.Optional[str] = None
) -> pd.DataFrame:
    """Negative log-likelihoods and their differences to the baseline (default: the first entry)."""
    if not entries:
        raise ValueError("No likelihoods to summarize.")
    names = list(entries)
    baseline = names[0] if baseline is None else baseline
    if baseline not in entries:
        raise KeyError(f"Unknown baseline {baseline!r}.")
    values = [float(entries[name]) for name in names]
    return frames.LikelihoodFrame(
        {
            "model": names,
            "nll": values,
            "difference": [value - float(entries[baseline]) for value in values],
        }
    )


def fisher_correlation(fisher) -> np.ndarray:
    """Inverse Fisher matrix scaled to unit diagonal."""
    fisher = np.asarray(fisher, dtype=float)
    covariance = scipy.linalg.inv((fisher + fisher.T) / 2.0)
    scale = np.sqrt(np.diag(covariance))
    if not np.all(scale > 0):
        raise np.linalg.LinAlgError("The inverse Fisher matrix has a nonpositive diagonal.")
    correlation = covariance / np.outer(scale, scale)
    return (correlation + correlation.T) / 2.0
