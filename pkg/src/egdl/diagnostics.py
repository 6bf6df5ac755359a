"""Posterior summaries: HDI, effective sample size, split R-hat."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .errors import TooFewDraws

SUMMARY_COLUMNS = (
    "mean", "sd", "hdi_3%", "hdi_97%", "mcse_mean", "mcse_sd", "ess_bulk", "ess_tail", "r_hat",
)


def hdi(samples, mass: float = 0.94) -> tuple[float, float]:
    """Narrowest interval over the sorted samples that holds ``ceil(mass * N)`` points.

    Ties between equally narrow windows go to the leftmost one.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 10:
        raise TooFewDraws(f"hdi needs at least 10 samples, got {n}")
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    # guard against 0.94 * 100 = 94.00000000000001
    k = min(n, max(1, math.ceil(mass * n - 1e-9)))
    widths = x[k - 1:] - x[: n - k + 1]
    j = int(np.argmin(widths))
    return float(x[j]), float(x[j + k - 1])


def _split(chains: np.ndarray) -> np.ndarray:
    m, n = chains.shape
    half = n // 2
    return np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of a 1-D series via FFT."""
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / n


def ess(chains) -> float:
    """Multi-chain effective sample size with Geyer's initial positive sequence.

    ``chains`` has shape ``(n_chains, n_draws)``. The result is capped at the
    total number of draws.
    """
    c = np.asarray(chains, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    m, n = c.shape
    total = m * n
    if n < 4:
        raise TooFewDraws("ess needs at least 4 draws per chain")
    acov = np.array([_autocov(row) for row in c])
    chain_mean = c.mean(axis=1)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    b_over_n = chain_mean.var(ddof=1) if m > 1 else 0.0
    var_plus = w * (n - 1) / n + b_over_n
    if not var_plus > 0:
        return float(total)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first non-positive pair, made monotone
    tau_sum = 0.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau_sum += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * tau_sum
    tau = max(tau, 1.0 / math.log10(total))
    return float(min(total / tau, total))


def rank_normalize(chains: np.ndarray) -> np.ndarray:
    c = np.asarray(chains, dtype=float)
    r = rankdata(c, method="average").reshape(c.shape)
    return ndtri((r - 3 / 8) / (c.size + 1 / 4))


def split_rhat(chains) -> float:
    """Rank-normalized split-chain potential scale reduction factor."""
    c = np.asarray(chains, dtype=float)
    if np.ptp(c) == 0:
        return 1.0
    z = _split(rank_normalize(c))
    m, n = z.shape
    w = z.var(axis=1, ddof=1).mean()
    b = n * z.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w)) if w > 0 else 1.0


def ess_bulk(chains) -> float:
    c = np.asarray(chains, dtype=float)
    if np.ptp(c) == 0:
        return float(c.size)
    return ess(_split(rank_normalize(c)))


def ess_tail(chains, central: float = 0.90) -> float:
    """ESS of the indicator of falling outside the central ``central`` interval."""
    c = np.asarray(chains, dtype=float)
    lo, hi = np.quantile(c, [(1 - central) / 2, (1 + central) / 2])
    ind = ((c < lo) | (c > hi)).astype(float)
    if np.ptp(ind) == 0:
        return float(c.size)
    return ess(_split(ind))


@dataclass(frozen=True)
class PosteriorSummary:
    names: tuple[str, ...]
    table: np.ndarray  # (n_params, 9) in SUMMARY_COLUMNS order

    def row(self, name: str) -> dict:
        k = self.names.index(name)
        return dict(zip(SUMMARY_COLUMNS, (float(v) for v in self.table[k])))

    def __getitem__(self, name: str) -> dict:
        return self.row(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter", *SUMMARY_COLUMNS])
        for name, vals in zip(self.names, self.table):
            w.writerow([name, *(f"{v:.6g}" for v in vals)])
        return buf.getvalue()


def summarize_draws(draws, names, hdi_mass: float = 0.94) -> PosteriorSummary:
    """``draws`` has shape ``(n_chains, n_draws, n_params)``."""
    d = np.asarray(draws, dtype=float)
    if d.ndim != 3:
        raise ValueError("draws must be (chains, draws, params)")
    m, n, p = d.shape
    if m < 2:
        raise TooFewDraws("summary needs at least 2 chains")
    if n < 100:
        raise TooFewDraws(f"summary needs at least 100 draws per chain, got {n}")
    rows = []
    for k in range(p):
        c = d[:, :, k]
        flat = c.ravel()
        mean = flat.mean()
        sd = flat.std(ddof=1)
        lo, hi = hdi(flat, hdi_mass)
        eb = ess_bulk(c)
        et = ess_tail(c)
        rows.append([mean, sd, lo, hi, sd / math.sqrt(eb), sd / math.sqrt(2 * eb), eb, et,
                     split_rhat(c)])
    return PosteriorSummary(tuple(names), np.array(rows))
