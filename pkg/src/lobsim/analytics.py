"""Estimators for the stylized facts of simulated order flow.

Every function takes plain 1-D arrays (returns, |returns|, traded volume,
spread, imbalance) and returns numbers or small result objects; nothing here
depends on how the series were produced.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Callable, Iterable, Optional, Sequence

import numpy as np

from .engine import DepthProfile

DEFAULT_BLOCK = 256
DEFAULT_RESAMPLES = 200
MIN_WINDOW_SIZES = 10


def _as_series(x, name: str = "series") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _centered(x, name: str = "series") -> np.ndarray:
    arr = _as_series(x, name)
    if arr.size < 2:
        raise ValueError(f"{name} needs at least two samples")
    dev = arr - arr.mean()
    if not np.any(dev):
        raise ValueError(f"{name} has zero variance")
    return dev


def noise_band(n: int) -> float:
    """Half-width of the +-3/sqrt(n) band used to call an ACF value significant."""
    return 3.0 / math.sqrt(n)


# ---- moments and correlations ----------------------------------------------

def kurtosis(x) -> float:
    """Non-excess kurtosis ``m4 / m2**2`` (3 for a Gaussian)."""
    dev = _centered(x)
    m2 = np.mean(dev**2)
    return float(np.mean(dev**4) / m2**2)


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Biased sample ACF of the mean-removed series for lags ``0..max_lag``."""
    dev = _centered(x)
    n = dev.size
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(dev, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    rho = acov / acov[0]
    rho[0] = 1.0
    return np.clip(rho, -1.0, 1.0)


def cross_correlation(a, b) -> float:
    """Pearson correlation at lag zero."""
    a, b = _as_series(a, "a"), _as_series(b, "b")
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    da, db = _centered(a, "a"), _centered(b, "b")
    r = np.dot(da, db) / math.sqrt(np.dot(da, da) * np.dot(db, db))
    return float(min(1.0, max(-1.0, r)))


def remove_zeros(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    return arr[arr != 0]


@dataclass
class Pdf:
    centers: np.ndarray
    density: np.ndarray
    gaussian: np.ndarray
    widths: np.ndarray

    def integral(self) -> float:
        return float(np.sum(self.density * self.widths))


def histogram_pdf(x, bins=61, standardize: bool = True) -> Pdf:
    """Histogram density next to a Gaussian with the same mean and variance.

    By default the series is standardized first, so the reference is the unit
    Gaussian. ``bins`` is a count or an array of edges, as in numpy.
    """
    arr = _as_series(x)
    dev = _centered(arr)
    sd = dev.std()
    z = dev / sd if standardize else arr
    mean, scale = (0.0, 1.0) if standardize else (arr.mean(), sd)
    density, edges = np.histogram(z, bins=bins, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    gaussian = np.exp(-0.5 * ((centers - mean) / scale) ** 2) / (scale * math.sqrt(2 * math.pi))
    return Pdf(centers, density, gaussian, np.diff(edges))


# ---- resampling --------------------------------------------------------------

def bootstrap_error(
    estimator: Callable[[np.ndarray], float],
    x,
    n_resamples: int = DEFAULT_RESAMPLES,
    block_length: int = DEFAULT_BLOCK,
    seed: int = 0,
) -> float:
    """Standard deviation of ``estimator`` over non-overlapping block resamples.

    The series is cut into ``len(x) // block_length`` blocks (the tail that
    does not fill a block is dropped) and each resample draws that many
    blocks with replacement.
    """
    arr = _as_series(x)
    if n_resamples < 100:
        raise ValueError(f"need at least 100 resamples, got {n_resamples}")
    if arr.size < block_length:
        raise ValueError(f"series of length {arr.size} is shorter than one block ({block_length})")
    n_blocks = arr.size // block_length
    blocks = arr[: n_blocks * block_length].reshape(n_blocks, block_length)
    rng = np.random.default_rng(seed)
    stats = np.empty(n_resamples)
    for i in range(n_resamples):
        pick = rng.integers(0, n_blocks, n_blocks)
        stats[i] = estimator(blocks[pick].ravel())
    return float(stats.std(ddof=1))


# ---- detrended fluctuation analysis --------------------------------------

@dataclass
class DfaResult:
    hurst: float
    stderr: float
    windows: np.ndarray
    fluctuations: np.ndarray
    fit_range: tuple[int, int]


def _segment_residuals(profile: np.ndarray, n: int) -> np.ndarray:
    """Mean squared residual of a straight-line fit in each length-``n`` segment.

    When ``n`` does not divide the length, segments are cut from both ends so
    that no part of the profile is ignored.
    """
    n_seg = profile.size // n
    head = profile[: n_seg * n].reshape(n_seg, n)
    tail = profile[profile.size - n_seg * n:].reshape(n_seg, n)
    seg = head if profile.size == n_seg * n else np.vstack([head, tail])
    t = np.arange(n, dtype=float)
    t -= t.mean()
    y = seg - seg.mean(axis=1, keepdims=True)
    slope = y @ t / np.dot(t, t)
    resid = y - slope[:, None] * t
    return np.mean(resid**2, axis=1)


def _slopes(logn: np.ndarray, logf: np.ndarray) -> np.ndarray:
    """Least-squares slope of each row of ``logf`` against ``logn``."""
    xc = logn - logn.mean()
    return (logf - logf.mean(axis=-1, keepdims=True)) @ xc / np.dot(xc, xc)


def dfa_windows(length: int, min_window: int = 8, max_window: Optional[int] = None,
                n_windows: int = 12) -> np.ndarray:
    if max_window is None:
        max_window = length // 8
    if max_window < min_window:
        raise ValueError(f"series of length {length} too short for DFA windows >= {min_window}")
    windows = np.unique(np.round(np.geomspace(min_window, max_window, n_windows)).astype(int))
    if windows.size < MIN_WINDOW_SIZES:
        raise ValueError(f"only {windows.size} distinct window sizes; DFA needs at least "
                         f"{MIN_WINDOW_SIZES}")
    return windows


def dfa_hurst(
    x,
    min_window: int = 8,
    max_window: Optional[int] = None,
    n_windows: int = 12,
    n_resamples: int = DEFAULT_RESAMPLES,
    seed: int = 0,
) -> DfaResult:
    """Hurst exponent by first-order DFA.

    The profile is the cumulative sum of the mean-removed series. For each
    window size the profile is split into non-overlapping segments, each is
    detrended by a least-squares line, and ``F(n)`` is the RMS residual. The
    exponent is the slope of ``log F`` against ``log n``. Its error comes from
    resampling whole segments with replacement at every window size.
    """
    dev = _centered(x)
    windows = dfa_windows(dev.size, min_window, max_window, n_windows)
    if dev.size < 4 * windows[-1]:
        raise ValueError(f"series length {dev.size} < 4 x largest window {windows[-1]}")
    profile = np.cumsum(dev)
    residuals = [_segment_residuals(profile, int(n)) for n in windows]
    fluct = np.sqrt([r.mean() for r in residuals])
    if np.any(fluct <= 0):
        raise ValueError("degenerate fluctuation function")
    logn = np.log(windows)
    hurst = float(_slopes(logn, np.log(fluct)))

    rng = np.random.default_rng(seed)
    boot = np.empty((n_resamples, windows.size))
    for j, r in enumerate(residuals):
        pick = rng.integers(0, r.size, (n_resamples, r.size))
        boot[:, j] = 0.5 * np.log(np.maximum(r[pick].mean(axis=1), 1e-300))
    stderr = float(_slopes(logn, boot).std(ddof=1)) if n_resamples > 1 else 0.0
    return DfaResult(hurst, stderr, windows, fluct, (int(windows[0]), int(windows[-1])))


# ---- order-flow estimators -------------------------------------------------

@dataclass
class ImpactCurve:
    centers: np.ndarray  # rescaled signed volume
    mean_dmid: np.ndarray  # nan where a bin is empty
    counts: np.ndarray
    v_max: float

    @property
    def occupied(self) -> np.ndarray:
        return self.counts > 0


def impact_function(records, n_bins: int = 20) -> ImpactCurve:
    """Mean mid-price change per bin of signed market-order volume.

    ``records`` holds rows ``(signed_volume, dmid)``. Volumes are divided by
    the largest absolute volume so they lie in ``[-1, 1]``, then split into
    ``n_bins`` equal-width bins.
    """
    rec = np.asarray(records, dtype=float).reshape(-1, 2)
    if rec.shape[0] < 1:
        raise ValueError("impact function needs at least one market order")
    v, dmid = rec[:, 0], rec[:, 1]
    v_max = float(np.max(np.abs(v)))
    if v_max == 0:
        raise ValueError("all market-order volumes are zero")
    scaled = v / v_max
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, scaled, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=dmid, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return ImpactCurve(centers, mean, counts, v_max)


def impact_by_volume(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean mid change for each distinct signed volume: ``(volume, mean, count)``."""
    rec = np.asarray(records, dtype=float).reshape(-1, 2)
    vols, inverse, counts = np.unique(rec[:, 0], return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=rec[:, 1])
    return vols, sums / counts, counts


def average_book_shape(snapshots: Sequence[DepthProfile]) -> tuple[np.ndarray, np.ndarray]:
    """Mean resting volume per tick of distance from the mid.

    Bid and ask volume at the same distance are added together, then averaged
    over snapshots. A level at distance ``d`` falls in bucket ``ceil(d)``, so
    bucket 1 is the first tick away from the mid. Returns
    ``(buckets, mean_volume)``.
    """
    if not snapshots:
        raise ValueError("need at least one depth snapshot")
    totals: dict[int, float] = {}
    for snap in snapshots:
        for dist, vol in (*snap.bid, *snap.ask):
            k = math.ceil(dist - 1e-9)
            totals[k] = totals.get(k, 0.0) + vol
    top = max(totals, default=0)
    buckets = np.arange(0 if 0 in totals else 1, top + 1)
    volume = np.array([totals.get(int(k), 0.0) for k in buckets]) / len(snapshots)
    return buckets, volume


# ---- ensembles ---------------------------------------------------------------

def pool(values: Sequence[float], errors: Sequence[float]) -> tuple[float, float]:
    """Mean of per-run estimates and the error of that mean."""
    v = np.asarray(values, dtype=float)
    e = np.asarray(errors, dtype=float)
    return float(v.mean()), float(math.sqrt(np.sum(e**2)) / v.size)


def pooled_statistics(outputs) -> dict[str, tuple[float, float]]:
    """``(estimate, stderr)`` of the headline statistics over runs sorted by seed."""
    runs = sorted(outputs, key=lambda o: o.seed)
    rows: dict[str, list[tuple[float, float]]] = {}

    def add(name: str, value: float, err: float) -> None:
        rows.setdefault(name, []).append((value, err))

    for out in runs:
        r = out.returns
        series = hurst_series(r, out.column("volume"), out.column("spread"))
        for name, x in series.items():
            res = dfa_hurst(x)
            add(f"hurst_{name}", res.hurst, res.stderr)
        add("kurtosis", kurtosis(r), bootstrap_error(kurtosis, r))
        add("zero_fraction", zero_fraction(r), bootstrap_error(zero_fraction, r))
    return {k: pool([v for v, _ in vals], [e for _, e in vals]) for k, vals in rows.items()}


def zero_fraction(x) -> float:
    return float(np.mean(np.asarray(x) == 0))


def hurst_series(returns, volume, spread) -> dict[str, np.ndarray]:
    """The five series whose Hurst exponents are reported; undefined spreads dropped."""
    r = np.asarray(returns, dtype=float)
    spread = np.asarray(spread, dtype=float)
    return {
        "returns": r,
        "returns_no_zeros": remove_zeros(r),
        "volatility": np.abs(r),
        "volume": np.asarray(volume, dtype=float),
        "spread": spread[np.isfinite(spread)],
    }


# ---- csv emitters ------------------------------------------------------------

def write_xy_csv(fh: IO[str], header: Sequence[str], rows: Iterable[Sequence]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.10g}"
