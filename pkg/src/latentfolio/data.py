"""Return panels: CSV ingestion, normalization, train/validation splits and
block-bootstrap resampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class ReturnsPanel:
    """Date-indexed T x d matrix of daily simple returns.

    ``classes`` holds one asset-class label per column; it defaults to the
    asset code itself when no sidecar mapping is given.
    """

    dates: pd.DatetimeIndex
    codes: tuple[str, ...]
    values: np.ndarray
    classes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("values must be a 2-d array")
        dates = pd.DatetimeIndex(self.dates)
        codes = tuple(str(c) for c in self.codes)
        if len(dates) != values.shape[0]:
            raise DataError(f"{len(dates)} dates for {values.shape[0]} rows")
        if len(codes) != values.shape[1]:
            raise DataError(f"{len(codes)} codes for {values.shape[1]} columns")
        if len(set(codes)) != len(codes):
            raise DataError("asset codes must be unique")
        if len(dates) > 1 and not (np.diff(dates.asi8) > 0).all():
            raise DataError("dates must be strictly increasing")
        if not np.isfinite(values).all():
            raise DataError("panel contains non-finite values")
        classes = tuple(self.classes) if self.classes else codes
        if len(classes) != len(codes):
            raise DataError("one asset class per asset is required")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "classes", tuple(str(c) for c in classes))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def rows(self, index) -> "ReturnsPanel":
        """Sub-panel for a slice or integer index array (order preserved)."""
        idx = np.arange(self.T)[index]
        return ReturnsPanel(self.dates[idx], self.codes, self.values[idx], self.classes)

    def between(self, start=None, end=None, inclusive_end: bool = False) -> "ReturnsPanel":
        return self.rows(date_slice(self.dates, start, end, inclusive_end))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.dates, columns=list(self.codes))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, classes=None) -> "ReturnsPanel":
        codes = [str(c) for c in frame.columns]
        if classes is None:
            cls_labels = ()
        elif isinstance(classes, dict):
            cls_labels = tuple(classes.get(c, c) for c in codes)
        else:
            cls_labels = tuple(classes)
        return cls(pd.DatetimeIndex(frame.index), tuple(codes), frame.to_numpy(float), cls_labels)


def date_slice(dates: pd.DatetimeIndex, start=None, end=None, inclusive_end=False) -> slice:
    """Positional slice of ``dates`` in [start, end) (or [start, end])."""
    lo = 0 if start is None else int(dates.searchsorted(pd.Timestamp(start), side="left"))
    if end is None:
        hi = len(dates)
    else:
        side = "right" if inclusive_end else "left"
        hi = int(dates.searchsorted(pd.Timestamp(end), side=side))
    return slice(lo, hi)


def read_csv(path, **kwargs) -> pd.DataFrame:
    """``pd.read_csv`` with exact parsing of round-trip float text."""
    return pd.read_csv(path, float_precision="round_trip", **kwargs)


def read_asset_classes(path) -> dict[str, str]:
    """Read a flat ``code = class`` sidecar file (``#`` starts a comment)."""
    mapping = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ("," if "," in line else None)
        if sep is None:
            raise DataError(f"{path}:{lineno}: expected 'code = class'")
        code, label = (s.strip() for s in line.split(sep, 1))
        mapping[code] = label
    return mapping


def load_panel(path, format: str = "returns", asset_classes=None) -> ReturnsPanel:
    """Load a CSV whose first column is ``date`` and the rest are assets.

    With ``format="prices"`` simple returns p_t / p_{t-1} - 1 are computed.
    Rows with any missing value are dropped (the count is logged).
    """
    if format not in ("prices", "returns"):
        raise ValueError(f"format must be 'prices' or 'returns', got {format!r}")
    try:
        frame = read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"malformed CSV {path}: {exc}") from exc
    if frame.shape[1] < 2 or str(frame.columns[0]).strip().lower() != "date":
        raise DataError(f"{path}: first column must be 'date' followed by asset columns")
    try:
        dates = pd.to_datetime(frame.iloc[:, 0], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable dates: {exc}") from exc
    body = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    body.index = pd.DatetimeIndex(dates)
    if not body.index.is_monotonic_increasing or body.index.has_duplicates:
        raise DataError(f"{path}: dates must be strictly increasing")

    n_missing = int(body.isna().any(axis=1).sum())
    if format == "prices":
        if (body.dropna() <= 0).any().any():
            raise DataError(f"{path}: prices must be strictly positive")
        if n_missing:
            logger.warning("dropping %d price rows with missing values", n_missing)
        body = body.dropna()
        if len(body) < 2:
            raise DataError(f"{path}: need at least 2 complete rows")
        body = (body / body.shift(1) - 1.0).iloc[1:]
    else:
        if n_missing:
            logger.warning("dropping %d return rows with missing values", n_missing)
        body = body.dropna()
        if len(body) < 2:
            raise DataError(f"{path}: need at least 2 complete rows")

    classes = read_asset_classes(asset_classes) if isinstance(asset_classes, (str, Path)) else asset_classes
    return ReturnsPanel.from_frame(body, classes)


def save_panel(panel: ReturnsPanel, path) -> None:
    frame = panel.to_frame()
    frame.index.name = "date"
    frame.to_csv(path, date_format="%Y-%m-%d", float_format="%.17g")


@dataclass(frozen=True)
class Normalizer:
    """Column-wise standardization with train-sample statistics."""

    mu: np.ndarray
    sigma: np.ndarray

    def transform(self, x):
        return (np.asarray(x, float) - self.mu) / self.sigma

    def inverse(self, z):
        return np.asarray(z, float) * self.sigma + self.mu


def fit_normalizer(panel: ReturnsPanel, window=slice(None)) -> Normalizer:
    x = panel.values[window]
    if x.shape[0] < 2:
        raise DataError("normalizer window needs at least 2 rows")
    mu = x.mean(axis=0)
    sigma = x.std(axis=0, ddof=1)
    flat = np.flatnonzero(~(sigma > 0))
    if flat.size:
        names = ", ".join(panel.codes[i] for i in flat)
        raise DataError(f"zero variance on normalization window: {names}")
    return Normalizer(mu, sigma)


def bootstrap_indices(T: int, block_length: int, rng: np.random.Generator) -> np.ndarray:
    """Row indices of one fixed-length block bootstrap of a length-T series.

    Block starts are uniform on [0, T - block_length]; the last block is
    truncated so exactly T indices are returned.
    """
    if block_length < 1:
        raise ValueError("block_length must be positive")
    if block_length > T:
        raise ValueError(f"block_length {block_length} exceeds series length {T}")
    n_blocks = -(-T // block_length)
    starts = rng.integers(0, T - block_length + 1, size=n_blocks)
    idx = (starts[:, None] + np.arange(block_length)[None, :]).ravel()
    return idx[:T]


def block_bootstrap(panel: ReturnsPanel, block_length: int = 60, seed: int = 0) -> ReturnsPanel:
    """Block-bootstrap resample of ``panel`` (dates are kept as-is)."""
    idx = bootstrap_indices(panel.T, block_length, np.random.default_rng(seed))
    return ReturnsPanel(panel.dates, panel.codes, panel.values[idx], panel.classes)


@dataclass(frozen=True)
class SplitPlan:
    """Back-to-back monthly validation windows with expanding train sets.

    Window ``k`` covers dates in [start, end); the last one also includes
    ``train_end``.
    """

    train_end: pd.Timestamp
    validation_windows: tuple[tuple[pd.Timestamp, pd.Timestamp], ...]
    test_start: pd.Timestamp

    def fold(self, dates: pd.DatetimeIndex, k: int) -> tuple[slice, slice]:
        """(train, validation) positional slices for window ``k``."""
        start, end = self.validation_windows[k]
        last = k == len(self.validation_windows) - 1
        val = date_slice(dates, start, end, inclusive_end=last)
        return slice(0, val.start), val

    def folds(self, dates):
        return [self.fold(dates, k) for k in range(len(self.validation_windows))]


def make_splits(panel: ReturnsPanel, train_end, n_val_months: int, test_start, min_train_rows: int = 2) -> SplitPlan:
    train_end = pd.Timestamp(train_end)
    test_start = pd.Timestamp(test_start)
    if n_val_months < 1:
        raise ValueError("n_val_months must be positive")
    if test_start <= train_end:
        raise ValueError(f"test_start {test_start.date()} must follow train_end {train_end.date()}")
    if not panel.dates[0] <= train_end <= panel.dates[-1]:
        raise DataError(f"train_end {train_end.date()} outside panel range")
    bounds = [train_end - pd.DateOffset(months=n_val_months - k) for k in range(n_val_months + 1)]
    windows = tuple((bounds[k], bounds[k + 1]) for k in range(n_val_months))
    plan = SplitPlan(train_end, windows, test_start)
    for k in range(n_val_months):
        tr, val = plan.fold(panel.dates, k)
        if tr.stop < min_train_rows or val.stop - val.start < 2:
            raise DataError(
                f"insufficient history for validation window {windows[k][0].date()} - {windows[k][1].date()}"
            )
    return plan
