"""Input/output trajectories, block-Hankel matrices and persistent excitation.

A trajectory is a pair of sampled signals ``u`` (inputs, dimension m) and
``y`` (outputs, dimension p).  Its order-K block-Hankel matrix stacks every
length-K window of a signal as one column, so that any linear combination of
columns is again a length-K window of *some* trajectory of a linear system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_positive_int, check_samples

__all__ = [
    "Signal",
    "TrajectoryData",
    "HankelMatrix",
    "PEResult",
    "TrajectoryFormatError",
    "build_hankel",
    "split_past_future",
    "check_persistent_excitation",
    "preprocess",
    "TrajectoryPreprocessor",
    "load_trajectory",
    "save_trajectory",
]

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class Signal:
    """A finite sampled signal of shape (T, d)."""

    samples: np.ndarray

    def __post_init__(self):
        arr = check_samples(self.samples, "signal")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def dim(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]


def _as_samples(signal, name="signal"):
    if isinstance(signal, Signal):
        return signal.samples
    return check_samples(signal, name)


@dataclass(frozen=True)
class TrajectoryData:
    """Recorded inputs and outputs of one system run.

    ``times`` is optional; when omitted the samples are taken to be uniformly
    spaced by ``sample_time`` starting at zero.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    sample_time: float
    times: np.ndarray | None = field(default=None)

    def __post_init__(self):
        u = _as_samples(self.inputs, "inputs")
        y = _as_samples(self.outputs, "outputs")
        if u.shape[0] != y.shape[0]:
            raise ValueError(
                f"inputs and outputs differ in length ({u.shape[0]} vs {y.shape[0]})"
            )
        dt = check_positive(self.sample_time, "sample_time")
        t = self.times
        if t is not None:
            t = np.asarray(t, dtype=float).reshape(-1)
            if t.shape[0] != u.shape[0]:
                raise ValueError("times must have one entry per sample")
            if np.any(np.diff(t) <= 0):
                raise ValueError("times must be strictly increasing")
            t.setflags(write=False)
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "sample_time", dt)
        object.__setattr__(self, "times", t)

    @property
    def n_samples(self):
        return self.inputs.shape[0]

    @property
    def n_inputs(self):
        return self.inputs.shape[1]

    @property
    def n_outputs(self):
        return self.outputs.shape[1]

    @property
    def t(self):
        if self.times is not None:
            return self.times
        return np.arange(self.n_samples) * self.sample_time

    def __len__(self):
        return self.n_samples


@dataclass(frozen=True)
class HankelMatrix:
    """Block-Hankel matrix of a signal: block ``(i, j)`` is sample ``i + j``."""

    data: np.ndarray
    block_dim: int
    order: int

    @property
    def n_cols(self):
        return self.data.shape[1]

    def block_rows(self, start, stop=None):
        """Rows for blocks ``start:stop`` (a view, no copy)."""
        stop = self.order if stop is None else stop
        d = self.block_dim
        return self.data[start * d : stop * d]


def build_hankel(signal, order):
    """Order-``order`` block-Hankel matrix of ``signal``.

    Returns an array of shape ``(d * order, N - order + 1)``.

    >>> build_hankel([1, 2, 3, 4, 5], 2).data
    array([[1., 2., 3., 4.],
           [2., 3., 4., 5.]])
    """
    x = _as_samples(signal)
    order = check_positive_int(order, "order")
    n, d = x.shape
    if order > n:
        raise ValueError(f"order {order} exceeds signal length {n}")
    cols = n - order + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, order, axis=0)
    # windows: (cols, d, order) -> column j is x[j:j+order].ravel()
    data = np.ascontiguousarray(windows.transpose(0, 2, 1).reshape(cols, order * d).T)
    return HankelMatrix(data=data, block_dim=d, order=order)


def split_past_future(h, past):
    """Split ``h`` into its first ``past`` block rows and the remaining ones."""
    past = check_positive_int(past, "past")
    if past >= h.order:
        raise ValueError(f"past={past} must be smaller than the Hankel order {h.order}")
    top = HankelMatrix(h.block_rows(0, past), h.block_dim, past)
    bottom = HankelMatrix(h.block_rows(past), h.block_dim, h.order - past)
    return top, bottom


@dataclass(frozen=True)
class PEResult:
    """Outcome of a persistent-excitation rank test; truthy when it passed."""

    is_pe: bool
    rank: int
    required_rank: int
    min_singular_value: float
    message: str

    def __bool__(self):
        return self.is_pe


def check_persistent_excitation(signal, order, tol=DEFAULT_RANK_TOL):
    """Test whether ``signal`` is persistently exciting of order ``order``.

    The numerical rank of the order-``order`` Hankel matrix counts singular
    values above ``tol`` times the largest one.  ``min_singular_value`` is the
    smallest singular value that was counted (0.0 if none was).
    """
    x = _as_samples(signal)
    order = check_positive_int(order, "order")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    n, d = x.shape
    required = d * order
    if order > n:
        raise ValueError(f"order {order} exceeds signal length {n}")
    h = build_hankel(x, order).data
    sv = np.linalg.svd(h, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        rank, smin = 0, 0.0
    else:
        kept = sv[sv > tol * sv[0]]
        rank, smin = int(kept.size), float(kept[-1])
    cols = n - order + 1
    if cols < required:
        msg = (
            f"insufficient columns: {cols} columns cannot reach rank {required}; "
            "not persistently exciting"
        )
        return PEResult(False, rank, required, smin, msg)
    if rank < required:
        msg = f"not persistently exciting of order {order}: rank {rank} < {required}"
        return PEResult(False, rank, required, smin, msg)
    msg = f"persistently exciting of order {order}: rank {rank} = {required}"
    return PEResult(True, rank, required, smin, msg)


def _hampel_zscores(x, half_window=3):
    """Per-channel z-scores against a moving median and MAD (Hampel identifier).

    Windows are truncated at the ends.  Where the window's MAD is zero the
    scale falls back to the mean absolute deviation; where that is zero too
    the sample matches its window exactly and scores 0.
    """
    n = x.shape[0]
    w = 2 * half_window + 1
    padded = np.full((n + 2 * half_window, x.shape[1]), np.nan)
    padded[half_window : half_window + n] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, w, axis=0)  # (n, d, w)
    med = np.nanmedian(win, axis=2)
    dev = np.abs(win - med[..., None])
    mad = np.nanmedian(dev, axis=2)
    meanad = np.nanmean(dev, axis=2)
    scale = np.where(mad > 0, mad / 0.6745, 1.253314 * meanad)
    centre = np.abs(x - med)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(scale > 0, centre / np.where(scale > 0, scale, 1.0), 0.0)


def _replace_outliers(t, x, outlier_z):
    if not np.isfinite(outlier_z):
        return x
    x = x.copy()
    z = _hampel_zscores(x)
    for c in range(x.shape[1]):
        bad = z[:, c] > outlier_z
        if bad.any() and not bad.all():
            x[bad, c] = np.interp(t[bad], t[~bad], x[~bad, c])
    return x


def preprocess(raw, target_sample_time, outlier_z=3.0):
    """Replace output spikes and resample onto a uniform time grid.

    An output sample is an outlier when its z-score against the median and
    MAD of its 7-sample neighbourhood exceeds ``outlier_z``; it is replaced by
    linear interpolation of the surrounding inliers.  Inputs are the applied
    commands and are not screened.  The cleaned signals are then linearly
    interpolated at ``t0, t0 + dt, ...`` up to the last recorded time.
    """
    if len(raw) < 2:
        raise ValueError("preprocess needs at least 2 samples to interpolate")
    dt = check_positive(target_sample_time, "target_sample_time")
    t = raw.t
    u = raw.inputs
    y = _replace_outliers(t, raw.outputs, outlier_z)
    if raw.times is None and math.isclose(dt, raw.sample_time, rel_tol=0, abs_tol=1e-15):
        return TrajectoryData(u, y, dt)
    span = t[-1] - t[0]
    n = int(math.floor(span / dt + 1e-9)) + 1
    grid = t[0] + np.arange(n) * dt
    ui = np.column_stack([np.interp(grid, t, u[:, c]) for c in range(u.shape[1])])
    yi = np.column_stack([np.interp(grid, t, y[:, c]) for c in range(y.shape[1])])
    times = None if grid[0] == 0.0 else grid
    return TrajectoryData(ui, yi, dt, times)


class TrajectoryPreprocessor(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`preprocess` for use in pipelines.

    ``sample_time=None`` keeps the sample time of the data seen in ``fit``.
    """

    def __init__(self, sample_time=None, outlier_z=3.0):
        self.sample_time = sample_time
        self.outlier_z = outlier_z

    def fit(self, X, y=None):
        if not isinstance(X, TrajectoryData):
            raise TypeError("TrajectoryPreprocessor expects TrajectoryData")
        self.sample_time_ = X.sample_time if self.sample_time is None else check_positive(
            self.sample_time, "sample_time")
        self.n_inputs_ = X.n_inputs
        self.n_outputs_ = X.n_outputs
        return self

    def transform(self, X):
        check_is_fitted(self, "sample_time_")
        if X.n_inputs != self.n_inputs_ or X.n_outputs != self.n_outputs_:
            raise ValueError("channel counts differ from the fitted data")
        return preprocess(X, self.sample_time_, self.outlier_z)


class TrajectoryFormatError(ValueError):
    """Malformed trajectory CSV; ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


def _parse_header(cells, lineno):
    if not cells or cells[0] != "t":
        raise TrajectoryFormatError("header must start with 't'", lineno)
    us = [c for c in cells[1:] if c.startswith("u")]
    ys = [c for c in cells[1:] if c.startswith("y")]
    expected = ["t"] + [f"u{i + 1}" for i in range(len(us))] + [f"y{i + 1}" for i in range(len(ys))]
    if cells != expected or not us or not ys:
        raise TrajectoryFormatError(
            f"header must be t,u1..um,y1..yp, got {','.join(cells)}", lineno
        )
    return len(us), len(ys)


def load_trajectory(path):
    """Read a trajectory CSV written by :func:`save_trajectory`."""
    text = Path(path).read_text(encoding="utf-8")
    header = None
    rows = []
    sample_time = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("sample_time"):
                _, _, value = body.partition("=")
                try:
                    sample_time = float(value)
                except ValueError:
                    raise TrajectoryFormatError("bad sample_time comment", lineno) from None
            continue
        cells = [c.strip() for c in stripped.split(",")]
        if header is None:
            header = _parse_header(cells, lineno)
            continue
        m, p = header
        if len(cells) != 1 + m + p:
            raise TrajectoryFormatError(
                f"expected {1 + m + p} values, got {len(cells)}", lineno
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise TrajectoryFormatError(f"non-numeric value in {stripped!r}", lineno) from None
    if header is None or not rows:
        raise TrajectoryFormatError("no samples")
    arr = np.array(rows)
    m, p = header
    t = arr[:, 0]
    if sample_time is None:
        sample_time = float(np.median(np.diff(t))) if len(t) > 1 else 1.0
    uniform = np.allclose(t, np.arange(len(t)) * sample_time, rtol=0, atol=1e-12)
    try:
        return TrajectoryData(arr[:, 1 : 1 + m], arr[:, 1 + m :], sample_time, None if uniform else t)
    except ValueError as exc:
        raise TrajectoryFormatError(str(exc)) from None


def save_trajectory(data, path):
    """Write ``data`` as UTF-8 CSV with full float precision."""
    m, p = data.n_inputs, data.n_outputs
    header = ["t"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
    arr = np.column_stack([data.t, data.inputs, data.outputs])
    lines = [f"# sample_time = {data.sample_time!r}", ",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
