"""
Dataset ingestion: CSV loading and validation, one-hot targets, centering and
the sample covariance matrices used by every solver.

Input layout follows the MVA convention: X is n×N and Y is m×N, samples are
columns. Covariances omit the 1/N factor (C_XX = XXᵀ, C_YY = YYᵀ, C_XY = XYᵀ).
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
import requests

from regmva.errors import DatasetError, ShapeError

logger = logging.getLogger(__name__)

# Configuration
DATA_DIR_ENV = "MVA_DATA_DIR"
DEFAULT_DATA_DIR = "./data"
CENTERING_TOL = 1e-9
ZERO_VARIANCE_RTOL = 1e-12
MIN_ROWS = 2
MAX_REPORTED_ERRORS = 10

SEGMENT_COLUMNS = [
    'REGION-CENTROID-COL', 'REGION-CENTROID-ROW', 'SHORT-LINE-DENSITY-5',
    'SHORT-LINE-DENSITY-2', 'VEDGE-MEAN', 'VEDGE-SD', 'HEDGE-MEAN', 'HEDGE-SD',
    'INTENSITY-MEAN', 'RAWRED-MEAN', 'RAWBLUE-MEAN', 'RAWGREEN-MEAN',
    'EXRED-MEAN', 'EXBLUE-MEAN', 'EXGREEN-MEAN', 'VALUE-MEAN',
    'SATURATION-MEAN', 'HUE-MEAN',
]

KNOWN_SCHEMAS = {
    'segment': SEGMENT_COLUMNS + ['class'],
}

SEGMENT_URLS = {
    'segmentation.data': 'https://archive.ics.uci.edu/ml/machine-learning-databases/image/segmentation.data',
    'segmentation.test': 'https://archive.ics.uci.edu/ml/machine-learning-databases/image/segmentation.test',
}
# Constant in every segment row; removing it leaves the 18 inputs.
SEGMENT_DROPPED = 'REGION-PIXEL-COUNT'


def data_dir():
    """Cache directory for downloaded datasets ($MVA_DATA_DIR, default ./data)."""
    return Path(os.environ.get(DATA_DIR_ENV, DEFAULT_DATA_DIR))


@dataclass(frozen=True)
class CsvSchema:
    """Encoding options for load_csv."""
    ignore: tuple = ()
    categorical: tuple = ()
    expected: str = None


@dataclass(frozen=True, eq=False)
class RawTable:
    columns: tuple
    feature_names: tuple
    features: np.ndarray
    labels: tuple
    target: str
    source: str = ""

    @property
    def n_rows(self):
        return len(self.labels)


class Covariances(NamedTuple):
    cxx: np.ndarray
    cyy: np.ndarray
    cxy: np.ndarray


def _readonly(A):
    A = np.array(A, dtype=float)
    A.setflags(write=False)
    return A


def _center_rows(A):
    # Two passes keep ‖A·1‖∞ at round-off level for large offsets.
    A = A - A.mean(axis=1, keepdims=True)
    return A - A.mean(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    feature_names: tuple = ()
    output_names: tuple = ()
    means: np.ndarray = None
    scales: np.ndarray = None
    standardized: bool = False
    zero_variance: tuple = ()
    aliased: bool = False
    source: str = ""
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        X = _readonly(self.X)
        Y = X if self.aliased else _readonly(self.Y)
        if X.ndim != 2 or Y.ndim != 2:
            raise ShapeError(f"X and Y must be 2-D, got {X.shape} and {Y.shape}")
        n, N = X.shape
        m, N_y = Y.shape
        if N != N_y:
            raise ShapeError(f"X has {N} samples but Y has {N_y}")
        if N < 2 or n < 1 or m < 1:
            raise ShapeError(f"need N ≥ 2, n ≥ 1, m ≥ 1 (got N={N}, n={n}, m={m})")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DatasetError("X and Y must be finite")
        scale = max(1.0, float(np.abs(X).max()))
        drift = float(np.abs(X.sum(axis=1)).max())
        if drift > CENTERING_TOL * scale:
            raise DatasetError(f"X rows are not centered (‖X·1‖∞ = {drift:.3e})")
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'Y', Y)
        if not self.feature_names:
            object.__setattr__(self, 'feature_names', tuple(f"x{i}" for i in range(n)))
        if not self.output_names:
            object.__setattr__(self, 'output_names', tuple(f"y{i}" for i in range(m)))
        if self.means is None:
            object.__setattr__(self, 'means', _readonly(np.zeros(n)))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def m(self):
        return self.Y.shape[0]

    @property
    def N(self):
        return self.X.shape[1]

    @classmethod
    def from_matrices(cls, X, Y, **kwargs):
        """Build a Dataset from raw matrices, centering the rows of X and Y."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        return cls(X=_center_rows(X), Y=_center_rows(Y), means=X.mean(axis=1), **kwargs)

    def as_pca(self):
        """The same inputs with Y aliased to X (Ω = I, Y = X)."""
        if self.aliased:
            return self
        return Dataset(
            X=self.X, Y=self.X, feature_names=self.feature_names,
            output_names=self.feature_names, means=self.means, scales=self.scales,
            standardized=self.standardized, zero_variance=self.zero_variance,
            aliased=True, source=self.source, notes=dict(self.notes),
        )


# =============================================================================
# CSV INGEST
# =============================================================================
def _read_frame(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DatasetError(f"no header row in {path}")
    except pd.errors.ParserError as e:
        raise DatasetError(f"malformed CSV {path}: {e}")
    except (OSError, UnicodeDecodeError) as e:
        raise DatasetError(f"could not read {path}: {e}")


def validate_table(frame, target, schema=None):
    """
    Validate a string-typed frame against the target column and schema.

    Returns a report dict with 'valid', 'errors', 'warnings', 'row_count',
    'column_count' and 'columns'. Row numbers in messages are file lines (the
    header is line 1).
    """
    schema = schema or CsvSchema()
    errors = []
    warnings = []
    headers = [str(c).strip() for c in frame.columns]

    if target not in headers:
        errors.append(f"missing target column {target!r}")

    if schema.expected:
        expected_columns = KNOWN_SCHEMAS.get(schema.expected, [])
        missing_columns = [col for col in expected_columns if col not in headers]
        if missing_columns:
            errors.append(f"Missing columns: {missing_columns}")

    row_count = len(frame)
    if row_count < MIN_ROWS:
        errors.append(f"Insufficient rows: {row_count} < {MIN_ROWS}")

    # Short rows come back as NaN even with keep_default_na=False
    short_rows = np.flatnonzero(frame.isna().any(axis=1).to_numpy())
    for i in short_rows[:MAX_REPORTED_ERRORS]:
        errors.append(f"row {i + 2} has fewer than {len(headers)} fields")

    for col in _numeric_columns(headers, target, schema):
        if len(errors) >= MAX_REPORTED_ERRORS:
            break
        values = pd.to_numeric(frame[col], errors='coerce').to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            i = bad[0]
            errors.append(
                f"non-numeric cell {frame[col].iloc[i]!r} at row {i + 2}, column {col!r}"
            )

    if 0 < row_count < 10:
        warnings.append(f"Very small table: {row_count} rows")

    return {
        'valid': len(errors) == 0,
        'errors': errors,
        'warnings': warnings,
        'row_count': row_count,
        'column_count': len(headers),
        'columns': headers[:10],
    }


def _numeric_columns(headers, target, schema):
    skip = set(schema.ignore) | set(schema.categorical) | {target}
    return [h for h in headers if h not in skip]


def load_csv(path, target, schema=None):
    """Read a comma-separated file with a header row into a RawTable."""
    schema = schema or CsvSchema()
    frame = _read_frame(path)
    frame.columns = [str(c).strip() for c in frame.columns]
    report = validate_table(frame, target, schema)
    for message in report['warnings']:
        logger.warning("%s: %s", path, message)
    if not report['valid']:
        raise DatasetError(f"{path}: " + "; ".join(report['errors']))

    numeric = _numeric_columns(list(frame.columns), target, schema)
    blocks = [frame[numeric].apply(pd.to_numeric).to_numpy(dtype=float)]
    names = list(numeric)
    for col in schema.categorical:
        if col not in frame.columns:
            raise DatasetError(f"{path}: missing categorical column {col!r}")
        values = [v.strip() for v in frame[col]]
        classes = sorted(set(values))
        blocks.append(one_hot(values).T)
        names.extend(f"{col}={c}" for c in classes)

    features = np.hstack(blocks) if blocks else np.zeros((len(frame), 0))
    logger.info("Loaded %s: %d rows, %d features", path, len(frame), features.shape[1])
    return RawTable(
        columns=tuple(frame.columns),
        feature_names=tuple(names),
        features=features,
        labels=tuple(v.strip() for v in frame[target]),
        target=target,
        source=str(path),
    )


# =============================================================================
# ENCODING AND PREPROCESSING
# =============================================================================
def one_hot(labels):
    """m×N indicator matrix, classes in lexicographic order."""
    labels = list(labels)
    classes = sorted(set(labels))
    index = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((len(classes), len(labels)))
    Y[[index[v] for v in labels], np.arange(len(labels))] = 1.0
    return Y


def center_and_standardize(table, standardize=False):
    """Dataset with mean-zero X rows (unit variance if standardize) and centered one-hot Y."""
    if table.n_rows < MIN_ROWS:
        raise DatasetError(f"need at least {MIN_ROWS} samples, got {table.n_rows}")
    F = np.asarray(table.features, dtype=float).T
    means = F.mean(axis=1)
    X = _center_rows(F)

    sd = X.std(axis=1, ddof=1)
    flat = sd <= ZERO_VARIANCE_RTOL * (1.0 + np.abs(means))
    zero_variance = tuple(name for name, f in zip(table.feature_names, flat) if f)
    if zero_variance:
        logger.warning("Zero-variance features left centered: %s", list(zero_variance))

    scales = None
    if standardize:
        scales = np.where(flat, 1.0, sd)
        X = X / scales[:, None]
        X[flat] = 0.0

    Y = _center_rows(one_hot(table.labels))
    return Dataset(
        X=X, Y=Y,
        feature_names=tuple(table.feature_names),
        output_names=tuple(sorted(set(table.labels))),
        means=means, scales=scales, standardized=bool(standardize),
        zero_variance=zero_variance, source=table.source,
    )


def covariances(d):
    """(C_XX, C_YY, C_XY) = (XXᵀ, YYᵀ, XYᵀ)."""
    cxx = d.X @ d.X.T
    cxx = 0.5 * (cxx + cxx.T)
    if d.aliased:
        return Covariances(cxx=cxx, cyy=cxx, cxy=cxx)
    cyy = d.Y @ d.Y.T
    cyy = 0.5 * (cyy + cyy.T)
    return Covariances(cxx=cxx, cyy=cyy, cxy=d.X @ d.Y.T)


# =============================================================================
# SEGMENT DOWNLOAD
# =============================================================================
def _download(url, destination, progress=None):
    """Stream a file to disk; returns True on success. progress(name, done, total) per chunk."""
    logger.info("Downloading %s from %s", destination.name, url)
    try:
        response = requests.get(url, stream=True, timeout=300)
        response.raise_for_status()
        total = int(response.headers.get('content-length', 0))
        done = 0
        with open(destination, 'wb') as f:
            for chunk in response.iter_content(chunk_size=8192):
                f.write(chunk)
                done += len(chunk)
                if progress is not None:
                    progress(destination.name, done, total)
        return True
    except (requests.RequestException, OSError) as e:
        logger.error("Error downloading %s: %s", destination.name, e)
        if destination.exists():
            destination.unlink()
        return False


def parse_segment_file(path):
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith('REGION-CENTROID-COL'):
            header = line.split(',')
            continue
        if header is None:
            continue
        fields = line.split(',')
        if len(fields) == len(header) + 1:
            rows.append(fields)
    if header is None:
        raise DatasetError(f"{path}: segment header line not found")
    frame = pd.DataFrame([r[1:] for r in rows], columns=header)
    frame['class'] = [r[0].lower() for r in rows]
    return frame


def fetch_segment(directory=None, force=False, progress=None):
    """
    Download UCI Image Segmentation into the cache directory and write
    segment.csv (18 inputs plus 'class'). Returns the csv path.

    progress(name, done, total) is called for every downloaded chunk.
    """
    directory = Path(directory) if directory is not None else data_dir()
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / 'segment.csv'
    if target.exists() and not force:
        logger.info("Already exists: %s", target)
        return target

    frames = []
    for filename, url in SEGMENT_URLS.items():
        destination = directory / filename
        if force or not destination.exists():
            if not _download(url, destination, progress):
                raise DatasetError(f"could not download {url}")
        frames.append(parse_segment_file(destination))

    frame = pd.concat(frames, ignore_index=True)
    frame = frame.drop(columns=[SEGMENT_DROPPED])[KNOWN_SCHEMAS['segment']]
    frame.to_csv(target, index=False)
    logger.info("Wrote %s: %d rows", target, len(frame))
    return target
