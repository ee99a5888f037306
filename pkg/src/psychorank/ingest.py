"""
Loading leaderboard score tables and turning them into logit moments.

A leaderboard is a models x parcels table of bounded scores (fraction
correct per benchmark). The factor model works on ``V = logit(U)``, so
this module also clamps boundary scores and computes the sample moments
the estimator consumes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class IngestError(ValueError):
    """Raised when a leaderboard file cannot be turned into a ParcelMatrix."""


META_FIELDS = ("param_count_billions", "co2_kg", "architecture", "model_type")
_NUMERIC_META = ("param_count_billions", "co2_kg")


@dataclass(frozen=True)
class ParcelMatrix:
    """Models x parcels table of scores in [0, 1].

    Parameters
    ----------
    scores : ndarray, shape (M, P)
    model_ids : list of str
        Unique per row.
    parcel_ids : list of str
    metadata : dict
        Maps a metadata field name (see ``META_FIELDS``) to a length-M list.
        Missing values are ``None``.
    options_count : dict
        Optional number of answer options per parcel, used for the
        anti-guessing rescale.
    dropped : int
        Rows removed by listwise deletion while loading.
    """

    scores: np.ndarray
    model_ids: list
    parcel_ids: list
    metadata: dict = field(default_factory=dict)
    options_count: dict = field(default_factory=dict)
    dropped: int = 0

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 2:
            raise IngestError("scores must be a 2-D array")
        m, p = scores.shape
        if m < 2:
            raise IngestError("fewer than 2 complete rows")
        if p < 2:
            raise IngestError("need at least 2 parcels")
        if not np.all(np.isfinite(scores)):
            raise IngestError("scores must be finite")
        if scores.min() < 0.0 or scores.max() > 1.0:
            raise IngestError("scores must lie in [0, 1]")
        if len(self.model_ids) != m or len(self.parcel_ids) != p:
            raise IngestError("identifier lengths do not match the score matrix")
        if len(set(self.model_ids)) != m:
            raise IngestError("duplicate model id")
        for key, values in self.metadata.items():
            if len(values) != m:
                raise IngestError(f"metadata column {key!r} has wrong length")
        for name, o in self.options_count.items():
            if name not in self.parcel_ids:
                raise IngestError(f"options_count given for unknown parcel {name!r}")
            if int(o) < 2:
                raise IngestError(f"options_count for {name!r} must be >= 2")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "model_ids", list(self.model_ids))
        object.__setattr__(self, "parcel_ids", list(self.parcel_ids))

    @property
    def n_models(self):
        return self.scores.shape[0]

    @property
    def n_parcels(self):
        return self.scores.shape[1]

    def select(self, rows):
        """Return a new ParcelMatrix restricted to the given row indices."""
        rows = np.asarray(rows)
        meta = {k: [v[i] for i in rows] for k, v in self.metadata.items()}
        return ParcelMatrix(
            self.scores[rows],
            [self.model_ids[i] for i in rows],
            self.parcel_ids,
            meta,
            dict(self.options_count),
        )


@dataclass(frozen=True)
class LogitMatrix:
    """Logit-transformed scores and their sample moments.

    ``k`` is the column mean of ``V`` and ``S`` the sample covariance with
    divisor ``M`` (or ``M - 1`` when ``ddof=1``).
    """

    V: np.ndarray
    k: np.ndarray
    S: np.ndarray
    clamp_count: int
    epsilon: float
    parcel_ids: list
    model_ids: list
    ddof: int = 0

    @property
    def n_obs(self):
        return self.V.shape[0]

    @property
    def n_vars(self):
        return self.V.shape[1]

    @classmethod
    def from_logits(cls, V, parcel_ids=None, model_ids=None, ddof=0):
        """Wrap an already-unbounded data matrix (no clamping)."""
        V = np.array(V, dtype=float)
        m, p = V.shape
        k, S = sample_moments(V, ddof=ddof)
        parcel_ids = list(parcel_ids) if parcel_ids is not None else [f"x{i + 1}" for i in range(p)]
        model_ids = list(model_ids) if model_ids is not None else [f"m{i + 1}" for i in range(m)]
        return cls(V, k, S, 0, 0.0, parcel_ids, model_ids, ddof)

    def permute(self, order):
        """Reorder parcels (columns)."""
        order = list(order)
        return LogitMatrix.from_logits(
            self.V[:, order], [self.parcel_ids[i] for i in order], self.model_ids, self.ddof
        )


def sample_moments(V, ddof=0):
    """Column means and covariance of ``V`` with divisor ``M - ddof``."""
    V = np.asarray(V, dtype=float)
    k = V.mean(axis=0)
    D = V - k
    S = D.T @ D / (V.shape[0] - ddof)
    S = 0.5 * (S + S.T)
    return k, S


def normalize_score(raw, options_count):
    """Anti-guessing rescale so chance level maps to 0 and a perfect score to 1.

    ``max(0, (raw - 1/O) / (1 - 1/O))``; works elementwise on arrays.
    """
    if options_count < 2:
        raise ValueError("options_count must be >= 2")
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw score must be finite")
    base = 1.0 / options_count
    out = np.maximum(0.0, (raw - base) / (1.0 - base))
    return float(out) if out.ndim == 0 else out


def logistic(x):
    """Inverse logit, numerically safe for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def to_logit(data, epsilon=1e-3, ddof=0, normalize=True):
    """Clamp scores to ``[epsilon, 1 - epsilon]`` and map through the logit.

    Parameters
    ----------
    data : ParcelMatrix
    epsilon : float
        Clamping margin, in (0, 0.5).
    ddof : {0, 1}
        Covariance divisor is ``M - ddof``; 0 matches the ML likelihood.
    normalize : bool
        Apply the anti-guessing rescale to parcels with an ``options_count``.

    Returns
    -------
    LogitMatrix
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    U = np.array(data.scores, dtype=float)
    if normalize:
        for name, o in data.options_count.items():
            j = data.parcel_ids.index(name)
            U[:, j] = normalize_score(U[:, j], int(o))
    clamped = np.clip(U, epsilon, 1.0 - epsilon)
    clamp_count = int(np.count_nonzero(clamped != U))
    V = np.log(clamped) - np.log1p(-clamped)
    k, S = sample_moments(V, ddof=ddof)
    return LogitMatrix(V, k, S, clamp_count, float(epsilon), list(data.parcel_ids),
                       list(data.model_ids), ddof)


@dataclass
class IngestConfig:
    """How to read a leaderboard file.

    ``parcels`` of ``None`` means every column that is not the id column
    or a metadata column. ``metadata`` maps canonical metadata names (see
    ``META_FIELDS``) to column headers in the file; headers that already
    equal a canonical name need no entry.
    """

    id_column: str = "model_id"
    parcels: list | None = None
    options_count: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    delimiter: str | None = None

    def to_dict(self):
        return {
            "id_column": self.id_column,
            "parcels": self.parcels,
            "options_count": dict(self.options_count),
            "metadata": dict(self.metadata),
            "delimiter": self.delimiter,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _sniff_delimiter(header_line):
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def _parse_float(text, row, column):
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"unparsable numeric cell at row {row}, column {column!r}: {text!r}") from None


def load_leaderboard(path, config=None):
    """Read a delimited leaderboard table.

    Rows with any empty parcel cell are dropped (listwise deletion) and
    counted in ``ParcelMatrix.dropped``.
    """
    config = config or IngestConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise IngestError(f"{path} is empty")
    delim = config.delimiter or _sniff_delimiter(lines[0])
    reader = csv.reader(lines, delimiter=delim)
    header = [h.strip() for h in next(reader)]
    if config.id_column not in header:
        raise IngestError(f"id column {config.id_column!r} not found in header")
    for name in config.metadata:
        if name not in META_FIELDS:
            raise IngestError(f"unknown metadata field {name!r}")
    # columns already carrying a canonical metadata name are picked up without configuration
    mapping = {name: name for name in META_FIELDS if name in header}
    mapping.update(config.metadata)
    meta_cols = {name: col for name, col in mapping.items() if col in header}
    if config.parcels is None:
        skip = {config.id_column, *meta_cols.values()}
        parcels = [h for h in header if h not in skip]
    else:
        parcels = list(config.parcels)
        missing = [p for p in parcels if p not in header]
        if missing:
            raise IngestError(f"parcel columns not found: {missing}")
    pidx = [header.index(p) for p in parcels]
    id_idx = header.index(config.id_column)

    ids, rows, dropped = [], [], 0
    meta = {name: [] for name in meta_cols}
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        rec = rec + [""] * (len(header) - len(rec))
        cells = [rec[i].strip() for i in pidx]
        if any(c == "" for c in cells):
            dropped += 1
            continue
        rows.append([_parse_float(c, lineno, parcels[j]) for j, c in enumerate(cells)])
        ids.append(rec[id_idx].strip())
        for name, col in meta_cols.items():
            raw = rec[header.index(col)].strip()
            if name in _NUMERIC_META:
                meta[name].append(_parse_float(raw, lineno, col) if raw else None)
            else:
                meta[name].append(raw or None)

    if len(rows) < 2:
        raise IngestError("fewer than 2 complete rows")
    seen = set()
    for mid in ids:
        if mid in seen:
            raise IngestError(f"duplicate model id {mid!r}")
        seen.add(mid)
    return ParcelMatrix(np.array(rows), ids, parcels, meta, dict(config.options_count), dropped)


def write_leaderboard(path, data, delimiter=","):
    """Write a ParcelMatrix in the layout ``load_leaderboard`` reads back."""
    meta_names = [n for n in META_FIELDS if n in data.metadata]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["model_id", *data.parcel_ids, *meta_names])
        for i, mid in enumerate(data.model_ids):
            meta = ["" if data.metadata[n][i] is None else data.metadata[n][i] for n in meta_names]
            w.writerow([mid, *(f"{x:.17g}" for x in data.scores[i]), *meta])
