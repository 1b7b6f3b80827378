"""Tabular ingestion and preprocessing: CSV loading, binary coding of
categoricals, PCA learned on training rows, random splits and grouping of
rows into factor-combination sample sets.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, EncodingError, GroupingError, IngestionError
from .gibbs import FlatData
from .multiindex import FactorConfig, GroupIndex, enumerate_groups, flat_index


@dataclass
class Schema:
    factors: list[str]
    response: str
    features: list[str] | None = None     # None: every other column
    categorical: list[str] = field(default_factory=list)

    def feature_columns(self, columns) -> list[str]:
        if self.features is not None:
            return list(self.features)
        skip = set(self.factors) | {self.response}
        return [c for c in columns if c not in skip]


def load_csv(path, schema: Schema, require_response: bool = True) -> pd.DataFrame:
    """Read a CSV and check it against the schema.

    Factor and categorical columns are kept as strings; other feature columns
    and the response must parse as numbers. Errors name the offending row
    (1-based, excluding the header) and column.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise IngestionError(f"data file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise IngestionError(f"data file is empty: {path}") from exc
    if df.columns.empty:
        raise IngestionError(f"data file is empty: {path}")
    features = schema.feature_columns(df.columns)
    needed = list(schema.factors) + features + ([schema.response] if require_response else [])
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise IngestionError(f"{path}: missing column(s) {missing}")
    out = pd.DataFrame(index=df.index)
    numeric = [c for c in features if c not in schema.categorical]
    if require_response or schema.response in df.columns:
        numeric.append(schema.response)
    for col in df.columns:
        if col in numeric:
            out[col] = _parse_numeric(df[col], col, path)
        else:
            vals = df[col].str.strip()
            if col in schema.factors or col in schema.categorical:
                blank = np.flatnonzero((vals == "").to_numpy())
                if blank.size:
                    raise IngestionError(f"{path}: row {blank[0] + 1}, column {col!r}: empty value")
            out[col] = vals
    return out


def _to_float(v: str) -> float:
    try:
        return float(v)
    except ValueError:
        return math.nan


def _parse_numeric(s: pd.Series, col: str, path) -> pd.Series:
    # python float() is correctly rounded; pandas' fast parser can be off by an ulp
    vals = pd.Series([_to_float(v) for v in s], index=s.index, dtype=float)
    bad = np.flatnonzero(~np.isfinite(vals.to_numpy()))
    if bad.size:
        r = bad[0]
        raw = s.iloc[r]
        what = "missing value" if raw.strip() == "" else f"cannot parse {raw!r} as a number"
        raise IngestionError(f"{path}: row {r + 1}, column {col!r}: {what}")
    return vals.astype(float)


@dataclass
class BinaryEncoder:
    """Indicator coding of categorical columns with lexicographically ordered levels.

    ``coding="onehot"`` gives c indicators for c levels; ``"dummy"`` drops the
    first level.
    """

    columns: list[str]
    coding: str = "onehot"
    levels: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.coding not in ("onehot", "dummy"):
            raise ConfigError(f"coding must be 'onehot' or 'dummy', got {self.coding!r}")

    def fit(self, table: pd.DataFrame) -> "BinaryEncoder":
        for col in self.columns:
            if col not in table.columns:
                raise EncodingError(f"categorical column {col!r} not in table")
            self.levels[col] = sorted(table[col].astype(str).unique().tolist())
        return self

    def transform(self, table: pd.DataFrame) -> pd.DataFrame:
        out = {}
        for col in table.columns:
            if col not in self.levels:
                out[col] = table[col]
                continue
            vals = table[col].astype(str)
            lv = self.levels[col]
            unseen = sorted(set(vals) - set(lv))
            if unseen:
                raise EncodingError(f"column {col!r}: unseen level {unseen[0]!r}")
            for level in (lv[1:] if self.coding == "dummy" else lv):
                out[f"{col}={level}"] = (vals == level).astype(float).to_numpy()
        return pd.DataFrame(out, index=table.index)

    def output_columns(self, columns: Sequence[str]) -> list[str]:
        names = []
        for col in columns:
            if col in self.levels:
                lv = self.levels[col]
                names += [f"{col}={level}" for level in (lv[1:] if self.coding == "dummy" else lv)]
            else:
                names.append(col)
        return names


def binary_encode(table: pd.DataFrame, categorical_columns: Sequence[str], coding: str = "onehot") -> pd.DataFrame:
    return BinaryEncoder(list(categorical_columns), coding).fit(table).transform(table)


@dataclass
class PCAModel:
    center: np.ndarray
    loadings: np.ndarray   # (P_raw, k), orthonormal columns
    k: int
    scale: np.ndarray | None = None
    explained_variance: np.ndarray | None = None

    def to_json(self) -> dict:
        return {"center": self.center.tolist(), "loadings": self.loadings.tolist(), "k": self.k,
                "scale": None if self.scale is None else self.scale.tolist()}

    @classmethod
    def from_json(cls, d) -> "PCAModel":
        return cls(np.asarray(d["center"]), np.asarray(d["loadings"]).reshape(len(d["center"]), d["k"]),
                   d["k"], None if d["scale"] is None else np.asarray(d["scale"]))


def pca_fit(X_train, k: int, scale: bool = False) -> PCAModel:
    """Principal directions of the training rows, by descending eigenvalue.

    Each direction is signed so its largest-magnitude entry is positive.
    """
    X = np.atleast_2d(np.asarray(X_train, dtype=float))
    n, p = X.shape
    if not 1 <= k <= min(n - 1, p):
        raise ConfigError(f"PCA needs 1 <= k <= min(rows - 1, cols) = {min(n - 1, p)}, got k={k}")
    center = X.mean(axis=0)
    Xc = X - center
    sd = None
    if scale:
        sd = Xc.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        Xc = Xc / sd
    evals, evecs = np.linalg.eigh(Xc.T @ Xc / (n - 1))
    order = np.argsort(-evals, kind="stable")[:k]
    vecs = evecs[:, order]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    return PCAModel(center, vecs * signs, k, sd, evals[order])


def pca_transform(model: PCAModel, X) -> np.ndarray:
    Xc = np.atleast_2d(np.asarray(X, dtype=float)) - model.center
    if model.scale is not None:
        Xc = Xc / model.scale
    return Xc @ model.loadings


def split(table, fraction: float, seed: int):
    """Random disjoint split; the first part has ceil(fraction * n) rows, original order kept."""
    if not 0 < fraction < 1:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    n = len(table)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(fraction * n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if isinstance(table, pd.DataFrame):
        return table.iloc[tr], table.iloc[te]
    table = np.asarray(table)
    return table[tr], table[te]


@dataclass
class GroupedDataset:
    """Rows partitioned into the S factor-combination sample sets (flat group order)."""

    cfg: FactorConfig
    X: list[np.ndarray]
    y: list[np.ndarray]
    rows: list[np.ndarray]            # original row positions, per group
    feature_names: list[str]

    @property
    def dim(self) -> int:
        return len(self.feature_names)

    @property
    def n_samples(self) -> int:
        return int(sum(len(r) for r in self.rows))

    def __len__(self):
        return self.n_samples

    def group(self, g: GroupIndex):
        i = flat_index(g.validate(self.cfg), self.cfg)
        return self.X[i], self.y[i]

    def sizes(self) -> dict[GroupIndex, int]:
        return {g: len(self.rows[i]) for i, g in enumerate(enumerate_groups(self.cfg))}

    def flatten(self) -> FlatData:
        P = self.dim
        X = np.concatenate([x.reshape(-1, P) for x in self.X]) if self.X else np.empty((0, P))
        y = np.concatenate(self.y) if self.y else np.empty(0)
        group = np.concatenate([np.full(len(r), i, dtype=np.intp) for i, r in enumerate(self.rows)])
        return FlatData(X, y, group)

    def row_order(self) -> np.ndarray:
        """Original row position of each flattened sample."""
        return np.concatenate(self.rows) if self.rows else np.empty(0, dtype=np.intp)

    def with_bases(self, bases_per_group) -> "GroupedDataset":
        return GroupedDataset(self.cfg.with_bases(bases_per_group), self.X, self.y, self.rows, self.feature_names)


def factor_codes(table: pd.DataFrame, factor_columns: Sequence[str], cfg: FactorConfig,
                 levels: dict[str, list[str]] | None = None) -> np.ndarray:
    """1-based factor index per row and factor group, shape (n, N).

    With ``levels`` a value maps to its position in the level list; without,
    values must already be integers in 1..J_n.
    """
    if len(factor_columns) != cfg.n_groups:
        raise GroupingError(f"{len(factor_columns)} factor columns for {cfg.n_groups} factor groups")
    codes = np.empty((len(table), cfg.n_groups), dtype=np.intp)
    for n, col in enumerate(factor_columns):
        J = cfg.factors_per_group[n]
        vals = table[col].astype(str).to_numpy()
        if levels is not None and col in levels:
            pos = {str(v): i + 1 for i, v in enumerate(levels[col])}
            bad = [v for v in vals if v not in pos]
            if bad:
                raise GroupingError(f"column {col!r}: value {bad[0]!r} is not a declared level")
            codes[:, n] = [pos[v] for v in vals]
        else:
            try:
                ints = np.array([int(float(v)) if float(v).is_integer() else -1 for v in vals], dtype=np.intp)
            except ValueError as exc:
                raise GroupingError(f"column {col!r}: non-integer factor value ({exc})") from exc
            codes[:, n] = ints
        out = (codes[:, n] < 1) | (codes[:, n] > J)
        if np.any(out):
            r = int(np.flatnonzero(out)[0])
            raise GroupingError(f"column {col!r}, row {r + 1}: value {vals[r]!r} outside 1..{J}")
    return codes


def group_by_factors(table: pd.DataFrame, factor_columns: Sequence[str], cfg: FactorConfig,
                     feature_columns: Sequence[str] | None = None, response: str | None = None,
                     levels: dict[str, list[str]] | None = None, X=None) -> GroupedDataset:
    """Partition rows by factor combination; empty groups are allowed.

    Features come from ``X`` (an array aligned with ``table``) if given, else
    from ``feature_columns``. Without a response column, y is NaN.
    """
    codes = factor_codes(table, factor_columns, cfg, levels)
    if X is None:
        X = table[list(feature_columns)].to_numpy(dtype=float)
        names = list(feature_columns)
    else:
        X = np.asarray(X, dtype=float)
        names = list(feature_columns) if feature_columns is not None else [f"x{i + 1}" for i in range(X.shape[1])]
    y = table[response].to_numpy(dtype=float) if response is not None and response in table.columns \
        else np.full(len(table), np.nan)
    flat = np.ravel_multi_index(tuple((codes - 1).T), cfg.factors_per_group) if len(table) else np.empty(0, int)
    Xs, ys, rows = [], [], []
    for i in range(cfg.n_sets):
        idx = np.flatnonzero(flat == i)
        Xs.append(X[idx].reshape(-1, X.shape[1]))
        ys.append(y[idx])
        rows.append(idx)
    return GroupedDataset(cfg, Xs, ys, rows, names)


def infer_levels(table: pd.DataFrame, factor_columns: Sequence[str]) -> dict[str, list[str]]:
    """Sorted distinct values per factor column (numeric order when every value is numeric)."""
    levels = {}
    for col in factor_columns:
        vals = table[col].astype(str).unique().tolist()
        try:
            vals = sorted(vals, key=float)
        except ValueError:
            vals = sorted(vals)
        levels[col] = vals
    return levels


@dataclass
class Preprocessor:
    """Learned preprocessing (coding, PCA, response transform) applied identically to new rows."""

    schema: Schema
    levels: dict[str, list[str]]
    bases_per_group: list[int]
    pca_k: int | None = None
    scale: bool = False
    log1p_response: bool = False
    coding: str = "onehot"
    center_response: bool = False
    encoder: BinaryEncoder | None = None
    pca: PCAModel | None = None
    raw_features: list[str] = field(default_factory=list)
    y_center: float = 0.0

    @property
    def cfg(self) -> FactorConfig:
        return FactorConfig([len(self.levels[c]) for c in self.schema.factors], self.bases_per_group)

    def fit(self, table: pd.DataFrame) -> "Preprocessor":
        self.raw_features = self.schema.feature_columns(table.columns)
        self.encoder = BinaryEncoder(list(self.schema.categorical), self.coding).fit(table)
        if self.pca_k:
            self.pca = pca_fit(self._encoded(table), self.pca_k, self.scale)
        self.y_center = 0.0
        if self.center_response and self.schema.response in table.columns and len(table):
            self.y_center = float(np.mean(self._response(table)))
        return self

    def _response(self, table) -> np.ndarray:
        y = table[self.schema.response].to_numpy(dtype=float)
        return np.log1p(y) if self.log1p_response else y

    def _encoded(self, table) -> np.ndarray:
        enc = self.encoder.transform(table[self.raw_features])
        return enc[self.encoder.output_columns(self.raw_features)].to_numpy(dtype=float)

    def features(self, table: pd.DataFrame) -> np.ndarray:
        X = self._encoded(table)
        return pca_transform(self.pca, X) if self.pca is not None else X

    def feature_names(self) -> list[str]:
        if self.pca is not None:
            return [f"pc{i + 1}" for i in range(self.pca.k)]
        return self.encoder.output_columns(self.raw_features)

    def transform(self, table: pd.DataFrame) -> GroupedDataset:
        ds = group_by_factors(table, self.schema.factors, self.cfg, self.feature_names(), None,
                              self.levels, X=self.features(table))
        if self.schema.response in table.columns:
            y = self._response(table) - self.y_center
            ds.y = [y[r] for r in ds.rows]
        return ds

    def inverse_response(self, y):
        y = np.asarray(y, dtype=float) + self.y_center
        return np.expm1(y) if self.log1p_response else y

    def to_json(self) -> dict:
        return {
            "levels": self.levels, "bases_per_group": list(self.bases_per_group), "pca_k": self.pca_k,
            "scale": self.scale, "log1p_response": self.log1p_response, "coding": self.coding,
            "center_response": self.center_response, "y_center": self.y_center,
            "encoder_levels": self.encoder.levels if self.encoder else {},
            "pca": None if self.pca is None else self.pca.to_json(), "raw_features": self.raw_features,
        }

    @classmethod
    def from_json(cls, schema: Schema, d: dict) -> "Preprocessor":
        self = cls(schema, d["levels"], d["bases_per_group"], d["pca_k"], d["scale"], d["log1p_response"],
                   d["coding"])
        self.encoder = BinaryEncoder(list(schema.categorical), d["coding"], dict(d["encoder_levels"]))
        self.pca = None if d["pca"] is None else PCAModel.from_json(d["pca"])
        self.raw_features = list(d["raw_features"])
        self.center_response = bool(d.get("center_response", False))
        self.y_center = float(d.get("y_center", 0.0))
        return self
