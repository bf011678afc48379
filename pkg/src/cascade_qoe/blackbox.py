"""Polynomial surrogates of client ABR behaviour.

A surrogate maps ``(b(t-T_b..t), w(t-T_w..t), r(t-1))`` to ``r(t)`` with a
full total-degree polynomial over affinely scaled inputs. Datasets come
from single-player sessions over training traces.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np
from numba import njit

from .abr import BitrateLadder
from .errors import (
    DimensionMismatch,
    EmptyTestSplit,
    HistoryLengthMismatch,
    InsufficientTraces,
    InvalidParams,
    ModelIOError,
    SchemaVersionMismatch,
    SingularSystem,
)
from .qoe import QoeParams
from .simulator import PlayerSpec, run_session

MODEL_SCHEMA_VERSION = 1


@dataclass
class AbrDataset:
    """Rows of ``(buffer history, bandwidth history, previous bitrate) -> bitrate``."""

    buffer_hist: np.ndarray
    bandwidth_hist: np.ndarray
    prev_bitrate: np.ndarray
    target_bitrate: np.ndarray
    session: np.ndarray
    source_abr: str = ""
    split: str = "all"

    def __post_init__(self):
        n = self.target_bitrate.shape[0]
        for arr in (self.buffer_hist, self.bandwidth_hist, self.prev_bitrate, self.session):
            if arr.shape[0] != n:
                raise DimensionMismatch("dataset columns have different row counts")

    def __len__(self):
        return self.target_bitrate.shape[0]

    @property
    def t_b(self):
        return self.buffer_hist.shape[1] - 1

    @property
    def t_w(self):
        return self.bandwidth_hist.shape[1] - 1

    @property
    def inputs(self):
        """Design inputs, ``T_b + T_w + 3`` columns per row."""
        return np.column_stack([self.buffer_hist, self.bandwidth_hist, self.prev_bitrate])

    def subset(self, mask, split):
        return AbrDataset(
            self.buffer_hist[mask],
            self.bandwidth_hist[mask],
            self.prev_bitrate[mask],
            self.target_bitrate[mask],
            self.session[mask],
            self.source_abr,
            split,
        )

    def split_by_session(self, train_fraction=0.8, seed=0):
        """Disjoint train/test datasets; whole sessions go to one side."""
        sessions = np.unique(self.session)
        if sessions.size < 2:
            raise InsufficientTraces("need at least two sessions to split")
        order = np.random.default_rng(seed).permutation(sessions)
        n_train = min(max(int(round(train_fraction * sessions.size)), 1), sessions.size - 1)
        train_ids = order[:n_train]
        mask = np.isin(self.session, train_ids)
        return self.subset(mask, "train"), self.subset(~mask, "test")


def generate_dataset(
    abr,
    traces,
    ladder=BitrateLadder(),
    qoe=QoeParams(),
    t_b=3,
    t_w=3,
    max_buffer_s=30.0,
    delta_t_s=1.0,
    seed=0,
):
    """Drive one ABR alone over each trace and record its decisions.

    The first ``max(t_b, t_w) + 1`` steps of each session are dropped so
    every row has a full history. ``seed`` is stored with the rows and only
    matters to the later train/test split; sessions are deterministic.
    """
    if len(traces) < 2:
        raise InsufficientTraces("need at least two traces for a by-session split")
    warm = max(t_b, t_w) + 1
    cols = {"b": [], "w": [], "r": [], "y": [], "s": []}
    for sid, trace in enumerate(traces):
        spec = PlayerSpec(abr.name or abr.kind.value, abr, max_buffer_s=max_buffer_s)
        log = run_session([spec], trace, None, qoe, delta_t_s=delta_t_s, ladder=ladder)
        b, w, r = log.buffer[:, 0], log.goodput[:, 0], log.bitrate[:, 0]
        for t in range(warm, log.n_steps):
            cols["b"].append(b[t - t_b : t + 1])
            cols["w"].append(w[t - t_w : t + 1])
            cols["r"].append(r[t - 1])
            cols["y"].append(r[t])
            cols["s"].append(sid)
    return AbrDataset(
        np.array(cols["b"]).reshape(-1, t_b + 1),
        np.array(cols["w"]).reshape(-1, t_w + 1),
        np.array(cols["r"], dtype=float),
        np.array(cols["y"], dtype=float),
        np.array(cols["s"], dtype=int),
        abr.name,
    )


@lru_cache(maxsize=None)
def monomial_exponents(n_inputs, degree):
    """Canonical monomial order: by total degree, then lexicographic variable index."""
    rows = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(n_inputs), d):
            e = [0] * n_inputs
            for v in combo:
                e[v] += 1
            rows.append(e)
    return np.array(rows, dtype=int).reshape(-1, n_inputs)


@lru_cache(maxsize=None)
def _expansion_plan(n_inputs, degree):
    # each degree-d monomial = (a degree-(d-1) monomial) * (its last variable)
    plan = []
    prev = {(): 0}
    for d in range(1, degree + 1):
        combos = list(combinations_with_replacement(range(n_inputs), d))
        parents = np.array([prev[c[:-1]] for c in combos], dtype=int)
        variables = np.array([c[-1] for c in combos], dtype=int)
        plan.append((parents, variables))
        prev = {c: i for i, c in enumerate(combos)}
    return plan


@lru_cache(maxsize=None)
@lru_cache(maxsize=None)
def _flat_plan(n_inputs, degree):
    # global (parent, variable) per monomial, monomial 0 being the constant
    parents = [0]
    variables = [0]
    start, prev_len = 0, 1
    for p, v in _expansion_plan(n_inputs, degree):
        parents.extend((p + start).tolist())
        variables.extend(v.tolist())
        start += prev_len
        prev_len = len(p)
    return np.array(parents, dtype=np.int64), np.array(variables, dtype=np.int64)


@njit(cache=True)
def _poly_rows(z, coef, row_coef, parents, variables):
    rows = z.shape[0]
    n_feat = parents.shape[0]
    out = np.empty(rows)
    feat = np.empty(n_feat)
    for i in range(rows):
        c = coef[row_coef[i]]
        feat[0] = 1.0
        acc = c[0]
        for m in range(1, n_feat):
            f = feat[parents[m]] * z[i, variables[m]]
            feat[m] = f
            acc += c[m] * f
        out[i] = acc
    return out


def eval_polynomials(z, coef, row_coef, degree):
    """Evaluate scaled inputs ``z`` against one of several coefficient vectors.

    ``coef`` is ``(n_models, n_coefficients)`` and ``row_coef[i]`` selects the
    model for row ``i``. Equivalent to ``expand_features(z) @ coef[k]`` per
    row without materialising the feature matrix.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    parents, variables = _flat_plan(z.shape[1], degree)
    return _poly_rows(
        z,
        np.ascontiguousarray(coef, dtype=np.float64),
        np.ascontiguousarray(row_coef, dtype=np.int64),
        parents,
        variables,
    )


def n_coefficients(n_inputs, degree):
    return math.comb(n_inputs + degree, degree)


def expand_features(z, degree):
    """Monomial features of already-scaled inputs ``z`` (rows x inputs)."""
    z = np.asarray(z, dtype=float)
    rows, n = z.shape
    blocks = [np.ones((rows, 1))]
    block = blocks[0]
    for parents, variables in _expansion_plan(n, degree):
        block = block[:, parents] * z[:, variables]
        blocks.append(block)
    return np.concatenate(blocks, axis=1)


@dataclass
class PolyModel:
    abr_id: str
    t_b: int
    t_w: int
    degree: int
    coefficients: np.ndarray
    offset: np.ndarray
    scale: np.ndarray
    ladder: BitrateLadder = field(default_factory=BitrateLadder)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if self.offset.shape != (self.n_inputs,) or self.scale.shape != (self.n_inputs,):
            raise DimensionMismatch(f"scaling must have {self.n_inputs} entries")
        if self.coefficients.shape != (n_coefficients(self.n_inputs, self.degree),):
            raise DimensionMismatch(
                f"expected {n_coefficients(self.n_inputs, self.degree)} coefficients, "
                f"got {self.coefficients.shape}"
            )

    @property
    def n_inputs(self):
        return self.t_b + self.t_w + 3

    @property
    def feature_index(self):
        return monomial_exponents(self.n_inputs, self.degree)

    def raw(self, inputs):
        """Unclamped polynomial value for each row of ``inputs``."""
        z = (np.atleast_2d(np.asarray(inputs, dtype=float)) - self.offset) / self.scale
        return eval_polynomials(z, self.coefficients[None, :], np.zeros(z.shape[0], dtype=np.int64), self.degree)

    def predict(self, inputs, quantize=False):
        r = np.clip(self.raw(inputs), self.ladder.lowest, self.ladder.highest)
        if quantize:
            return self.ladder.array[self.ladder.nearest_index(r)]
        return r

    def __eq__(self, other):
        if not isinstance(other, PolyModel):
            return NotImplemented
        return (
            self.abr_id == other.abr_id
            and (self.t_b, self.t_w, self.degree) == (other.t_b, other.t_w, other.degree)
            and self.ladder == other.ladder
            and np.array_equal(self.coefficients, other.coefficients)
            and np.array_equal(self.offset, other.offset)
            and np.array_equal(self.scale, other.scale)
        )


def fit_poly_model(data, t_b=3, t_w=3, degree=5, ridge=1e-6, ladder=BitrateLadder(), abr_id=None):
    """Ridge least squares over the total-degree monomial basis.

    Inputs are scaled to [-1, 1] with the training min/max. The system is
    solved through an SVD of the design matrix, which gives the exact
    ridge solution without forming the normal equations.
    """
    if data.t_b != t_b or data.t_w != t_w:
        raise DimensionMismatch(f"dataset has T_b={data.t_b}, T_w={data.t_w}; asked for {t_b}, {t_w}")
    if degree < 1:
        raise InvalidParams("degree must be >= 1")
    if ridge < 0:
        raise InvalidParams("ridge must be >= 0")
    x = data.inputs
    y = data.target_bitrate
    n_coef = n_coefficients(x.shape[1], degree)
    if ridge == 0 and x.shape[0] < n_coef:
        raise SingularSystem(f"{x.shape[0]} rows cannot determine {n_coef} coefficients without ridge")
    lo, hi = x.min(axis=0), x.max(axis=0)
    offset = (hi + lo) / 2.0
    scale = (hi - lo) / 2.0
    scale[scale == 0] = 1.0
    feats = expand_features((x - offset) / scale, degree)
    u, s, vt = np.linalg.svd(feats, full_matrices=False)
    uty = u.T @ y
    if ridge == 0:
        tol = s.max() * max(feats.shape) * np.finfo(float).eps
        if np.any(s <= tol):
            raise SingularSystem("design matrix is rank deficient; use ridge > 0")
        shrink = 1.0 / s
    else:
        shrink = s / (s * s + ridge)
    coef = vt.T @ (shrink * uty)
    return PolyModel(abr_id or data.source_abr, t_b, t_w, degree, coef, offset, scale, ladder)


def predict_bitrate(model, b_hist, w_hist, r_prev, quantize=False):
    """Bitrate predicted for one observation.

    Without quantisation the value is the polynomial clamped to the
    ladder range; with it, the nearest rung (ties to the lower rung).
    """
    b_hist = np.atleast_1d(np.asarray(b_hist, dtype=float))
    w_hist = np.atleast_1d(np.asarray(w_hist, dtype=float))
    if b_hist.size != model.t_b + 1 or w_hist.size != model.t_w + 1:
        raise HistoryLengthMismatch(
            f"need {model.t_b + 1} buffer and {model.t_w + 1} bandwidth samples, "
            f"got {b_hist.size} and {w_hist.size}"
        )
    row = np.concatenate([b_hist, w_hist, [float(r_prev)]])[None, :]
    return float(model.predict(row, quantize)[0])


def evaluate_accuracy(model, data):
    """Fraction of rows whose quantised prediction lands on the true rung."""
    if len(data) == 0:
        raise EmptyTestSplit("test split is empty")
    pred = model.predict(data.inputs, quantize=True)
    ladder = model.ladder
    return float(np.mean(ladder.nearest_index(pred) == ladder.nearest_index(data.target_bitrate)))


def model_to_dict(model):
    return {
        "version": MODEL_SCHEMA_VERSION,
        "abr_id": model.abr_id,
        "t_b": model.t_b,
        "t_w": model.t_w,
        "degree": model.degree,
        "ladder": list(model.ladder.levels),
        "scaling": {"offset": model.offset.tolist(), "scale": model.scale.tolist()},
        "coefficients": model.coefficients.tolist(),
    }


def model_from_dict(d):
    if d.get("version") != MODEL_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"model schema version {d.get('version')!r}, expected {MODEL_SCHEMA_VERSION}")
    try:
        return PolyModel(
            abr_id=str(d["abr_id"]),
            t_b=int(d["t_b"]),
            t_w=int(d["t_w"]),
            degree=int(d["degree"]),
            coefficients=np.array(d["coefficients"], dtype=float),
            offset=np.array(d["scaling"]["offset"], dtype=float),
            scale=np.array(d["scaling"]["scale"], dtype=float),
            ladder=BitrateLadder(tuple(d["ladder"])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelIOError(f"invalid model file: {exc}") from exc


def save_model(model, path):
    """Write the model as versioned JSON; the file appears atomically."""
    path = Path(path)
    text = json.dumps(model_to_dict(model), indent=1)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise ModelIOError(f"cannot write {path}: {exc}") from exc


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelIOError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ModelIOError(f"{path}: expected a JSON object")
    return model_from_dict(d)
