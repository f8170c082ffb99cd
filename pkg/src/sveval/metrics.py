"""Partition-equalized detection cost: actual and minimum primary cost.

The normalized cost at threshold t is  C_norm(t) = p_miss(t) + beta * p_fa(t)
with beta = (c_fa/c_miss) * (1 - p_target)/p_target.  The actual cost applies
t = ln(beta) per partition cell and averages cell costs; the minimum cost
equalizes cell counts, pools all trials, and sweeps a single global threshold
per operating point.

Summation discipline: all weighted error rates are prefix/suffix sums over
trials sorted ascending by score (stable, with trials pre-sorted by id), so
results are independent of input order and reproducible bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .trialdata import ScoreSet, TrialId, TrialKey, TrialRecord

PARTITION_FIELDS = ("gender", "source_match", "language_match", "phone_match", "num_enroll")

# phone_match=Y cannot occur for non-targets, so non-target pools are formed
# on the remaining dimensions and shared across a target cell's phone values.
TARGET_ONLY_DIMENSIONS = ("phone_match",)


class EvaluationError(RuntimeError):
    """Scoring cannot proceed (uncovered trial, empty partitions, ...)."""


def beta(c_miss: float, c_fa: float, p_target: float) -> float:
    """Effective false-alarm weight of an operating point."""
    if c_miss <= 0 or c_fa <= 0:
        raise ValueError("c_miss and c_fa must be positive")
    if not 0 < p_target < 1:
        raise ValueError("p_target must lie in (0, 1)")
    # (1-p)/p written as 1/p - 1: rounds to exactly 99, 19, 1 for the
    # canonical priors 0.01, 0.05, 0.5.
    return (c_fa / c_miss) * (1.0 / p_target - 1.0)


@dataclass(frozen=True)
class OperatingPoint:
    """A (c_miss, c_fa, p_target) triple; the actual-cost threshold is ln(beta)."""

    c_miss: float = 1.0
    c_fa: float = 1.0
    p_target: float = 0.01

    def __post_init__(self):
        beta(self.c_miss, self.c_fa, self.p_target)  # validates

    @property
    def beta(self) -> float:
        return beta(self.c_miss, self.c_fa, self.p_target)

    @property
    def threshold(self) -> float:
        return math.log(self.beta)

    def effective_prior(self) -> float:
        return 1.0 / (1.0 + self.beta)


DEFAULT_POINTS = (OperatingPoint(1.0, 1.0, 0.01), OperatingPoint(1.0, 1.0, 0.05))


def exclude_three_segment(record: TrialRecord) -> bool:
    return record.num_enroll == 3


def _dim_value(record: TrialRecord, dim: str) -> str:
    value = getattr(record, dim)
    if dim == "phone_match" and value == "NA":
        value = "N"
    return str(value)


@dataclass(frozen=True)
class PartitionSchema:
    """Cell structure used for count equalization and per-cell cost averaging."""

    track: str
    dimensions: tuple[str, ...]
    exclusions: tuple[Callable[[TrialRecord], bool], ...] = (exclude_three_segment,)

    def __post_init__(self):
        for dim in self.dimensions:
            if dim not in PARTITION_FIELDS:
                raise ValueError(f"unknown partition dimension {dim!r}")

    @property
    def nontarget_dimensions(self) -> tuple[str, ...]:
        return tuple(d for d in self.dimensions if d not in TARGET_ONLY_DIMENSIONS)

    def excludes(self, record: TrialRecord) -> bool:
        return any(pred(record) for pred in self.exclusions)

    def target_coords(self, record: TrialRecord) -> tuple[tuple[str, str], ...]:
        return tuple((d, _dim_value(record, d)) for d in self.dimensions)

    def nontarget_coords(self, record: TrialRecord) -> tuple[tuple[str, str], ...]:
        return tuple((d, _dim_value(record, d)) for d in self.nontarget_dimensions)


AUDIO_DIMENSIONS = ("gender", "source_match", "language_match", "phone_match")
AUDIO_VISUAL_DIMENSIONS = ("gender", "language_match")
VISUAL_DIMENSIONS = ("gender",)


def schema_for_track(track: str, include_three_segment: bool = False) -> PartitionSchema:
    dims = {
        "audio": AUDIO_DIMENSIONS,
        "audio-visual": AUDIO_VISUAL_DIMENSIONS,
        "visual": VISUAL_DIMENSIONS,
    }.get(track)
    if dims is None:
        raise ValueError(f"unknown track {track!r}")
    exclusions = () if include_three_segment else (exclude_three_segment,)
    return PartitionSchema(track=track, dimensions=dims, exclusions=exclusions)


@dataclass(frozen=True)
class PartitionCell:
    coordinates: tuple[tuple[str, str], ...]
    n_target: int
    n_nontarget: int  # size of the matched non-target pool

    def coord_dict(self) -> dict[str, str]:
        return dict(self.coordinates)


@dataclass(frozen=True)
class EqualizationWeights:
    """Per-trial weights making partition cells contribute equally.

    Within each class, a trial's weight is 1/(cell count * number of
    non-empty cells), so every cell carries equal mass and each class sums
    to one.  Trials excluded by the schema are absent from the map.
    """

    w: dict[TrialId, float]

    def __post_init__(self):
        if any(v <= 0 for v in self.w.values()):
            raise ValueError("equalization weights must be positive")


@dataclass(frozen=True)
class TrialArrays:
    """Numeric view of (key, schema, scores) used by cost and bootstrap code."""

    t_ids: tuple[TrialId, ...]
    n_ids: tuple[TrialId, ...]
    t_cell: np.ndarray          # target-cell index per target trial
    n_cell: np.ndarray          # non-target-cell index per non-target trial
    t_model: np.ndarray         # model index per target trial
    n_model: np.ndarray
    t_cells: tuple[tuple[tuple[str, str], ...], ...]
    n_cells: tuple[tuple[tuple[str, str], ...], ...]
    t_pool: np.ndarray          # target cell -> matched non-target cell (or -1)
    models: tuple[str, ...]
    n_excluded: int
    t_scores: Optional[np.ndarray] = None
    n_scores: Optional[np.ndarray] = None
    # sweep support, present when scores are present
    t_order: Optional[np.ndarray] = None   # stable ascending-score order
    n_order: Optional[np.ndarray] = None
    candidates: Optional[np.ndarray] = None  # sentinel + midpoints + sentinel
    t_pos: Optional[np.ndarray] = None     # count of targets with score <= candidate
    n_pos: Optional[np.ndarray] = None

    @property
    def n_target_trials(self) -> int:
        return len(self.t_ids)

    @property
    def n_nontarget_trials(self) -> int:
        return len(self.n_ids)


def prepare_arrays(key: TrialKey, schema: PartitionSchema,
                   scores: Optional[ScoreSet] = None) -> TrialArrays:
    """Build the numeric trial view.  Internal plumbing shared with det/bootstrap."""
    t_ids: list[TrialId] = []
    n_ids: list[TrialId] = []
    t_cell: list[int] = []
    n_cell: list[int] = []
    t_model: list[int] = []
    n_model: list[int] = []
    t_score: list[float] = []
    n_score: list[float] = []
    t_cells: dict[tuple, int] = {}
    n_cells: dict[tuple, int] = {}
    models: dict[str, int] = {}
    n_excluded = 0
    for rec in key.records:  # records are sorted by trial id
        if schema.excludes(rec):
            n_excluded += 1
            continue
        model_idx = models.setdefault(rec.id.model_id, len(models))
        if scores is not None:
            try:
                llr = scores.entries[rec.id]
            except KeyError:
                raise EvaluationError(f"trial {rec.id} has no score") from None
        if rec.is_target():
            coords = schema.target_coords(rec)
            t_cell.append(t_cells.setdefault(coords, len(t_cells)))
            t_ids.append(rec.id)
            t_model.append(model_idx)
            if scores is not None:
                t_score.append(llr)
        else:
            coords = schema.nontarget_coords(rec)
            n_cell.append(n_cells.setdefault(coords, len(n_cells)))
            n_ids.append(rec.id)
            n_model.append(model_idx)
            if scores is not None:
                n_score.append(llr)
    if not t_ids or not n_ids:
        raise EvaluationError("all trials of one class were excluded by the schema")
    pool = np.full(len(t_cells), -1, dtype=int)
    for coords, idx in t_cells.items():
        reduced = tuple((d, v) for d, v in coords if d not in TARGET_ONLY_DIMENSIONS)
        pool[idx] = n_cells.get(reduced, -1)

    kwargs = {}
    if scores is not None:
        ts = np.array(t_score, dtype=float)
        ns = np.array(n_score, dtype=float)
        t_order = np.argsort(ts, kind="stable")
        n_order = np.argsort(ns, kind="stable")
        distinct = np.unique(np.concatenate([ts, ns]))
        mids = (distinct[:-1] + distinct[1:]) / 2.0
        candidates = np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1] + 1.0]])
        kwargs = dict(
            t_scores=ts, n_scores=ns, t_order=t_order, n_order=n_order,
            candidates=candidates,
            t_pos=np.searchsorted(ts[t_order], candidates, side="right"),
            n_pos=np.searchsorted(ns[n_order], candidates, side="right"),
        )
    return TrialArrays(
        t_ids=tuple(t_ids), n_ids=tuple(n_ids),
        t_cell=np.array(t_cell, dtype=int), n_cell=np.array(n_cell, dtype=int),
        t_model=np.array(t_model, dtype=int), n_model=np.array(n_model, dtype=int),
        t_cells=tuple(t_cells), n_cells=tuple(n_cells),
        t_pool=pool, models=tuple(models),
        n_excluded=n_excluded, **kwargs,
    )


def class_weights(cell_idx: np.ndarray, n_cells: int,
                  mult: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
    """Per-trial equalization weights for one class given trial multiplicities.

    Returns None when every cell is empty under ``mult``.
    """
    if mult is None:
        mult = np.ones(len(cell_idx))
    counts = np.bincount(cell_idx, weights=mult, minlength=n_cells)
    n_nonempty = int(np.count_nonzero(counts))
    if n_nonempty == 0:
        return None
    return mult / (counts[cell_idx] * n_nonempty)


def equalization_weights(key: TrialKey, schema: PartitionSchema) -> EqualizationWeights:
    """Weights making each cell's mass equal within targets and within non-targets."""
    view = prepare_arrays(key, schema)
    tw = class_weights(view.t_cell, len(view.t_cells))
    nw = class_weights(view.n_cell, len(view.n_cells))
    if tw is None or nw is None:
        raise EvaluationError("all trials of one class were excluded by the schema")
    w = {tid: float(x) for tid, x in zip(view.t_ids, tw)}
    w.update({tid: float(x) for tid, x in zip(view.n_ids, nw)})
    return EqualizationWeights(w=w)


def _prefix(weights_sorted: np.ndarray) -> np.ndarray:
    """prefix[i] = sum of the first i weights (ascending-score order)."""
    return np.concatenate([[0.0], np.cumsum(weights_sorted)])


def _suffix(weights_sorted: np.ndarray) -> np.ndarray:
    """suffix[i] = sum of weights from index i upward (descending accumulation)."""
    return np.concatenate([np.cumsum(weights_sorted[::-1])[::-1], [0.0]])


def error_rates(scores: ScoreSet, key: TrialKey, theta: float,
                weights: EqualizationWeights) -> tuple[float, float]:
    """Weighted (p_miss, p_fa) at threshold theta.

    Decision rule: accept iff llr > theta, so a score exactly at the
    threshold counts as a miss.
    """
    t_s, t_w, n_s, n_w = [], [], [], []
    for rec in key.records:
        w = weights.w.get(rec.id)
        if w is None:
            continue
        try:
            llr = scores.entries[rec.id]
        except KeyError:
            raise EvaluationError(f"trial {rec.id} has no score") from None
        if rec.is_target():
            t_s.append(llr)
            t_w.append(w)
        else:
            n_s.append(llr)
            n_w.append(w)
    if not t_s or not n_s:
        raise EvaluationError("no weighted trials in one class")
    t_s = np.array(t_s)
    t_w = np.array(t_w)
    n_s = np.array(n_s)
    n_w = np.array(n_w)
    t_order = np.argsort(t_s, kind="stable")
    n_order = np.argsort(n_s, kind="stable")
    p_miss = _prefix(t_w[t_order])[np.searchsorted(t_s[t_order], theta, side="right")]
    p_fa = _suffix(n_w[n_order])[np.searchsorted(n_s[n_order], theta, side="right")]
    return float(p_miss), float(p_fa)


def c_norm(p_miss: float, p_fa: float, point: OperatingPoint) -> float:
    """Normalized detection cost p_miss + beta * p_fa (no clipping)."""
    if not (0.0 <= p_miss <= 1.0 and 0.0 <= p_fa <= 1.0):
        raise ValueError("p_miss and p_fa must lie in [0, 1]")
    return p_miss + point.beta * p_fa


@dataclass(frozen=True)
class PointReport:
    point: OperatingPoint
    actual_c_norm: float   # mean over participating cells of the cell C_norm at ln(beta)
    min_c_norm: float      # single-threshold minimum of the equalized pooled cost
    min_threshold: float
    p_miss: float          # equalized pooled rates at the actual threshold ln(beta)
    p_fa: float


@dataclass(frozen=True)
class CellReport:
    cell: PartitionCell
    c_norms: tuple[float, ...]  # one per operating point, at theta = ln(beta)
    c_primary: float            # mean of c_norms


@dataclass(frozen=True)
class CostReport:
    track: str
    points: tuple[OperatingPoint, ...]
    actual_c_primary: float
    min_c_primary: float
    per_point: tuple[PointReport, ...]
    per_cell: tuple[CellReport, ...]
    skipped_cells: tuple[PartitionCell, ...]
    n_excluded: int

    def to_json_dict(self) -> dict:
        return {
            "track": self.track,
            "actual_c_primary": self.actual_c_primary,
            "min_c_primary": self.min_c_primary,
            "n_excluded_trials": self.n_excluded,
            "operating_points": [
                {
                    "c_miss": pr.point.c_miss,
                    "c_fa": pr.point.c_fa,
                    "p_target": pr.point.p_target,
                    "beta": pr.point.beta,
                    "threshold": pr.point.threshold,
                    "actual_c_norm": pr.actual_c_norm,
                    "min_c_norm": pr.min_c_norm,
                    "min_threshold": pr.min_threshold,
                    "p_miss": pr.p_miss,
                    "p_fa": pr.p_fa,
                }
                for pr in self.per_point
            ],
            "cells": [
                {
                    "coordinates": cr.cell.coord_dict(),
                    "n_target": cr.cell.n_target,
                    "n_nontarget": cr.cell.n_nontarget,
                    "c_norms": list(cr.c_norms),
                    "c_primary": cr.c_primary,
                }
                for cr in self.per_cell
            ],
            "skipped_cells": [
                {
                    "coordinates": cell.coord_dict(),
                    "n_target": cell.n_target,
                    "n_nontarget": cell.n_nontarget,
                }
                for cell in self.skipped_cells
            ],
        }

    def to_tsv(self) -> str:
        """Flat table: one row per cell and operating point."""
        dims = [d for d, _ in self.per_cell[0].cell.coordinates] if self.per_cell else []
        header = dims + ["p_target", "beta", "threshold", "n_target", "n_nontarget",
                         "c_norm", "cell_c_primary"]
        rows = ["\t".join(header)]
        for cr in self.per_cell:
            coords = cr.cell.coord_dict()
            for point, value in zip(self.points, cr.c_norms):
                rows.append("\t".join(
                    [coords[d] for d in dims]
                    + [repr(point.p_target), repr(point.beta), repr(point.threshold),
                       str(cr.cell.n_target), str(cr.cell.n_nontarget),
                       repr(value), repr(cr.c_primary)]
                ))
        return "\n".join(rows) + "\n"


def actual_costs_from_counts(view: TrialArrays, points: tuple[OperatingPoint, ...],
                             t_mult: Optional[np.ndarray] = None,
                             n_mult: Optional[np.ndarray] = None):
    """Per-cell actual costs under trial multiplicities.

    Returns (cell_indices, n_target_per_cell, n_pool_per_cell,
    c_norm matrix of shape (cells, points), skipped target-cell indices),
    or None when no cell participates.
    """
    if t_mult is None:
        t_mult = np.ones(view.n_target_trials)
    if n_mult is None:
        n_mult = np.ones(view.n_nontarget_trials)
    n_tc = len(view.t_cells)
    n_nc = len(view.n_cells)
    tot_t = np.bincount(view.t_cell, weights=t_mult, minlength=n_tc)
    tot_n = np.bincount(view.n_cell, weights=n_mult, minlength=n_nc)
    pool_tot = np.where(view.t_pool >= 0, tot_n[view.t_pool], 0.0)
    participating = (tot_t > 0) & (pool_tot > 0)
    skipped = np.flatnonzero((tot_t > 0) & ~participating)
    idx = np.flatnonzero(participating)
    if len(idx) == 0:
        return None
    cmat = np.empty((len(idx), len(points)))
    for j, point in enumerate(points):
        theta = point.threshold
        miss = np.bincount(view.t_cell, weights=t_mult * (view.t_scores <= theta),
                           minlength=n_tc)
        fa = np.bincount(view.n_cell, weights=n_mult * (view.n_scores > theta),
                         minlength=n_nc)
        p_miss = miss[idx] / tot_t[idx]
        p_fa = fa[view.t_pool[idx]] / pool_tot[idx]
        cmat[:, j] = p_miss + point.beta * p_fa
    return idx, tot_t, pool_tot, cmat, skipped


def min_cost_sweep(view: TrialArrays, point: OperatingPoint,
                   t_weights: np.ndarray, n_weights: np.ndarray) -> tuple[float, float]:
    """Minimum pooled C_norm over the candidate thresholds; returns (cost, threshold).

    Candidates are midpoints between consecutive distinct scores plus
    sentinels; sufficient because the weighted rates are step functions.
    """
    p_miss = _prefix(t_weights[view.t_order])[view.t_pos]
    p_fa = _suffix(n_weights[view.n_order])[view.n_pos]
    costs = p_miss + point.beta * p_fa
    best = int(np.argmin(costs))
    return float(costs[best]), float(view.candidates[best])


def cost_report(scores: ScoreSet, key: TrialKey, schema: PartitionSchema,
                points: tuple[OperatingPoint, ...] = DEFAULT_POINTS) -> CostReport:
    """Full evaluation: actual and minimum primary cost with per-cell breakdown."""
    if not points:
        raise ValueError("at least one operating point is required")
    view = prepare_arrays(key, schema, scores)

    actual = actual_costs_from_counts(view, points)
    if actual is None:
        raise EvaluationError("no participating cells (every cell lacks targets or "
                              "a matched non-target pool)")
    idx, tot_t, pool_tot, cmat, skipped_idx = actual
    cell_reports = []
    for row, ci in enumerate(idx):
        cell = PartitionCell(coordinates=view.t_cells[ci],
                             n_target=int(tot_t[ci]), n_nontarget=int(pool_tot[ci]))
        c_norms = tuple(float(v) for v in cmat[row])
        cell_reports.append(CellReport(cell=cell, c_norms=c_norms,
                                       c_primary=sum(c_norms) / len(points)))
    actual_c_primary = sum(cr.c_primary for cr in cell_reports) / len(cell_reports)
    skipped = tuple(
        PartitionCell(coordinates=view.t_cells[ci], n_target=int(tot_t[ci]), n_nontarget=0)
        for ci in skipped_idx
    )

    tw = class_weights(view.t_cell, len(view.t_cells))
    nw = class_weights(view.n_cell, len(view.n_cells))
    point_reports = []
    min_values = []
    for j, point in enumerate(points):
        min_c, min_theta = min_cost_sweep(view, point, tw, nw)
        min_values.append(min_c)
        theta = point.threshold
        pm = _prefix(tw[view.t_order])[np.searchsorted(
            view.t_scores[view.t_order], theta, side="right")]
        pf = _suffix(nw[view.n_order])[np.searchsorted(
            view.n_scores[view.n_order], theta, side="right")]
        actual_point = float(np.sum(cmat[:, j]) / len(idx))
        point_reports.append(PointReport(
            point=point, actual_c_norm=actual_point, min_c_norm=min_c,
            min_threshold=min_theta, p_miss=float(pm), p_fa=float(pf),
        ))
    min_c_primary = sum(min_values) / len(points)

    return CostReport(
        track=key.track, points=tuple(points),
        actual_c_primary=float(actual_c_primary), min_c_primary=float(min_c_primary),
        per_point=tuple(point_reports), per_cell=tuple(cell_reports),
        skipped_cells=skipped, n_excluded=view.n_excluded,
    )


def actual_c_primary(scores: ScoreSet, key: TrialKey, schema: PartitionSchema,
                     points: tuple[OperatingPoint, ...] = DEFAULT_POINTS) -> CostReport:
    """Actual primary cost at the fixed thresholds ln(beta); full report."""
    return cost_report(scores, key, schema, points)


def min_c_primary(scores: ScoreSet, key: TrialKey, schema: PartitionSchema,
                  points: tuple[OperatingPoint, ...] = DEFAULT_POINTS) -> CostReport:
    """Minimum primary cost over a single global threshold per point; full report."""
    return cost_report(scores, key, schema, points)
