"""Model evaluation: pitch error, paired comparisons, gate summaries.

Pitch error is measured in semitones over vocalic nuclei only (three
samples per unit), per utterance first and then averaged, so long and
short utterances count equally.  The paired t-test carries its own
Student-t tail probability via the regularized incomplete beta function,
evaluated by continued fraction; no statistics package is involved.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Utterance
from .trainer import synthesize
from .wcg import ModelSet, emphasis_category, ramp_matrix


class DegenerateDataError(ValueError):
    """Statistic undefined for the given data (zero variance)."""


# ---------------------------------------------------------------------------
# Student-t machinery.

def _beta_continued_fraction(a: float, b: float, x: float,
                             max_iter: int = 300, eps: float = 1e-12) -> float:
    """Modified Lentz evaluation of the incomplete beta continued fraction."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # continued fraction converges fast on one side of the mean; use the
    # symmetry I_x(a,b) = 1 - I_{1-x}(b,a) for the other
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) for Student's t."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test; returns (t, p).

    Identical inputs give (0, 1).  Differences that are all equal but
    nonzero have no variance to test against and raise
    DegenerateDataError.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D arrays of equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    if np.all(d == 0.0):
        return 0.0, 1.0
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise DegenerateDataError(
            "all differences are identical; t statistic is undefined")
    t = float(d.mean()) * math.sqrt(n) / sd
    return t, student_t_two_sided_p(t, n - 1)


# ---------------------------------------------------------------------------
# Pitch error.

@dataclass
class RmseReport:
    """Per-utterance vocalic pitch RMSE with corpus-level summary.

    mean and std (population) are over utterances; pooled is the single
    RMSE over all retained samples; excluded counts utterances skipped
    for lacking any vocalic nucleus.
    """

    utterance_ids: list[str]
    values: np.ndarray
    mean: float
    std: float
    pooled: float
    excluded: int

    def save_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["utterance_id", "pitch_rmse"])
            for uid, v in zip(self.utterance_ids, self.values):
                out.writerow([uid, repr(float(v))])


def rmse_vocalic(model: ModelSet, corpus: Corpus) -> RmseReport:
    ids = []
    values = []
    sq_sum = 0.0
    n_samples = 0
    excluded = 0
    for utt in corpus.utterances:
        mask = utt.nucleus_mask()
        if not mask.any():
            excluded += 1
            continue
        err = (utt.observed_matrix() - synthesize(model, utt))[mask, :3]
        ids.append(utt.id)
        values.append(float(np.sqrt(np.mean(err ** 2))))
        sq_sum += float(np.sum(err ** 2))
        n_samples += err.size
    values = np.array(values)
    if values.size == 0:
        raise ValueError("no utterance with a vocalic nucleus to score")
    return RmseReport(
        utterance_ids=ids,
        values=values,
        mean=float(values.mean()),
        std=float(values.std()),
        pooled=float(math.sqrt(sq_sum / n_samples)),
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# Gate summaries.

@dataclass
class WeightTableRow:
    function: str
    cell: str
    count: int
    mean: float
    std: float
    min: float
    max: float


def weight_groups(model: ModelSet, corpus: Corpus, grouping: str = "auto"
                  ) -> dict[tuple[str, str], np.ndarray]:
    """Raw gate values grouped by (function, context cell)."""
    if grouping == "auto":
        grouping = "emphasis" if model.context_mode == "emphasis" else "attitude"
    if grouping not in ("attitude", "emphasis"):
        raise ValueError(f"unknown grouping {grouping!r}")
    groups: dict[tuple[str, str], list[float]] = {}
    for utt in corpus.utterances:
        for inst in utt.instances:
            cell = (utt.attitude if grouping == "attitude"
                    else emphasis_category(utt, inst))
            groups.setdefault((inst.function, cell), []).append(
                model.weight_of(utt, inst))
    return {key: np.array(vals) for key, vals in sorted(groups.items())}


def weight_table(model: ModelSet, corpus: Corpus, grouping: str = "auto"
                 ) -> list[WeightTableRow]:
    return [
        WeightTableRow(f, cell, len(vals), float(vals.mean()),
                       float(vals.std()), float(vals.min()), float(vals.max()))
        for (f, cell), vals in weight_groups(model, corpus, grouping).items()
    ]


def save_weight_table(rows: list[WeightTableRow], path: str,
                      extra: dict | None = None) -> None:
    """CSV with fixed column order; extra columns are prepended verbatim."""
    extra = extra or {}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh)
        out.writerow([*extra, "function", "cell", "count",
                      "mean", "std", "min", "max"])
        for r in rows:
            out.writerow([*extra.values(), r.function, r.cell, r.count,
                          repr(r.mean), repr(r.std), repr(r.min), repr(r.max)])


# ---------------------------------------------------------------------------
# Decomposition export.

DECOMP_COLUMNS = (
    ["unit", "component", "weight"]
    + [f"contour_{c}" for c in ("p1", "p2", "p3", "dur")]
    + [f"contrib_{c}" for c in ("p1", "p2", "p3", "dur")]
    + [f"partial_{c}" for c in ("p1", "p2", "p3", "dur")]
    + [f"observed_{c}" for c in ("p1", "p2", "p3", "dur")]
    + [f"residual_{c}" for c in ("p1", "p2", "p3", "dur")]
    + [f"reconstruction_{c}" for c in ("p1", "p2", "p3", "dur")]
)


def decomposition_rows(model: ModelSet, utterance: Utterance) -> list[dict]:
    """Per (unit, instance) breakdown whose partial sums telescope exactly.

    Within each unit the rows walk the covering instances in utterance
    order; the running partial sum after the last one equals the full
    reconstruction bit for bit.
    """
    n = len(utterance)
    observed = utterance.observed_matrix()
    pieces = []
    for k, inst in enumerate(utterance.instances):
        gen = model.wcg(inst.function)
        ramps = ramp_matrix(inst, gen.scope_extension_right, n)
        contour = gen.contour(ramps)
        w, frames = model.contribution(utterance, inst)
        pieces.append((k, inst, contour, w, frames))
    recon = np.zeros((n, 4))
    for _, inst, _, _, frames in pieces:
        recon[inst.scope_start:inst.scope_start + frames.shape[0]] += frames
    residual = observed - recon
    rows = []
    for i in range(n):
        partial = np.zeros(4)
        covering = [p for p in pieces
                    if p[1].scope_start <= i < p[1].scope_start + p[4].shape[0]]
        if not covering:
            rows.append(_decomp_row(i, "", 0.0, np.zeros(4), np.zeros(4),
                                    partial, observed[i], residual[i], recon[i]))
        for k, inst, contour, w, frames in covering:
            off = i - inst.scope_start
            partial = partial + frames[off]
            rows.append(_decomp_row(i, f"{inst.function}[{k}]", w,
                                    contour[off], frames[off], partial,
                                    observed[i], residual[i], recon[i]))
    return rows


def _decomp_row(unit, component, weight, contour, contrib, partial,
                observed, residual, recon) -> dict:
    row = {"unit": unit, "component": component, "weight": weight}
    for name, vec in (("contour", contour), ("contrib", contrib),
                      ("partial", partial), ("observed", observed),
                      ("residual", residual), ("reconstruction", recon)):
        for c, v in zip(("p1", "p2", "p3", "dur"), vec):
            row[f"{name}_{c}"] = float(v)
    return row


def export_decomposition(model: ModelSet, utterance: Utterance,
                         path: str) -> list[dict]:
    rows = decomposition_rows(model, utterance)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(DECOMP_COLUMNS)
        for row in rows:
            out.writerow([row["unit"], row["component"], repr(row["weight"])]
                         + [repr(row[c]) for c in DECOMP_COLUMNS[3:]])
    return rows
