"""Pitch error reports, gate tables, decomposition export, statistics.

The t-test machinery is checked against constants computed once with an
independent reference implementation and frozen here, plus structural
identities (symmetry, monotonicity) that hold for the exact functions.
"""

from __future__ import annotations

import csv

import numpy as np
import pytest

from wsfc import synthgen, trainer
from wsfc.corpus import Corpus, ProsodyFrame, RhythmicUnit, Utterance
from wsfc.corpus import FunctionInstance
from wsfc.evaluate import (
    DECOMP_COLUMNS,
    DegenerateDataError,
    decomposition_rows,
    export_decomposition,
    paired_t_test,
    regularized_incomplete_beta,
    rmse_vocalic,
    save_weight_table,
    student_t_two_sided_p,
    weight_groups,
    weight_table,
)
from wsfc.netcore import DenseNet
from wsfc.synthgen import PlantSpec, PrototypeSpec, SyntheticSpec
from wsfc.wcg import ModelSet, WeightedContourGenerator, set_identity_weights

from conftest import recovery_spec

# Reference values frozen from an independent implementation.
BETAINC_CASES = [
    (0.5, 0.5, 0.3, 0.36901011956554536),
    (2.0, 3.0, 0.5, 0.6875),
    (5.0, 0.5, 0.9, 0.3166429150200122),
    (4.5, 4.5, 0.123, 0.0036744152206522837),
    (1.0, 1.0, 0.777, 0.777),
    (10.0, 2.0, 0.95, 0.8981054088575682),
]

STUDENT_T_CASES = [
    (2.5, 9, 0.03386182768298571),
    (-1.3, 4, 0.2634515964712241),
    (0.0, 7, 1.0),
    (12.0, 3, 0.001245015800789336),
    (0.7, 29, 0.4895051486144837),
]

PAIRED_A = [1.23047, 2.305491, 1.451735, 1.696331, 1.769863,
            1.503646, 1.252883, 2.059557, 1.944423, 1.018855]
PAIRED_B = [1.773004, 2.59982, 1.435045, 1.978727, 1.805811,
            1.612722, 1.514875, 1.953357, 2.168077, 1.390671]
PAIRED_T = -3.2386294674863607
PAIRED_P = 0.010180972684544973


def flat_spec(**overrides) -> SyntheticSpec:
    base = dict(
        registry=("DC", "DI"),
        attitude_set=("DC", "DI"),
        prototypes=(PrototypeSpec("DC", "fall", 4.0),
                    PrototypeSpec("DI", "rise", 6.0, duration_amplitude=0.1)),
        plant=PlantSpec(cells={}),
        n_utterances=30,
        length_range=(5, 9),
        noise_sigma=0.0,
        seed=13,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


class TestRegularizedIncompleteBeta:
    def test_frozen_reference_values(self):
        for a, b, x, want in BETAINC_CASES:
            got = regularized_incomplete_beta(a, b, x)
            assert got == pytest.approx(want, abs=1e-13), (a, b, x)

    def test_boundaries(self):
        assert regularized_incomplete_beta(3.0, 2.0, 0.0) == 0.0
        assert regularized_incomplete_beta(3.0, 2.0, 1.0) == 1.0

    def test_complement_symmetry(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            a = float(rng.uniform(0.2, 20.0))
            b = float(rng.uniform(0.2, 20.0))
            x = float(rng.uniform(0.0, 1.0))
            lhs = regularized_incomplete_beta(a, b, x)
            rhs = 1.0 - regularized_incomplete_beta(b, a, 1.0 - x)
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_monotone_in_x(self):
        xs = np.linspace(0.0, 1.0, 21)
        vals = [regularized_incomplete_beta(2.5, 1.5, float(x)) for x in xs]
        assert all(u < v for u, v in zip(vals, vals[1:]))

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            regularized_incomplete_beta(0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, -2.0, 0.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, 1.0, 1.5)


class TestStudentT:
    def test_frozen_reference_values(self):
        for t, df, want in STUDENT_T_CASES:
            got = student_t_two_sided_p(t, df)
            assert got == pytest.approx(want, abs=1e-13), (t, df)

    def test_sign_symmetry(self):
        for t in (0.3, 1.7, 4.2):
            assert student_t_two_sided_p(t, 11) == \
                student_t_two_sided_p(-t, 11)

    def test_decreasing_in_magnitude(self):
        ps = [student_t_two_sided_p(t, 8) for t in (0.5, 1.0, 2.0, 4.0)]
        assert all(u > v for u, v in zip(ps, ps[1:]))

    def test_bad_df(self):
        with pytest.raises(ValueError):
            student_t_two_sided_p(1.0, 0)


class TestPairedTTest:
    def test_frozen_dataset(self):
        t, p = paired_t_test(PAIRED_A, PAIRED_B)
        assert t == pytest.approx(PAIRED_T, abs=1e-12)
        assert p == pytest.approx(PAIRED_P, abs=1e-12)

    def test_identical_samples(self):
        assert paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == (0.0, 1.0)

    def test_constant_nonzero_difference(self):
        with pytest.raises(DegenerateDataError):
            paired_t_test([1.0, 2.0, 3.0], [1.5, 2.5, 3.5])

    def test_antisymmetry(self):
        t1, p1 = paired_t_test(PAIRED_A, PAIRED_B)
        t2, p2 = paired_t_test(PAIRED_B, PAIRED_A)
        assert t1 == pytest.approx(-t2, abs=1e-14)
        assert p1 == pytest.approx(p2, abs=1e-14)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            paired_t_test([1.0], [2.0])
        with pytest.raises(ValueError):
            paired_t_test([[1.0, 2.0]], [[2.0, 3.0]])


class TestRmseVocalic:
    def test_exact_model_scores_zero(self):
        spec = flat_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        report = rmse_vocalic(synthgen.analytic_model_set(spec), corpus)
        assert report.pooled == pytest.approx(0.0, abs=1e-12)
        assert np.all(report.values < 1e-12)
        assert report.excluded == 0
        assert len(report.utterance_ids) == len(corpus.utterances)

    def test_uniform_pitch_offset_reads_exactly(self):
        """Shifting every pitch output by d moves each utterance RMSE to d."""
        spec = flat_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        model = synthgen.analytic_model_set(spec)
        d = 0.75
        for f in ("DC", "DI"):
            model.wcg(f).cg.biases[-1][:3] += d
        report = rmse_vocalic(model, corpus)
        np.testing.assert_allclose(report.values, d, atol=1e-9)
        assert report.mean == pytest.approx(d, abs=1e-9)
        assert report.pooled == pytest.approx(d, abs=1e-9)
        assert report.std == pytest.approx(0.0, abs=1e-9)

    def test_duration_errors_do_not_count(self):
        spec = flat_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        model = synthgen.analytic_model_set(spec)
        for f in ("DC", "DI"):
            model.wcg(f).cg.biases[-1][3] += 5.0
        report = rmse_vocalic(model, corpus)
        assert report.pooled == pytest.approx(0.0, abs=1e-12)

    def test_nucleus_free_utterances_excluded(self):
        def unit(i, nucleus):
            return RhythmicUnit(i, ProsodyFrame((1.0, 1.0, 1.0), 0.0),
                                has_vocalic_nucleus=nucleus)
        utts = [
            Utterance("scored", "DC", [unit(0, True), unit(1, False)],
                      [FunctionInstance("DC", 1, 2, 0)]),
            Utterance("skipped", "DC", [unit(0, False), unit(1, False)],
                      [FunctionInstance("DC", 1, 2, 0)]),
        ]
        corpus = Corpus(["DC"], ["DC"], utts)
        cg = DenseNet((4, 1, 4), init_scale=0.0)
        wm = DenseNet((1, 1, 1), output="sigmoid", init_scale=0.0)
        model = ModelSet({"DC": WeightedContourGenerator("DC", cg, wm)},
                         "attitude", ["DC"], ["DC"])
        report = rmse_vocalic(model, corpus)
        assert report.excluded == 1
        assert report.utterance_ids == ["scored"]
        # only the nucleus unit of the scored utterance counts
        assert report.pooled == pytest.approx(1.0)

    def test_utterance_order_is_preserved(self):
        spec = flat_spec(noise_sigma=0.4)
        corpus, _ = synthgen.generate_corpus(spec)
        model = synthgen.analytic_model_set(spec)
        fwd = rmse_vocalic(model, corpus)
        rev = rmse_vocalic(model, Corpus(
            corpus.registry, corpus.attitude_set,
            list(reversed(corpus.utterances))))
        assert fwd.utterance_ids == list(reversed(rev.utterance_ids))
        assert fwd.mean == pytest.approx(rev.mean, rel=1e-12)
        assert fwd.pooled == pytest.approx(rev.pooled, rel=1e-12)

    def test_report_csv(self, tmp_path):
        spec = flat_spec(noise_sigma=0.3, n_utterances=5)
        corpus, _ = synthgen.generate_corpus(spec)
        report = rmse_vocalic(synthgen.analytic_model_set(spec), corpus)
        path = tmp_path / "rmse.csv"
        report.save_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["utterance_id", "pitch_rmse"]
        assert len(rows) == 6
        for row, uid, v in zip(rows[1:], report.utterance_ids, report.values):
            assert row[0] == uid
            assert float(row[1]) == float(v)


class TestWeightTables:
    def test_identity_model_all_ones(self):
        spec = recovery_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        model = synthgen.analytic_model_set(spec)
        set_identity_weights(model)
        rows = weight_table(model, corpus)
        n_inst = sum(len(u.instances) for u in corpus.utterances)
        assert sum(r.count for r in rows) == n_inst
        for r in rows:
            assert r.mean == 1.0 and r.std == 0.0
            assert r.min == 1.0 and r.max == 1.0

    def test_analytic_model_reports_planted_cells(self):
        spec = recovery_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        rows = weight_table(synthgen.analytic_model_set(spec), corpus)
        by_key = {(r.function, r.cell): r for r in rows}
        assert by_key[("XX", "DC")].mean == pytest.approx(1.75, abs=1e-12)
        assert by_key[("XX", "DI")].mean == pytest.approx(0.35, abs=1e-12)
        assert by_key[("DG", "DC")].mean == pytest.approx(1.3, abs=1e-12)
        assert by_key[("DG", "DI")].mean == pytest.approx(0.7, abs=1e-12)
        assert by_key[("XX", "DC")].std == pytest.approx(0.0, abs=1e-12)

    def test_groups_sorted_and_complete(self):
        spec = recovery_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        groups = weight_groups(synthgen.analytic_model_set(spec), corpus)
        keys = list(groups)
        assert keys == sorted(keys)
        assert all(isinstance(v, np.ndarray) for v in groups.values())

    def test_emphasis_grouping_without_emphasis(self):
        spec = flat_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        groups = weight_groups(synthgen.analytic_model_set(spec), corpus,
                               "emphasis")
        assert all(cell == "None" for _, cell in groups)

    def test_unknown_grouping(self):
        spec = flat_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        with pytest.raises(ValueError):
            weight_groups(synthgen.analytic_model_set(spec), corpus, "speaker")

    def test_save_with_extra_columns(self, tmp_path):
        spec = flat_spec()
        corpus, _ = synthgen.generate_corpus(spec)
        rows = weight_table(synthgen.analytic_model_set(spec), corpus)
        path = tmp_path / "weights.csv"
        save_weight_table(rows, path, extra={"batch_size": 64,
                                             "reg_coeff": 10.0})
        with open(path, newline="") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["batch_size", "reg_coeff", "function", "cell",
                             "count", "mean", "std", "min", "max"]
        assert all(r[0] == "64" and r[1] == "10.0" for r in parsed[1:])
        assert len(parsed) == len(rows) + 1


class TestDecomposition:
    def setup_method(self):
        self.spec = recovery_spec()
        corpus, _ = synthgen.generate_corpus(self.spec)
        self.corpus = corpus
        self.model = synthgen.analytic_model_set(self.spec)

    def test_partials_telescope_exactly(self):
        for utt in self.corpus.utterances[:40]:
            rows = decomposition_rows(self.model, utt)
            last = {}
            for row in rows:
                last[row["unit"]] = row
            for i, row in last.items():
                for c in ("p1", "p2", "p3", "dur"):
                    if row["component"]:
                        assert row[f"partial_{c}"] == \
                            row[f"reconstruction_{c}"], (utt.id, i, c)
                    assert row[f"observed_{c}"] - row[f"reconstruction_{c}"] \
                        == pytest.approx(row[f"residual_{c}"], abs=1e-12)

    def test_row_count_matches_coverage(self):
        utt = self.corpus.utterances[0]
        rows = decomposition_rows(self.model, utt)
        counts = trainer.coverage_counts(self.model, utt)
        want = int(np.maximum(counts, 1).sum())
        assert len(rows) == want

    def test_weight_column_carries_planted_gate(self):
        for utt in self.corpus.utterances[:20]:
            for row in decomposition_rows(self.model, utt):
                if row["component"].startswith("XX"):
                    want = self.spec.plant.weight_of("XX", utt.attitude)
                    assert row["weight"] == pytest.approx(want, abs=1e-12)

    def test_contrib_is_weight_times_contour(self):
        utt = self.corpus.utterances[3]
        for row in decomposition_rows(self.model, utt):
            if not row["component"]:
                continue
            for c in ("p1", "p2", "p3", "dur"):
                assert row[f"contrib_{c}"] == pytest.approx(
                    row["weight"] * row[f"contour_{c}"], abs=1e-12)

    def test_export_file_layout(self, tmp_path):
        utt = self.corpus.utterances[0]
        path = tmp_path / "decomp.csv"
        rows = export_decomposition(self.model, utt, path)
        with open(path, newline="") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == list(DECOMP_COLUMNS)
        assert len(parsed) == len(rows) + 1
        for raw, row in zip(parsed[1:], rows):
            assert int(raw[0]) == row["unit"]
            assert raw[1] == row["component"]
            assert float(raw[2]) == row["weight"]
            for j, col in enumerate(DECOMP_COLUMNS[3:], start=3):
                assert float(raw[j]) == row[col]

    def test_uncovered_unit_gets_empty_row(self):
        units = [RhythmicUnit(i, ProsodyFrame((0.5, 0.5, 0.5), 0.1))
                 for i in range(4)]
        utt = Utterance("u", "DC", units, [FunctionInstance("DC", 1, 2, 0)])
        rows = decomposition_rows(self.model, utt)
        empty = [r for r in rows if not r["component"]]
        assert {r["unit"] for r in empty} == {2, 3}
        for r in empty:
            assert r["weight"] == 0.0
            for c in ("p1", "p2", "p3", "dur"):
                assert r[f"contrib_{c}"] == 0.0
                assert r[f"partial_{c}"] == 0.0
