import csv
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import special, stats
from statsmodels.stats.anova import AnovaRM

from litefbcn.analysis import (benchmark_latency, betainc, confusion, efficiency_report, export_features,
                               f_sf, flops_reduction_holds, format_report, metrics, rm_anova, write_report_csv)
from litefbcn.errors import LabelOutOfRange, NonDivisible
from litefbcn.heads import HeadConfig, head_param_count
from litefbcn.model import build_model
from litefbcn.nn import BackboneSpec


class TestConfusion:
    def test_example(self):
        assert_array_equal(confusion([0, 1, 0], [0, 1, 0], 2), [[2, 0], [0, 1]])

    def test_rows_are_truth(self):
        assert_array_equal(confusion([1, 1], [0, 1], 2), [[0, 1], [0, 1]])

    def test_empty(self):
        assert_array_equal(confusion([], [], 3), np.zeros((3, 3)))

    def test_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            confusion([0, 3], [0, 1], 3)
        with pytest.raises(LabelOutOfRange):
            confusion([0, 1], [-1, 1], 3)


class TestMetrics:
    def test_worked_example(self):
        rep = metrics([[2, 0], [1, 1]])
        assert abs(rep.accuracy - 0.75) <= 1e-12
        assert abs(rep.precision - 5 / 6) <= 1e-12
        assert abs(rep.recall - 0.75) <= 1e-12
        f1_0 = 2 * (2 / 3) * 1 / (2 / 3 + 1)
        f1_1 = 2 * 1 * 0.5 / 1.5
        assert abs(rep.f1 - (f1_0 + f1_1) / 2) <= 1e-12
        assert abs(rep.weighted_recall - 0.75) <= 1e-12

    def test_identity(self):
        rep = metrics(np.eye(4, dtype=int) * 3)
        assert (rep.accuracy, rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0, 1.0)
        assert rep.degenerate == []

    def test_never_predicted(self):
        rep = metrics([[2, 1, 0], [0, 3, 0], [0, 2, 0]])
        assert rep.per_class[2] == (0.0, 0.0, 0.0)
        assert rep.degenerate == [2]
        assert math.isfinite(rep.precision)

    @given(st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_relabel_invariance(self, n, seed):
        r = np.random.default_rng(seed)
        cm = r.integers(0, 10, (n, n))
        cm[0, 0] += 1
        perm = r.permutation(n)
        a, b = metrics(cm), metrics(cm[np.ix_(perm, perm)])
        for key in ("accuracy", "precision", "recall", "f1", "weighted_f1"):
            assert getattr(a, key) == pytest.approx(getattr(b, key), abs=1e-12)

    @given(st.integers(2, 5), st.integers(0, 2**32 - 1))
    def test_against_reference_definitions(self, n, seed):
        from sklearn.metrics import precision_recall_fscore_support
        r = np.random.default_rng(seed)
        y = r.integers(0, n, 60)
        p = r.integers(0, n, 60)
        rep = metrics(confusion(p, y, n))
        ref = precision_recall_fscore_support(y, p, labels=range(n), average="macro", zero_division=0)
        assert_allclose([rep.precision, rep.recall, rep.f1], ref[:3], atol=1e-12)


def _statsmodels_anova(scores):
    n_subj, n_treat = scores.shape
    df = pd.DataFrame({"subject": np.repeat(np.arange(n_subj), n_treat),
                       "method": np.tile(np.arange(n_treat), n_subj),
                       "score": scores.reshape(-1)})
    table = AnovaRM(df, "score", "subject", within=["method"]).fit().anova_table
    return float(table["F Value"].iloc[0]), float(table["Pr > F"].iloc[0])


class TestAnova:
    def test_worked_example(self):
        res = rm_anova(np.array([[1, 2], [2, 4], [3, 3]], dtype=float))
        assert (res.ss_treatment, res.ss_subjects) == pytest.approx((1.5, 3.0))
        assert res.ss_error == pytest.approx(1.0)
        assert res.f == pytest.approx(3.0)
        assert (res.df_treatment, res.df_error) == (1, 2)
        assert abs(res.p - 0.2254) < 1e-3
        # F(1, 2) is the square of a t(2): P(F > f) = 1 - sqrt(f / (2 + f))
        assert res.p == pytest.approx(1 - math.sqrt(3 / 5), rel=1e-12)
        assert not res.significant

    def test_identical_columns(self):
        res = rm_anova(np.tile([[0.9], [0.8], [0.95]], (1, 3)))
        assert (res.f, res.p, res.significant) == (0.0, 1.0, False)

    def test_zero_error_variance_is_flagged(self):
        res = rm_anova(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
        assert res.degenerate and res.p == 0.0 and math.isinf(res.f)

    @pytest.mark.parametrize("seed", range(20))
    def test_against_statsmodels(self, seed):
        scores = np.random.default_rng(seed).uniform(0.5, 1.0, (5, 4))
        res = rm_anova(scores)
        f_ref, p_ref = _statsmodels_anova(scores)
        assert abs(res.f - f_ref) <= 1e-6 * max(1.0, abs(f_ref))
        assert abs(res.p - p_ref) <= 1e-4
        assert res.p == pytest.approx(stats.f.sf(res.f, 3, 12), rel=1e-9, abs=1e-14)

    @given(st.integers(0, 2**32 - 1), st.floats(-10, 10), st.floats(0.01, 100))
    def test_shift_and_scale_invariance(self, seed, shift, scale):
        scores = np.random.default_rng(seed).standard_normal((5, 3))
        base = rm_anova(scores)
        assert rm_anova(scores + shift).p == pytest.approx(base.p, rel=1e-6, abs=1e-12)
        assert rm_anova(scale * scores).p == pytest.approx(base.p, rel=1e-6, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_subject_exchangeability(self, seed):
        r = np.random.default_rng(seed)
        scores = r.standard_normal((6, 3))
        assert rm_anova(scores[r.permutation(6)]).f == pytest.approx(rm_anova(scores).f, rel=1e-9)

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            rm_anova(np.ones((1, 3)))
        with pytest.raises(ValueError):
            rm_anova(np.array([[1.0, np.nan], [2.0, 3.0]]))

    @given(st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0, 1))
    def test_betainc_matches_reference(self, a, b, x):
        assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-13)

    @given(st.floats(0, 1e3), st.integers(1, 40), st.integers(1, 200))
    def test_f_tail_matches_reference(self, f, d1, d2):
        assert f_sf(f, d1, d2) == pytest.approx(stats.f.sf(f, d1, d2), rel=1e-8, abs=1e-13)


SMALL = BackboneSpec.from_widths((6, 6, 2), [4, 8], [1, 2])


class TestExport:
    def _export(self, tmp_path, variant, x, labels, **kw):
        model = build_model(SMALL, HeadConfig(variant, num_classes=3, **kw))
        path = tmp_path / "feat.csv"
        feats = export_features(model, x, labels, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        return model, feats, rows

    def test_rows_and_norms(self, tmp_path, rng):
        x = rng.standard_normal((7, 6, 6, 2)).astype(np.float32)
        x[3] = x[5]
        labels = [0, 1, 2, 0, 1, 2, 0]
        model, feats, rows = self._export(tmp_path, "LiteFBCN", x, labels, gamma=2)
        assert len(rows) == 8
        assert rows[0][:3] == ["label", "f0", "f1"]
        assert len(rows[0]) - 1 == (8 // 2) ** 2
        assert [int(r[0]) for r in rows[1:]] == labels
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        assert_allclose(np.linalg.norm(values, axis=1), 1, atol=1e-5)
        assert rows[4][1:] == rows[6][1:]

    def test_baseline_exports_pooled(self, tmp_path, rng):
        x = rng.standard_normal((3, 6, 6, 2)).astype(np.float32)
        model, feats, rows = self._export(tmp_path, "BaselineGAP", x, [0, 1, 2])
        assert feats.shape == (3, 8)
        assert_allclose(feats, model.features(x)[0].mean(axis=(1, 2)), rtol=1e-6)


class TestEfficiency:
    def test_latency_contract(self):
        model = build_model(SMALL, HeadConfig("BaselineGAP", num_classes=3))
        stats_ = benchmark_latency(model, reps=1, warmup=2)
        assert stats_.reps == 1 and stats_.median == stats_.mean and stats_.std == 0.0
        assert stats_.median > 0 and stats_.host

    @given(st.integers(1, 128), st.sampled_from([2, 4, 8, 16]))
    def test_flop_inequality(self, k, gamma):
        assert flops_reduction_holds(k * gamma, gamma)

    def test_flop_inequality_fails_without_reduction(self):
        assert not flops_reduction_holds(64, 1)
        with pytest.raises(NonDivisible):
            flops_reduction_holds(64, 3)

    def test_report(self, tmp_path):
        backbone = BackboneSpec.from_widths((8, 8, 1), [8, 16], [1, 2])
        configs = [(backbone, HeadConfig("BaselineGAP", num_classes=3)),
                   (backbone, HeadConfig("FastBCNN", num_classes=3))]
        configs += [(backbone, HeadConfig("LiteFBCN", gamma=g, num_classes=3)) for g in (2, 4, 8)]
        rows = efficiency_report(configs, measure_latency=False)
        assert [r["gamma"] for r in rows] == ["N/A", "N/A", 2, 4, 8]
        for r in rows:
            assert r["head_params_closed_form"] == r["head_params_counted"]
        fast = rows[1]
        lite = rows[2:]
        assert [r["total_params"] for r in lite] == sorted((r["total_params"] for r in lite), reverse=True)
        assert len({r["total_params"] for r in lite}) == 3
        for r, g in zip(lite, (2, 4, 8)):
            assert r["head_flops"] < fast["head_flops"]
            assert r["bilinear_length"] * g * g == fast["bilinear_length"]
        backbone_params = rows[0]["total_params"] - head_param_count("BaselineGAP", 16, num_classes=3).total
        for r in rows:
            assert r["total_params"] == backbone_params + r["head_params_counted"]
        write_report_csv(rows, tmp_path / "eff.csv")
        with open(tmp_path / "eff.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 5
        text = format_report(rows)
        assert len(text.splitlines()) == 7

    def test_identity_baseline_cheapest(self):
        spec = BackboneSpec.from_widths((8, 8, 4), [8, 8], [1, 1])
        ident = BackboneSpec.identity((8, 8, 4))
        configs = [(ident, HeadConfig("BaselineGAP", num_classes=3)),
                   (spec, HeadConfig("BaselineGAP", num_classes=3)),
                   (ident, HeadConfig("LiteFBCN", gamma=2, num_classes=3)),
                   (ident, HeadConfig("FastBCNN", num_classes=3))]
        rows = efficiency_report(configs, reps=20, warmup=2)
        flops = [r["flops"] for r in rows]
        assert flops[0] == min(flops)
        for r in rows:
            assert r["latency_ms_median"] > 0
