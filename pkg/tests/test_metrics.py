"""Displacement metrics, Brier endpoint error, composite score, reports."""

import numpy as np
import pytest

from demopp import metrics


class TestDisplacementMetrics:
    def test_perfect_mode_zeroes_everything(self):
        rng = np.random.default_rng(0)
        gt = rng.standard_normal((8, 2))
        preds = np.stack([gt, gt + 10])
        ade, fde, miss = metrics.displacement_metrics(preds, [0.5, 0.5], gt, 2)
        assert ade == 0.0 and fde == 0.0 and not miss

    def test_constant_3_4_offset(self):
        gt = np.zeros((6, 2))
        pred = np.zeros((1, 6, 2))
        pred[0, :, 0] = 3.0
        pred[0, :, 1] = 4.0
        ade, fde, miss = metrics.displacement_metrics(pred, [1.0], gt, 1, miss_threshold_m=2.0)
        assert ade == pytest.approx(5.0)
        assert fde == pytest.approx(5.0)
        assert miss

    def test_top_k_selected_by_probability(self):
        gt = np.zeros((4, 2))
        good = np.zeros((4, 2))
        bad = np.full((4, 2), 30.0)
        preds = np.stack([bad, good])
        probs = np.array([0.9, 0.1])
        ade1, _, _ = metrics.displacement_metrics(preds, probs, gt, 1)
        assert ade1 == pytest.approx(np.hypot(30, 30))
        ade2, _, _ = metrics.displacement_metrics(preds, probs, gt, 2)
        assert ade2 == 0.0

    def test_k_larger_than_modes_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            metrics.displacement_metrics(np.zeros((2, 3, 2)), [0.5, 0.5], np.zeros((3, 2)), 3)

    def test_matches_bruteforce_enumeration(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            k = int(rng.integers(1, 9))
            tn = int(rng.integers(2, 13))
            preds = rng.standard_normal((k, tn, 2)) * 4
            probs = rng.random(k)
            probs /= probs.sum()
            gt = rng.standard_normal((tn, 2)) * 4
            kk = int(rng.integers(1, k + 1))
            ade, fde, miss = metrics.displacement_metrics(preds, probs, gt, kk)
            sel = sorted(range(k), key=lambda i: (-probs[i], i))[:kk]
            ades = [np.linalg.norm(preds[i] - gt, axis=-1).mean() for i in sel]
            fdes = [np.linalg.norm(preds[i, -1] - gt[-1]) for i in sel]
            assert ade == pytest.approx(min(ades), abs=1e-9)
            assert fde == pytest.approx(min(fdes), abs=1e-9)
            assert miss == (min(fdes) > 2.0)

    def test_adding_a_mode_never_hurts(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            k = int(rng.integers(2, 7))
            preds = rng.standard_normal((k, 5, 2))
            gt = rng.standard_normal((5, 2))
            probs = np.full(k, 1.0 / k)
            ade_k, fde_k, _ = metrics.displacement_metrics(preds, probs, gt, k)
            ade_m, fde_m, _ = metrics.displacement_metrics(preds[:-1], probs[:-1] / probs[:-1].sum(), gt, k - 1)
            assert ade_k <= ade_m + 1e-12
            assert fde_k <= fde_m + 1e-12

    def test_translation_invariance(self):
        rng = np.random.default_rng(3)
        preds = rng.standard_normal((4, 6, 2))
        gt = rng.standard_normal((6, 2))
        probs = np.array([0.4, 0.3, 0.2, 0.1])
        shift = np.array([123.0, -77.0])
        a1 = metrics.displacement_metrics(preds, probs, gt, 4)
        a2 = metrics.displacement_metrics(preds + shift, probs, gt + shift, 4)
        assert a1[0] == pytest.approx(a2[0], abs=1e-9)
        assert a1[1] == pytest.approx(a2[1], abs=1e-9)
        b1 = metrics.brier_min_fde(preds, probs, gt, 4)
        b2 = metrics.brier_min_fde(preds + shift, probs, gt + shift, 4)
        assert b1 == pytest.approx(b2, abs=1e-9)


class TestBrierMinFde:
    def test_perfect_endpoint_full_confidence(self):
        gt = np.zeros((5, 2))
        assert metrics.brier_min_fde(np.zeros((1, 5, 2)), [1.0], gt, 1) == 0.0

    def test_perfect_endpoint_half_confidence(self):
        gt = np.zeros((5, 2))
        preds = np.zeros((2, 5, 2))
        preds[1] += 9.0
        assert metrics.brier_min_fde(preds, [0.5, 0.5], gt, 2) == pytest.approx(0.25)

    def test_brier_at_least_min_fde(self):
        rng = np.random.default_rng(4)
        for _ in range(60):
            k = int(rng.integers(1, 7))
            preds = rng.standard_normal((k, 4, 2))
            gt = rng.standard_normal((4, 2))
            probs = rng.random(k)
            probs /= probs.sum()
            b = metrics.brier_min_fde(preds, probs, gt, k)
            _, fde, _ = metrics.displacement_metrics(preds, probs, gt, k)
            assert b >= fde - 1e-12


class TestPdmComposite:
    def test_all_ones(self):
        s = metrics.PdmSubscores(1, 1, 1, 1, 1)
        assert metrics.pdm_composite(s) == pytest.approx(1.0)

    def test_progress_only_degraded(self):
        s = metrics.PdmSubscores(1, 1, 1, 1, 0.8)
        assert metrics.pdm_composite(s) == pytest.approx(11.0 / 12.0)

    def test_collision_gates_to_zero(self):
        s = metrics.PdmSubscores(0, 1, 1, 1, 1)
        assert metrics.pdm_composite(s) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="subscore"):
            metrics.PdmSubscores(1.2, 1, 1, 1, 1)

    def test_random_tuples_match_direct_substitution(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            nc, dac, ttc, cf, ep = rng.random(5)
            s = metrics.PdmSubscores(nc, dac, ttc, cf, ep)
            expected = nc * dac * ((5 * ep + 5 * ttc + 2 * cf) / 12)
            assert metrics.pdm_composite(s) == pytest.approx(expected, abs=1e-12)


class TestMetricReport:
    def _fill(self, report, n=10, seed=0):
        rng = np.random.default_rng(seed)
        for _ in range(n):
            gt = rng.standard_normal((6, 2))
            preds = rng.standard_normal((4, 6, 2))
            probs = rng.random(4)
            probs /= probs.sum()
            report.add_sample({"refined": (preds, probs)}, gt)
        return report

    def test_aggregate_is_mean_of_second_pass(self):
        report = self._fill(metrics.MetricReport(ks=(1, 4)))
        rng = np.random.default_rng(0)
        acc = []
        for _ in range(10):
            gt = rng.standard_normal((6, 2))
            preds = rng.standard_normal((4, 6, 2))
            probs = rng.random(4)
            probs /= probs.sum()
            acc.append(metrics.displacement_metrics(preds, probs, gt, 4)[0])
        assert report.means()["refined.minADE_4"] == pytest.approx(np.mean(acc), abs=1e-12)

    def test_report_file_round_trips(self, tmp_path):
        report = self._fill(metrics.MetricReport(ks=(1, 4)))
        path = tmp_path / "report.txt"
        metrics.write_report(path, report)
        back = metrics.parse_report(path)
        assert back["samples"] == report.samples
        for key, val in report.means().items():
            assert back[key] == pytest.approx(val, rel=1e-8)

    def test_minfde_nonincreasing_in_k(self):
        report = self._fill(metrics.MetricReport(ks=(1, 2, 4)), n=30, seed=2)
        m = report.means()
        assert m["refined.minFDE_4"] <= m["refined.minFDE_2"] <= m["refined.minFDE_1"]

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            metrics.MetricReport().means()
