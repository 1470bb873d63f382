from __future__ import annotations

import numpy as np
import pytest

from biopm.config import EvalConfig, ProbeConfig
from biopm.evaluate import (SplitError, _markov_accuracy,
                            _split_bigram_types, data_efficiency_sweep,
                            kmeans_assign, kmeans_fit, make_split_plan,
                            run_probe_protocol, select_vocabulary,
                            VocabularyError)


class TestSplitPlan:
    def test_losocv_for_few_subjects(self):
        plan = make_split_plan([f"s{i}" for i in range(8)])
        assert plan.mode == "losocv"
        assert len(plan.folds) == 8
        for train, test in plan.folds:
            assert len(test) == 1
            assert set(train) | set(test) == {f"s{i}" for i in range(8)}
            assert not set(train) & set(test)

    def test_kfold5_for_many_subjects(self):
        subj = [f"s{i:02d}" for i in range(14)]
        plan = make_split_plan(subj, seed=1)
        assert plan.mode == "kfold5"
        assert len(plan.folds) == 5
        covered = set()
        for train, test in plan.folds:
            assert not set(train) & set(test)
            covered |= set(test)
        assert covered == set(subj)

    def test_deterministic_given_seed(self):
        subj = [f"s{i}" for i in range(20)]
        assert make_split_plan(subj, 3).folds == make_split_plan(subj, 3).folds

    def test_single_subject_rejected(self):
        with pytest.raises(SplitError):
            make_split_plan(["only"])


def _toy_dataset(n_subjects=6, n_per=10, informative=True, seed=0):
    r = np.random.default_rng(seed)
    feats, labels, subjects = [], [], []
    for s in range(n_subjects):
        for k in range(3):
            mu = k * 4.0 if informative else 0.0
            feats.append(r.normal(mu, 0.5, (n_per, 4)))
            labels.extend([k] * n_per)
            subjects.extend([f"s{s}"] * n_per)
    return np.vstack(feats), np.array(labels), np.array(subjects)


class TestProbeProtocol:
    def test_oracle_features_perfect(self):
        x, y, subj = _toy_dataset()
        onehot = np.eye(3)[y]
        plan = make_split_plan(subj)
        res = run_probe_protocol(onehot, y, subj, plan, ProbeConfig(), 3)
        assert res.mean == pytest.approx(1.0)
        assert all(f.macro_f1 == 1.0 for f in res.folds)

    def test_informative_beats_constant(self):
        x, y, subj = _toy_dataset()
        plan = make_split_plan(subj)
        good = run_probe_protocol(x, y, subj, plan, ProbeConfig(), 3)
        const = np.ones((len(y), 2))
        bad = run_probe_protocol(const, y, subj, plan, ProbeConfig(), 3)
        assert good.mean > 0.95
        assert bad.mean < 0.5

    def test_confusions_cover_test_windows(self):
        x, y, subj = _toy_dataset()
        plan = make_split_plan(subj)
        res = run_probe_protocol(x, y, subj, plan, ProbeConfig(), 3)
        for f in res.folds:
            assert f.confusion.sum() == f.n_test_windows


class TestDataEfficiency:
    def test_test_subjects_fixed_and_monotone_trend(self):
        x, y, subj = _toy_dataset(n_subjects=8, seed=1)
        plan = make_split_plan(subj)
        out = data_efficiency_sweep(x, y, subj, plan, (0.25, 1.0),
                                    ProbeConfig(), 3)
        assert set(out) == {0.25, 1.0}
        # full-label result on separable data is near-perfect
        assert out[1.0].mean > 0.9

    def test_fraction_shrinks_training_subjects(self):
        subj = [f"s{i}" for i in range(8)]
        plan = make_split_plan(subj)
        x, y, s = _toy_dataset(n_subjects=8)
        out = data_efficiency_sweep(x, y, s, plan, (0.25,), ProbeConfig(), 3)
        # protocol ran; each fold trains on 2 of 7 subjects internally, which
        # can only be verified indirectly: result exists for every fold
        assert len(out[0.25].folds) >= 1


class TestKmeans:
    def test_deterministic(self):
        r = np.random.default_rng(0)
        x = r.normal(0, 1, (300, 4))
        c1 = kmeans_fit(x, 5, np.random.default_rng(7))
        c2 = kmeans_fit(x, 5, np.random.default_rng(7))
        np.testing.assert_array_equal(c1, c2)

    def test_recovers_separated_clusters(self):
        r = np.random.default_rng(1)
        x = np.vstack([r.normal(c * 10, 0.2, (50, 2)) for c in range(3)])
        centers = kmeans_fit(x, 3, np.random.default_rng(0))
        assign = kmeans_assign(x, centers)
        # each true cluster maps to one k-means cluster
        for c in range(3):
            block = assign[c * 50:(c + 1) * 50]
            assert len(np.unique(block)) == 1
        assert len(np.unique(assign)) == 3

    def test_no_empty_clusters_on_degenerate_data(self):
        r = np.random.default_rng(2)
        x = np.vstack([np.zeros((90, 2)), r.normal(5, 0.1, (10, 2))])
        centers = kmeans_fit(x, 4, np.random.default_rng(0))
        assert np.isfinite(centers).all()
        assert centers.shape == (4, 2)


class TestVocabulary:
    def test_picks_a_k_from_sweep(self):
        r = np.random.default_rng(0)
        x = np.vstack([r.normal(c * 8, 0.3, (40, 3)) for c in range(4)])
        cfg = EvalConfig(k_sweep=(2, 4, 8), silhouette_sample=160,
                         kmeans_sample=160)
        K, sil, centers = select_vocabulary(x, cfg, seed=0)
        assert K == 4          # true structure has 4 well-separated clusters
        assert sil > 0.5
        assert centers.shape == (4, 3)

    def test_too_few_tokens_rejected(self):
        with pytest.raises(VocabularyError):
            select_vocabulary(np.zeros((5, 2)), EvalConfig(k_sweep=(16,)))


class TestBigramMachinery:
    def test_type_split_is_disjoint_and_complete(self):
        types = [(a, b) for a in range(6) for b in range(6)]
        tr, te = _split_bigram_types(types, 0.8, seed=0)
        assert not tr & te
        assert tr | te == set(types)
        assert len(tr) == round(0.8 * 36)

    def test_markov_structurally_zero_on_heldout_types(self):
        # a hit would require the modal train successor of `cur` to equal the
        # test bigram's successor — but then (cur, suc) would be a train
        # type, contradicting the disjoint split; markov must score 0
        types = [(0, 1), (0, 1), (0, 1), (0, 2)]
        nxt = [1, 1, 1, 2]
        assert _markov_accuracy(nxt, types, {(0, 1)}, {(0, 2)}) == 0.0
        assert _markov_accuracy(nxt, types, {(0, 2)}, {(0, 1)}) == 0.0

    def test_markov_nan_when_no_test_instances(self):
        assert np.isnan(_markov_accuracy([1], [(0, 1)], {(0, 1)}, set()))
