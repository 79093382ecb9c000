import numpy as np
import pytest

from fedpal.model import Cone, eval_aggregate_objective
from fedpal.problems import (
    LabeledDataset,
    LogisticMeanLoss,
    build_fairness_problem,
    build_np_problem,
    generate_lcqp,
    lcqp_oracle,
    lcqp_problem,
    load_csv,
    load_lcqp,
    partition_stratified,
    save_lcqp,
    sigmoid,
    softplus,
    synthetic_fairness_dataset,
    synthetic_np_dataset,
    unit_sphere,
)

from conftest import finite_difference_gradient, relative_error


def tiny_dataset(rng, n0=12, n1=8, dim=3, subgroups=False):
    X = rng.standard_normal((n0 + n1, dim))
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    sub = rng.integers(0, 2, size=n0 + n1) if subgroups else None
    return LabeledDataset(X, y, sub)


class TestLogistic:
    def test_loss_at_zero_is_log_two(self, rng):
        X = rng.standard_normal((7, 4))
        for y in (np.zeros(7), np.ones(7)):
            loss = LogisticMeanLoss(X, y)
            assert loss.value(np.zeros(4)) == pytest.approx(np.log(2.0))

    def test_gradient_formula_and_finite_differences(self, rng):
        X = rng.standard_normal((9, 4))
        y = rng.integers(0, 2, size=9).astype(float)
        loss = LogisticMeanLoss(X, y)
        w = rng.standard_normal(4)
        z = X @ w
        direct = X.T @ (sigmoid(z) - y) / 9
        assert relative_error(loss.gradient(w), direct) <= 1e-12
        fd = finite_difference_gradient(loss.value, w)
        assert relative_error(loss.gradient(w), fd) <= 1e-4

    def test_overflow_safety_at_extreme_margins(self):
        X = np.array([[1.0], [-1.0]])
        y = np.array([1.0, 0.0])
        loss = LogisticMeanLoss(X, y)
        for scale in (1e3, -1e3):
            w = np.array([scale])
            assert np.isfinite(loss.value(w))
            assert np.all(np.isfinite(loss.gradient(w)))
        assert np.isfinite(softplus(np.array([1e3]))).all()


class TestPartition:
    def test_even_split_two_per_class(self, rng):
        ds = tiny_dataset(rng, n0=10, n1=10)
        folds = partition_stratified(ds, 5, seed=0)
        for fold in folds:
            assert int(np.sum(fold.labels == 0)) == 2
            assert int(np.sum(fold.labels == 1)) == 2

    def test_single_fold_is_identity(self, rng):
        ds = tiny_dataset(rng)
        (fold,) = partition_stratified(ds, 1, seed=3)
        assert np.array_equal(np.sort(fold.features, axis=0), np.sort(ds.features, axis=0))

    def test_union_preserves_multiset(self, rng):
        ds = tiny_dataset(rng, n0=13, n1=9)
        folds = partition_stratified(ds, 4, seed=1)
        merged = np.vstack([f.features for f in folds])
        key = lambda M: M[np.lexsort(M.T)]
        assert np.allclose(key(merged), key(ds.features))

    def test_deterministic_and_seed_sensitive(self, rng):
        ds = tiny_dataset(rng, n0=20, n1=15)
        a = partition_stratified(ds, 3, seed=7)
        b = partition_stratified(ds, 3, seed=7)
        c = partition_stratified(ds, 3, seed=8)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))
        assert any(not np.array_equal(x.features, y.features) for x, y in zip(a, c))

    def test_too_few_samples_per_class(self, rng):
        ds = tiny_dataset(rng, n0=3, n1=2)
        with pytest.raises(ValueError, match="fewer than"):
            partition_stratified(ds, 4, seed=0)


class TestNpBuilder:
    def test_structure_and_threshold(self, rng):
        ds = tiny_dataset(rng)
        p = build_np_problem([ds, ds], threshold=0.2)
        assert p.n == 2
        assert p.server_constraint.size == 0
        assert p.convex
        w0 = np.zeros(ds.dim)
        # constraint row = class-1 mean loss - r = log2 - 0.2 at w = 0
        for c in p.clients:
            assert c.constraint.values(w0)[0] == pytest.approx(np.log(2.0) - 0.2)
            assert c.constraint.cone is Cone.NONNEGATIVE_ORTHANT
        # objective = (1/n) sum of class-0 mean losses = log2 at w = 0
        assert eval_aggregate_objective(p, w0) == pytest.approx(np.log(2.0))

    def test_missing_class_is_hard_error(self, rng):
        X = rng.standard_normal((5, 3))
        ds = LabeledDataset(X, np.zeros(5, dtype=int))
        with pytest.raises(ValueError, match="missing"):
            build_np_problem([ds])

    def test_constraint_gradient_finite_differences(self, rng):
        ds = tiny_dataset(rng)
        p = build_np_problem([ds])
        block = p.clients[0].constraint
        for _ in range(50):
            w = rng.standard_normal(ds.dim)
            fd = finite_difference_gradient(lambda v: block.values(v)[0], w)
            assert relative_error(block.jacobian_t(w)[:, 0], fd) <= 1e-4


class TestFairnessBuilder:
    def test_identical_subgroups_give_slack_r(self, rng):
        X = rng.standard_normal((6, 3))
        y = rng.integers(0, 2, size=6)
        feats = np.vstack([X, X])
        labels = np.concatenate([y, y])
        tags = np.concatenate([np.zeros(6, dtype=int), np.ones(6, dtype=int)])
        ds = LabeledDataset(feats, labels, tags)
        p = build_fairness_problem([ds], ds, threshold=0.1)
        w = rng.standard_normal(3)
        vals = p.clients[0].constraint.values(w)
        assert vals == pytest.approx([-0.1, -0.1])

    def test_antisymmetry_under_subgroup_swap(self, rng):
        ds = tiny_dataset(rng, subgroups=True)
        swapped = LabeledDataset(ds.features, ds.labels, 1 - ds.subgroup)
        p1 = build_fairness_problem([ds], ds)
        p2 = build_fairness_problem([swapped], swapped)
        w = rng.standard_normal(ds.dim)
        v1 = p1.clients[0].constraint.values(w)
        v2 = p2.clients[0].constraint.values(w)
        assert v1[0] == pytest.approx(v2[1])
        assert v1[1] == pytest.approx(v2[0])

    def test_flagged_nonconvex_with_server_rows(self, rng):
        ds = tiny_dataset(rng, subgroups=True)
        p = build_fairness_problem([ds, ds], ds, threshold=0.1)
        assert not p.convex
        assert p.server_constraint.size == 2

    def test_missing_subgroup_is_hard_error(self, rng):
        X = rng.standard_normal((6, 3))
        ds = LabeledDataset(X, rng.integers(0, 2, size=6), np.zeros(6, dtype=int))
        with pytest.raises(ValueError, match="subgroup"):
            build_fairness_problem([ds], ds)

    def test_disparity_gradients_finite_differences(self, rng):
        ds = tiny_dataset(rng, n0=15, n1=15, subgroups=True)
        p = build_fairness_problem([ds], ds)
        block = p.clients[0].constraint
        for _ in range(50):
            w = rng.standard_normal(ds.dim)
            J = block.jacobian_t(w)
            for j in range(2):
                fd = finite_difference_gradient(lambda v, j=j: block.values(v)[j], w)
                assert relative_error(J[:, j], fd) <= 1e-4


class TestLcqp:
    def test_generated_eigenvalues_in_band(self):
        inst = generate_lcqp(12, 3, 2, seed=4)
        for A in inst.A:
            eigs = np.linalg.eigvalsh(A)
            assert eigs.min() >= 0.5 - 1e-10
            assert eigs.max() <= 1.0 + 1e-10

    def test_sphere_vectors_are_unit(self):
        inst = generate_lcqp(10, 2, 3, seed=5)
        for v in inst.b + inst.d:
            assert abs(np.linalg.norm(v) - 1.0) <= 1e-12

    def test_constraint_entries_have_variance_one_over_d(self):
        d = 200
        inst = generate_lcqp(d, 4, 100, seed=6)
        entries = np.concatenate([C.ravel() for C in inst.C])
        assert entries.size >= 1e5
        assert abs(entries.var() - 1.0 / d) <= 0.05 / d

    def test_deterministic_per_seed(self):
        a = generate_lcqp(6, 2, 1, seed=3)
        b = generate_lcqp(6, 2, 1, seed=3)
        c = generate_lcqp(6, 2, 1, seed=4)
        assert np.array_equal(a.A[0], b.A[0]) and np.array_equal(a.d[0], b.d[0])
        assert not np.array_equal(a.A[0], c.A[0])

    def test_save_load_roundtrip(self, tmp_path):
        inst = generate_lcqp(5, 2, 2, seed=11)
        path = tmp_path / "inst.npz"
        save_lcqp(inst, path)
        back = load_lcqp(path)
        assert back.dim == inst.dim and back.seed == inst.seed
        assert all(np.array_equal(x, y) for x, y in zip(back.A, inst.A))
        assert all(np.array_equal(x, y) for x, y in zip(back.C, inst.C))


class TestLcqpOracle:
    def test_projection_onto_line(self):
        from fedpal.problems import LcqpInstance

        # min ||w||^2/2 s.t. w1 + w2 = 1 (empty server block)
        inst = LcqpInstance(
            dim=2, m_tilde=1, seed=0,
            A=[np.eye(2)], b=[np.zeros(2)],
            C=[np.zeros((0, 2)), np.array([[1.0, 1.0]])],
            d=[np.zeros(0), np.array([-1.0])],
        )
        w, mu = lcqp_oracle(inst)
        assert w == pytest.approx([0.5, 0.5])

    def test_one_dimensional_kkt_pair(self):
        from fedpal.problems import LcqpInstance

        inst = LcqpInstance(
            dim=1, m_tilde=1, seed=0,
            A=[np.eye(1)], b=[np.zeros(1)],
            C=[np.array([[1.0]])], d=[np.array([-1.0])],
        )
        w, mu = lcqp_oracle(inst)
        assert w[0] == pytest.approx(1.0)
        assert mu.blocks[0][0] == pytest.approx(-1.0)

    def test_random_instance_residuals(self):
        inst = generate_lcqp(20, 3, 2, seed=8)
        w, mu = lcqp_oracle(inst)
        C = np.vstack(inst.C)
        dvec = np.concatenate(inst.d)
        assert np.max(np.abs(C @ w + dvec)) <= 1e-9
        stat = np.sum(inst.A, axis=0) @ w + np.sum(inst.b, axis=0) + C.T @ mu.stacked()
        assert np.max(np.abs(stat)) <= 1e-9

    def test_rank_deficiency_reported(self):
        inst = generate_lcqp(6, 1, 1, seed=9)
        inst.C[0] = inst.C[1].copy()  # duplicate rows across parties
        inst.d[0] = inst.d[1].copy()
        with pytest.raises(ValueError, match="rank"):
            lcqp_oracle(inst)


class TestCsv:
    def test_roundtrip_with_subgroups(self, tmp_path, rng):
        path = tmp_path / "data.csv"
        path.write_text(
            "f1,f2,label,group\n0.5,1.5,0,1\n-0.25,2.0,1,0\n3.0,-1.0,1,1\n",
            encoding="utf-8",
        )
        ds = load_csv(path, label_column="label", subgroup_column="group")
        assert ds.n_samples == 3 and ds.dim == 2
        assert ds.labels.tolist() == [0, 1, 1]
        assert ds.subgroup.tolist() == [1, 0, 1]
        assert ds.features[1, 0] == pytest.approx(-0.25)

    def test_missing_value_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f1,label\n1.0,0\n,1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="missing value"):
            load_csv(path)

    def test_unknown_label_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f1,f2\n1.0,0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="label"):
            load_csv(path, label_column="label")


class TestSyntheticDatasets:
    def test_np_surrogate_shape_and_determinism(self):
        a = synthetic_np_dataset()
        b = synthetic_np_dataset()
        assert a.n_samples == 695 and a.dim == 20
        assert int(np.sum(a.labels == 0)) == 455 and int(np.sum(a.labels == 1)) == 240
        assert np.array_equal(a.features, b.features)

    def test_fairness_surrogate_has_both_subgroups(self):
        train, server = synthetic_fairness_dataset()
        for ds in (train, server):
            assert set(np.unique(ds.subgroup)) == {0, 1}
            assert set(np.unique(ds.labels)) == {0, 1}
        assert train.dim == 39

    def test_unit_sphere_norm(self, rng):
        v = unit_sphere(rng, 17)
        assert abs(np.linalg.norm(v) - 1.0) <= 1e-12
