"""Evaluation metrics against dense brute-force oracles."""

import json

import numpy as np
import pytest

from derivop.bases import ReducedBasisPair
from derivop.datagen import Dataset, generate_dataset
from derivop.linalg import TruncatedJacobian
from derivop.metrics import (
    evaluate,
    gauss_newton_accuracies,
    gradient_accuracy,
    h1_seminorm_accuracy,
    l2_accuracy,
    misfit_gradient,
    noise_std,
    truncation_error_bound,
)
from derivop.models import ToyMap, toy_map
from derivop.netop import (
    MLPSpec,
    NetworkWeights,
    OperatorModel,
    forward,
    full_space_jacobian,
)


class TableModel:
    """Oracle model: answers from lookup tables keyed by the input vector."""

    def __init__(self, values, jacobians):
        self._values = values
        self._jacobians = jacobians

    @staticmethod
    def _key(m):
        return np.asarray(m).tobytes()

    @classmethod
    def exact(cls, ds):
        values = {cls._key(ds.m[i]): ds.q[i] for i in range(ds.n_samples)}
        jacs = {cls._key(ds.m[i]): ds.jacobian(i).as_dense()
                for i in range(ds.n_samples)}
        return cls(values, jacs)

    def predict(self, M):
        M = np.atleast_2d(M)
        return np.stack([self._values[self._key(row)] for row in M])

    def jacobian(self, m):
        return self._jacobians[self._key(m)]


class ZeroModel:
    def __init__(self, d_m, d_q):
        self.d_m, self.d_q = d_m, d_q

    def predict(self, M):
        return np.zeros((np.atleast_2d(M).shape[0], self.d_q))

    def jacobian(self, m):
        return np.zeros((self.d_q, self.d_m))


@pytest.fixture(scope="module")
def toy_ds():
    return generate_dataset(ToyMap.default(), None, 10, rank=5, seed=4)


@pytest.fixture(scope="module")
def net_model():
    spec = MLPSpec.dense((20, 10, 8), init_seed=3)
    return OperatorModel(kind="generic", spec=spec,
                         weights=NetworkWeights.init(spec))


class TestL2Accuracy:
    def test_exact_model_scores_one(self, toy_ds):
        acc, ratios, skipped = l2_accuracy(TableModel.exact(toy_ds), toy_ds)
        assert acc == pytest.approx(1.0)
        assert skipped == 0

    def test_zero_model_scores_zero(self, toy_ds):
        acc, _, _ = l2_accuracy(ZeroModel(toy_ds.d_m, toy_ds.d_q), toy_ds)
        assert acc == pytest.approx(0.0)

    def test_hand_built_two_sample_case(self):
        ds = Dataset(m=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                     q=np.array([[3.0, 4.0], [0.0, 2.0]]),
                     jac_u=np.zeros((2, 2, 1)), jac_sigma=np.zeros((2, 1)),
                     jac_v=np.zeros((2, 3, 1)), meta={})
        preds = np.array([[3.0, 3.0], [1.0, 2.0]])
        model = TableModel({ds.m[i].tobytes(): preds[i] for i in range(2)},
                           {})
        acc, ratios, _ = l2_accuracy(model, ds)
        # per-sample relative squared errors: 1/25 and 1/4
        np.testing.assert_allclose(ratios, [1 / 25, 1 / 4])
        assert acc == pytest.approx(1.0 - np.sqrt((1 / 25 + 1 / 4) / 2))

    def test_zero_norm_samples_skipped(self):
        ds = Dataset(m=np.zeros((2, 3)),
                     q=np.array([[0.0, 0.0], [1.0, 0.0]]),
                     jac_u=np.zeros((2, 2, 1)), jac_sigma=np.zeros((2, 1)),
                     jac_v=np.zeros((2, 3, 1)), meta={})
        acc, ratios, skipped = l2_accuracy(ZeroModel(3, 2), ds)
        assert skipped == 1
        assert len(ratios) == 1


class TestH1Accuracy:
    def test_exact_model_scores_one(self, toy_ds):
        acc, _, _ = h1_seminorm_accuracy(TableModel.exact(toy_ds), toy_ds)
        assert acc == pytest.approx(1.0, abs=1e-7)

    def test_zero_jacobian_scores_zero(self, toy_ds):
        acc, _, _ = h1_seminorm_accuracy(ZeroModel(toy_ds.d_m, toy_ds.d_q),
                                         toy_ds)
        assert acc == pytest.approx(0.0)

    def test_generic_net_matches_dense_oracle(self, toy_ds, net_model):
        acc, ratios, _ = h1_seminorm_accuracy(net_model, toy_ds)
        oracle = []
        for i in range(toy_ds.n_samples):
            true = toy_ds.jacobian(i).as_dense()
            err = true - full_space_jacobian(net_model, toy_ds.m[i])
            oracle.append(np.sum(err**2) / np.sum(true**2))
        np.testing.assert_allclose(ratios, oracle, rtol=1e-10)
        assert acc == pytest.approx(1.0 - np.sqrt(np.mean(oracle)),
                                    rel=1e-10)

    def test_factored_equals_materialized_for_reduced_model(self, toy_ds):
        rng = np.random.default_rng(12)
        psi, _ = np.linalg.qr(rng.standard_normal((toy_ds.d_m, 6)))
        phi, _ = np.linalg.qr(rng.standard_normal((toy_ds.d_q, 5)))
        bases = ReducedBasisPair(psi=psi, phi=phi,
                                 b=rng.standard_normal(toy_ds.d_q))
        spec = MLPSpec.dense((6, 9, 5), init_seed=1)
        model = OperatorModel(kind="reduced_basis", spec=spec,
                              weights=NetworkWeights.init(spec), bases=bases)
        acc_fac, r_fac, _ = h1_seminorm_accuracy(model, toy_ds,
                                                 factored=True)
        acc_mat, r_mat, _ = h1_seminorm_accuracy(model, toy_ds,
                                                 factored=False)
        np.testing.assert_allclose(r_fac, r_mat, rtol=1e-10)
        assert acc_fac == pytest.approx(acc_mat, rel=1e-10)


class TestMisfitGradient:
    def test_zero_residual(self):
        rng = np.random.default_rng(0)
        jac = rng.standard_normal((4, 6))
        d = rng.standard_normal(4)
        np.testing.assert_array_equal(misfit_gradient(jac, d, d, 1.0),
                                      np.zeros(6))

    def test_rank_one_algebra(self):
        u = np.eye(3)[:, [0]]
        v = np.eye(5)[:, [1]]
        jac = TruncatedJacobian(U=u, sigma=np.array([2.0]), V=v)
        rho = 0.7
        g = misfit_gradient(jac, rho * u[:, 0], np.zeros(3), 1.0)
        np.testing.assert_allclose(g, 2.0 * rho * v[:, 0], atol=1e-14)

    def test_matches_fd_of_misfit_through_rd_model(self):
        from derivop.models import (Grid, PriorConfig, RDModel,
                                    jacobian_operator, observe,
                                    sample_prior, solve_state)
        grid = Grid(9)
        model = RDModel(grid=grid)
        prior = PriorConfig(delta=1.0, gamma=0.1, grid=grid)
        rng = np.random.default_rng(1)
        m = sample_prior(prior, rng)
        u = solve_state(model, m)
        q = observe(model, u)
        d = q + 0.05 * rng.standard_normal(model.d_q)
        var = 0.3

        def misfit(mm):
            qq = observe(model, solve_state(model, mm))
            return 0.5 * np.sum((qq - d) ** 2) / var

        op = jacobian_operator(model, m, u)
        g = misfit_gradient(op.as_dense(), q, d, var)
        eps = 1e-6
        v = rng.standard_normal(model.d_m)
        fd = (misfit(m + eps * v) - misfit(m - eps * v)) / (2 * eps)
        assert abs(fd - g @ v) <= 1e-5 * max(1.0, abs(g @ v))

    def test_nonpositive_variance_rejected(self):
        with pytest.raises(ValueError):
            misfit_gradient(np.eye(2), np.ones(2), np.zeros(2), 0.0)


class TestGradientAccuracy:
    def test_exact_model_scores_one(self, toy_ds):
        acc, _, _ = gradient_accuracy(TableModel.exact(toy_ds), toy_ds,
                                      seed=0)
        assert acc == pytest.approx(1.0, abs=1e-6)

    def test_correct_values_zero_jacobian_scores_zero(self, toy_ds):
        exact = TableModel.exact(toy_ds)
        hybrid = TableModel(exact._values,
                            {k: np.zeros((toy_ds.d_q, toy_ds.d_m))
                             for k in exact._jacobians})
        acc, _, _ = gradient_accuracy(hybrid, toy_ds, seed=0)
        assert acc == pytest.approx(0.0, abs=1e-12)

    def test_matches_hand_assembled_dense_quantities(self, toy_ds, net_model):
        seed, n_misfit = 5, 2
        acc, ratios, _ = gradient_accuracy(net_model, toy_ds, seed=seed,
                                           n_misfit=n_misfit)
        std = noise_std(toy_ds)
        rng = np.random.default_rng(seed)
        preds = forward(net_model, toy_ds.m)
        oracle = []
        for i in range(toy_ds.n_samples):
            Jt = toy_ds.jacobian(i).as_dense()
            Jm = full_space_jacobian(net_model, toy_ds.m[i])
            for _ in range(n_misfit):
                d = toy_ds.q[i] + std * rng.standard_normal(toy_ds.d_q)
                gt = Jt.T @ (toy_ds.q[i] - d) / std**2
                gp = Jm.T @ (preds[i] - d) / std**2
                oracle.append(np.sum((gt - gp) ** 2) / np.sum(gt**2))
        np.testing.assert_allclose(ratios, oracle, rtol=1e-12)

    def test_rotation_equivariance(self, toy_ds, net_model):
        # rotating q, d, predictions, and the Jacobians' observation rows
        # leaves every relative gradient error unchanged
        rng = np.random.default_rng(13)
        R, _ = np.linalg.qr(rng.standard_normal((toy_ds.d_q, toy_ds.d_q)))
        std = noise_std(toy_ds)
        preds = forward(net_model, toy_ds.m)
        for i in range(toy_ds.n_samples):
            Jt = toy_ds.jacobian(i).as_dense()
            Jm = full_space_jacobian(net_model, toy_ds.m[i])
            d = toy_ds.q[i] + std * rng.standard_normal(toy_ds.d_q)

            def ratio(q, p, d, Jt, Jm):
                gt = misfit_gradient(Jt, q, d, std**2)
                gp = misfit_gradient(Jm, p, d, std**2)
                return np.sum((gt - gp) ** 2) / np.sum(gt**2)

            base = ratio(toy_ds.q[i], preds[i], d, Jt, Jm)
            rot = ratio(R @ toy_ds.q[i], R @ preds[i], R @ d, R @ Jt, R @ Jm)
            assert rot == pytest.approx(base, rel=1e-8)


class TestGaussNewton:
    def test_exact_model_scores_one(self, toy_ds):
        gn, rgn, _, _, _ = gauss_newton_accuracies(TableModel.exact(toy_ds),
                                                   toy_ds)
        assert gn == pytest.approx(1.0, abs=1e-7)
        assert rgn == pytest.approx(1.0, abs=1e-7)

    def test_zero_model_scores_zero(self, toy_ds):
        gn, rgn, _, _, _ = gauss_newton_accuracies(
            ZeroModel(toy_ds.d_m, toy_ds.d_q), toy_ds)
        assert gn == pytest.approx(0.0)
        assert rgn == pytest.approx(0.0)

    def test_matches_dense_oracle(self, toy_ds, net_model):
        _, _, full_r, red_r, _ = gauss_newton_accuracies(net_model, toy_ds)
        for i in range(toy_ds.n_samples):
            Jt = toy_ds.jacobian(i).as_dense()
            Jm = full_space_jacobian(net_model, toy_ds.m[i])
            Ht, Hm = Jt.T @ Jt, Jm.T @ Jm
            assert full_r[i] == pytest.approx(
                np.sum((Ht - Hm) ** 2) / np.sum(Ht**2), rel=1e-10)
            V = toy_ds.jac_v[i]
            Rt, Rm = V.T @ Ht @ V, V.T @ Hm @ V
            assert red_r[i] == pytest.approx(
                np.sum((Rt - Rm) ** 2) / np.sum(Rt**2), rel=1e-10)

    def test_reduced_model_factored_path_matches_dense(self, toy_ds):
        rng = np.random.default_rng(14)
        psi, _ = np.linalg.qr(rng.standard_normal((toy_ds.d_m, 6)))
        phi, _ = np.linalg.qr(rng.standard_normal((toy_ds.d_q, 5)))
        bases = ReducedBasisPair(psi=psi, phi=phi, b=np.zeros(toy_ds.d_q))
        spec = MLPSpec.dense((6, 7, 5), init_seed=2)
        model = OperatorModel(kind="reduced_basis", spec=spec,
                              weights=NetworkWeights.init(spec), bases=bases)
        _, _, full_r, red_r, _ = gauss_newton_accuracies(model, toy_ds)
        for i in range(toy_ds.n_samples):
            Jt = toy_ds.jacobian(i).as_dense()
            Jm = full_space_jacobian(model, toy_ds.m[i])
            Ht, Hm = Jt.T @ Jt, Jm.T @ Jm
            assert full_r[i] == pytest.approx(
                np.sum((Ht - Hm) ** 2) / np.sum(Ht**2), rel=1e-10)
            V = toy_ds.jac_v[i]
            Rt, Rm = V.T @ Ht @ V, V.T @ Hm @ V
            assert red_r[i] == pytest.approx(
                np.sum((Rt - Rm) ** 2) / np.sum(Rt**2), rel=1e-10)


class TestTruncationBound:
    def test_bound_holds_on_random_instances(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            A = rng.standard_normal((8, 3))
            B = rng.standard_normal((3, 12))
            J = A @ B  # exact rank 3
            u, s, vt = np.linalg.svd(J, full_matrices=False)
            jac = TruncatedJacobian(U=u[:, :3], sigma=s[:3], V=vt[:3].T)
            Jw = rng.standard_normal((8, 12))
            lhs, rhs = truncation_error_bound(J, jac, Jw)
            assert lhs <= rhs + 1e-12 * rhs

    def test_equality_when_model_reproduces_truncation(self):
        rng = np.random.default_rng(16)
        J = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 12))
        u, s, vt = np.linalg.svd(J, full_matrices=False)
        jac = TruncatedJacobian(U=u[:, :3], sigma=s[:3], V=vt[:3].T)
        lhs, rhs = truncation_error_bound(J, jac, jac.as_dense())
        assert lhs <= 1e-20 and rhs <= 1e-20


class TestEvaluate:
    def test_metric_selection_and_report(self, tmp_path, toy_ds, net_model):
        report = evaluate(net_model, toy_ds, metrics=("l2", "gn"),
                          config={"run": "x"})
        assert set(report.accuracies) == {"l2", "gn"}
        report.save(tmp_path / "r")
        payload = json.loads((tmp_path / "r" / "report.json").read_text())
        assert payload["config"]["run"] == "x"
        assert set(payload["accuracies"]) == {"l2", "gn"}
        assert (tmp_path / "r" / "l2.csv").exists()
        assert (tmp_path / "r" / "gn.csv").exists()
        assert not (tmp_path / "r" / "h1.csv").exists()

    def test_order_invariance(self, toy_ds, net_model):
        perm = np.random.default_rng(17).permutation(toy_ds.n_samples)
        shuffled = toy_ds.subset(perm)
        a = evaluate(net_model, toy_ds, metrics=("l2", "h1", "gn", "rgn"))
        b = evaluate(net_model, shuffled, metrics=("l2", "h1", "gn", "rgn"))
        for key in a.accuracies:
            assert a.accuracies[key] == pytest.approx(b.accuracies[key],
                                                      rel=1e-12)

    def test_accuracies_bounded_above_by_one(self, toy_ds, net_model):
        report = evaluate(net_model, toy_ds)
        assert all(v <= 1.0 for v in report.accuracies.values())
