"""Monte Carlo evaluation suite over a held-out dataset: function accuracy,
Jacobian (H^1 semi-norm) accuracy, misfit-gradient accuracy, and full and
reduced Gauss-Newton Hessian accuracies.

All accuracies take the form 1 - sqrt(mean relative squared error) and may
be negative when the surrogate is worse than predicting zero.  For
reduced-basis models the Frobenius residuals are expanded through the
stored SVD factors, so no d_Q x d_M or d_M x d_M matrix is formed.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netop import OperatorModel, forward, full_space_jacobian, parametric_jacobian


@dataclass
class EvalReport:
    """Per-metric accuracies plus per-sample relative-error arrays."""

    accuracies: dict = field(default_factory=dict)
    per_sample: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    warnings: dict = field(default_factory=dict)

    def save(self, dirpath):
        dirpath = Path(dirpath)
        dirpath.mkdir(parents=True, exist_ok=True)
        payload = {"accuracies": self.accuracies, "config": self.config,
                   "warnings": self.warnings}
        with open(dirpath / "report.json", "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
            f.write("\n")
        for name, values in self.per_sample.items():
            with open(dirpath / f"{name}.csv", "w", newline="",
                      encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["sample", "relative_squared_error"])
                for i, v in enumerate(values):
                    writer.writerow([i, repr(float(v))])


def _predict(model, M):
    if isinstance(model, OperatorModel):
        return forward(model, M)
    return model.predict(M)


def _jac_full(model, m):
    if isinstance(model, OperatorModel):
        return full_space_jacobian(model, m)
    return model.jacobian(m)


def _accuracy(ratios):
    return 1.0 - float(np.sqrt(np.mean(ratios)))


def l2_accuracy(model, test_ds):
    """1 - sqrt(mean ||q - f||^2 / ||q||^2); zero-norm samples are skipped."""
    preds = _predict(model, test_ds.m)
    q_norm2 = np.sum(test_ds.q**2, axis=1)
    keep = q_norm2 > 0
    err2 = np.sum((test_ds.q - preds) ** 2, axis=1)
    ratios = err2[keep] / q_norm2[keep]
    return _accuracy(ratios), ratios, int(np.sum(~keep))


def _h1_sample_error2(model, test_ds, i, factored):
    U, s, V = test_ds.jac_u[i], test_ds.jac_sigma[i], test_ds.jac_v[i]
    true_norm2 = float(np.sum(s**2))
    if factored:
        # ||USV^T - Phi J Psi^T||^2 expanded through the factors.
        bases = model.bases
        J = parametric_jacobian(model, test_ds.m[i])
        mid = (U.T @ bases.phi) @ J @ (bases.psi.T @ V)
        cross = float(np.sum(s * np.diag(mid)))
        err2 = true_norm2 - 2.0 * cross + float(np.sum(J**2))
        # clamp tiny negative round-off
        return max(err2, 0.0), true_norm2
    Jw = _jac_full(model, test_ds.m[i])
    err2 = float(np.sum(((U * s) @ V.T - Jw) ** 2))
    return err2, true_norm2


def h1_seminorm_accuracy(model, test_ds, factored=None):
    """1 - sqrt(mean ||J_true - J_model||_F^2 / ||J_true||_F^2)."""
    if factored is None:
        factored = isinstance(model, OperatorModel) \
            and model.kind == "reduced_basis"
    ratios, skipped = [], 0
    for i in range(test_ds.n_samples):
        err2, true2 = _h1_sample_error2(model, test_ds, i, factored)
        if true2 == 0.0:
            skipped += 1
            continue
        ratios.append(err2 / true2)
    return _accuracy(np.array(ratios)), np.array(ratios), skipped


def misfit_gradient(jac, q_pred, d, noise_var):
    """Inverse-problem misfit gradient J^T Gamma^{-1} (q_pred - d).

    ``jac`` is a TruncatedJacobian or a dense matrix; ``noise_var`` the
    diagonal of the (positive) noise covariance, scalar or vector.
    """
    noise_var = np.asarray(noise_var, dtype=float)
    if np.any(noise_var <= 0):
        raise ValueError("noise variances must be positive")
    weighted = (np.asarray(q_pred) - np.asarray(d)) / noise_var
    if hasattr(jac, "sigma"):
        return jac.V @ (jac.sigma * (jac.U.T @ weighted))
    return np.asarray(jac).T @ weighted


def noise_std(test_ds, noise_pct=0.01):
    """1%-of-signal noise scale: pct * RMS over the test set of |q|/sqrt(d_Q)."""
    rms = float(np.sqrt(np.mean(np.sum(test_ds.q**2, axis=1) / test_ds.d_q)))
    return noise_pct * rms


def gradient_accuracy(model, test_ds, noise_pct=0.01, seed=0, n_misfit=4):
    """Misfit-gradient accuracy averaged over synthetic noisy data draws.

    For each test sample, d = q + eta with eta ~ N(0, (noise_pct * RMS)^2 I);
    the true gradient uses the stored Jacobian SVD, the predicted one the
    model's values and Jacobian.
    """
    std = noise_std(test_ds, noise_pct)
    rng = np.random.default_rng(seed)
    preds = _predict(model, test_ds.m)
    ratios, skipped = [], 0
    for i in range(test_ds.n_samples):
        jac_true = test_ds.jacobian(i)
        jac_model = _jac_full(model, test_ds.m[i])
        for _ in range(n_misfit):
            d = test_ds.q[i] + std * rng.standard_normal(test_ds.d_q)
            g_true = misfit_gradient(jac_true, test_ds.q[i], d, std**2)
            g_pred = misfit_gradient(jac_model, preds[i], d, std**2)
            denom = float(np.sum(g_true**2))
            if denom == 0.0:
                skipped += 1
                continue
            ratios.append(float(np.sum((g_true - g_pred) ** 2)) / denom)
    return _accuracy(np.array(ratios)), np.array(ratios), skipped


def _gn_sample_errors(model, test_ds, i):
    """(full_err2, full_norm2, red_err2, red_norm2) for one sample."""
    U, s, V = test_ds.jac_u[i], test_ds.jac_sigma[i], test_ds.jac_v[i]
    full_norm2 = float(np.sum(s**4))
    red_norm2 = full_norm2  # V^T (V S^2 V^T) V = S^2
    if isinstance(model, OperatorModel) and model.kind == "reduced_basis":
        bases = model.bases
        J = parametric_jacobian(model, test_ds.m[i])
        K = J.T @ J  # rbar_M x rbar_M
        P = V.T @ bases.psi  # r x rbar_M
        cross = float(np.sum((s[:, None] ** 2 * P) * (P @ K)))
        full_err2 = full_norm2 - 2.0 * cross + float(np.sum(K**2))
        red_model = P @ K @ P.T
        red_err2 = float(np.sum((np.diag(s**2) - red_model) ** 2))
    else:
        Jw = _jac_full(model, test_ds.m[i])
        H_true = (V * s**2) @ V.T
        H_model = Jw.T @ Jw
        full_err2 = float(np.sum((H_true - H_model) ** 2))
        red_model = V.T @ H_model @ V
        red_err2 = float(np.sum((np.diag(s**2) - red_model) ** 2))
    return max(full_err2, 0.0), full_norm2, red_err2, red_norm2


def gauss_newton_accuracies(model, test_ds):
    """Full and V_r-reduced Gauss-Newton Hessian accuracies."""
    full_ratios, red_ratios, skipped = [], [], 0
    for i in range(test_ds.n_samples):
        fe2, fn2, re2, rn2 = _gn_sample_errors(model, test_ds, i)
        if fn2 == 0.0:
            skipped += 1
            continue
        full_ratios.append(fe2 / fn2)
        red_ratios.append(re2 / rn2)
    return (_accuracy(np.array(full_ratios)), _accuracy(np.array(red_ratios)),
            np.array(full_ratios), np.array(red_ratios), skipped)


def truncation_error_bound(jac_true, jac, model_jac):
    """Both sides of the truncated-SVD Jacobian error bound (diagnostic).

    ``jac_true`` is the dense true Jacobian, ``jac`` its stored rank-r SVD,
    ``model_jac`` the dense model Jacobian.  Returns (lhs, rhs) with
    lhs = ||J_true - J_model||_F^2 and rhs the five-term sum of the
    truncated residual, the trailing singular-value energy, and the model's
    three complement-space norms.
    """
    U, s, V = jac.U, jac.sigma, jac.V
    Jw = np.asarray(model_jac, dtype=float)
    jac_true = np.asarray(jac_true, dtype=float)
    lhs = float(np.sum((jac_true - Jw) ** 2))
    term_tail = float(np.sum((jac_true - (U * s) @ V.T) ** 2))
    PU = U @ (U.T @ Jw)
    PV = (Jw @ V) @ V.T
    term_trunc = float(np.sum((np.diag(s) - U.T @ Jw @ V) ** 2))
    term_nn = float(np.sum((Jw - PU - PV + U @ (U.T @ Jw @ V) @ V.T) ** 2))
    term_left = float(np.sum(((Jw - PU) @ V) ** 2))
    term_right = float(np.sum((U.T @ (Jw - PV)) ** 2))
    rhs = term_trunc + term_tail + term_nn + term_left + term_right
    return lhs, rhs


def evaluate(model, test_ds, metrics=("l2", "h1", "grad", "gn", "rgn"),
             noise_pct=0.01, seed=0, n_misfit=4, config=None):
    """Run the selected metrics and collect them into an EvalReport."""
    report = EvalReport(config=dict(config or {}))
    report.config.update({"noise_pct": noise_pct, "noise_seed": seed,
                          "n_misfit": n_misfit,
                          "noise_std": noise_std(test_ds, noise_pct)})
    metrics = list(metrics)
    if "l2" in metrics:
        acc, ratios, skipped = l2_accuracy(model, test_ds)
        report.accuracies["l2"] = acc
        report.per_sample["l2"] = ratios
        report.warnings["l2_skipped"] = skipped
    if "h1" in metrics:
        acc, ratios, skipped = h1_seminorm_accuracy(model, test_ds)
        report.accuracies["h1"] = acc
        report.per_sample["h1"] = ratios
        report.warnings["h1_skipped"] = skipped
    if "grad" in metrics:
        acc, ratios, skipped = gradient_accuracy(
            model, test_ds, noise_pct=noise_pct, seed=seed, n_misfit=n_misfit)
        report.accuracies["grad"] = acc
        report.per_sample["grad"] = ratios
        report.warnings["grad_skipped"] = skipped
    if "gn" in metrics or "rgn" in metrics:
        gn, rgn, gn_ratios, rgn_ratios, skipped = \
            gauss_newton_accuracies(model, test_ds)
        if "gn" in metrics:
            report.accuracies["gn"] = gn
            report.per_sample["gn"] = gn_ratios
        if "rgn" in metrics:
            report.accuracies["rgn"] = rgn
            report.per_sample["rgn"] = rgn_ratios
        report.warnings["gn_skipped"] = skipped
    return report
