"""Feed-forward neural operator with exact parametric Jacobians and
hand-derived weight gradients of Jacobian-penalty losses (double
backpropagation over a forward-built tape; no autodiff framework).

Two wrappings of the same latent MLP:

* generic   - the raw MLP maps d_M -> d_Q;
* reduced_basis - f(m) = Phi phi(Psi^T m) + b with frozen orthonormal
  bases, whose native Jacobian lives in the latent r_Q x r_M space.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from . import io
from .bases import ReducedBasisPair


# --- activations -------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


_ACTIVATIONS = {
    # value, first derivative, second derivative
    "softplus": (_softplus, expit, lambda x: expit(x) * (1.0 - expit(x))),
    "linear": (lambda x: x,
               lambda x: np.ones_like(x),
               lambda x: np.zeros_like(x)),
}


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths (input, hidden..., output) and per-layer activations."""

    widths: tuple
    activations: tuple
    init_seed: int = 0

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least one layer")
        if any(w < 1 for w in self.widths):
            raise ValueError("widths must be positive")
        if len(self.activations) != self.num_layers:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def dense(cls, widths, hidden="softplus", init_seed=0):
        """Hidden layers use ``hidden`` activation; the output layer is linear."""
        widths = tuple(int(w) for w in widths)
        acts = (hidden,) * (len(widths) - 2) + ("linear",)
        return cls(widths=widths, activations=acts, init_seed=init_seed)

    @property
    def num_layers(self):
        return len(self.widths) - 1

    @property
    def d_in(self):
        return self.widths[0]

    @property
    def d_out(self):
        return self.widths[-1]

    @property
    def d_w(self):
        return sum((self.widths[l + 1] * self.widths[l] + self.widths[l + 1])
                   for l in range(self.num_layers))


class NetworkWeights:
    """All trainable parameters as one flat float64 vector plus layer views."""

    def __init__(self, spec, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (spec.d_w,):
            raise ValueError(f"flat length {flat.shape} != d_w = {spec.d_w}")
        self.spec = spec
        self.flat = flat

    @classmethod
    def zeros(cls, spec):
        return cls(spec, np.zeros(spec.d_w))

    @classmethod
    def init(cls, spec, seed=None):
        """Per-layer Gaussian init with variance 2 / (fan_in + fan_out)."""
        rng = np.random.default_rng(spec.init_seed if seed is None else seed)
        parts = []
        for l in range(spec.num_layers):
            fan_in, fan_out = spec.widths[l], spec.widths[l + 1]
            std = np.sqrt(2.0 / (fan_in + fan_out))
            parts.append(std * rng.standard_normal(fan_out * fan_in))
            parts.append(np.zeros(fan_out))
        return cls(spec, np.concatenate(parts))

    @classmethod
    def from_layers(cls, spec, layers):
        parts = []
        for W, b in layers:
            parts.append(np.asarray(W, dtype=float).ravel())
            parts.append(np.asarray(b, dtype=float).ravel())
        return cls(spec, np.concatenate(parts))

    def layers(self):
        """List of (W_l, b_l) views into the flat vector."""
        out = []
        offset = 0
        for l in range(self.spec.num_layers):
            fi, fo = self.spec.widths[l], self.spec.widths[l + 1]
            W = self.flat[offset:offset + fo * fi].reshape(fo, fi)
            offset += fo * fi
            b = self.flat[offset:offset + fo]
            offset += fo
            out.append((W, b))
        return out


@dataclass(eq=False)
class OperatorModel:
    """A latent MLP, either raw ("generic") or basis-wrapped ("reduced_basis")."""

    kind: str
    spec: MLPSpec
    weights: NetworkWeights
    bases: ReducedBasisPair = None

    def __post_init__(self):
        if self.kind not in ("generic", "reduced_basis"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "reduced_basis":
            if self.bases is None:
                raise ValueError("reduced_basis model requires bases")
            if self.spec.d_in != self.bases.rank_in \
                    or self.spec.d_out != self.bases.rank_out:
                raise ValueError(
                    f"latent widths ({self.spec.d_in}, {self.spec.d_out}) do "
                    f"not match basis ranks ({self.bases.rank_in}, "
                    f"{self.bases.rank_out})")

    @property
    def d_m(self):
        return self.bases.psi.shape[0] if self.kind == "reduced_basis" \
            else self.spec.d_in

    @property
    def d_q(self):
        return self.bases.phi.shape[0] if self.kind == "reduced_basis" \
            else self.spec.d_out

    def with_weights(self, flat):
        return OperatorModel(kind=self.kind, spec=self.spec,
                             weights=NetworkWeights(self.spec, flat),
                             bases=self.bases)


def _mlp_forward(weights, X):
    """Forward pass with tape: returns (zs, d1s, d2s) lists over layers."""
    spec = weights.spec
    zs = [X]
    d1s, d2s = [], []
    for (W, b), act_name in zip(weights.layers(), spec.activations):
        act, d1, d2 = _ACTIVATIONS[act_name]
        A = zs[-1] @ W.T + b
        zs.append(act(A))
        d1s.append(d1(A))
        d2s.append(d2(A))
    return zs, d1s, d2s


def latent_forward(model, X):
    """Raw MLP evaluation on latent (or generic full-space) inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return _mlp_forward(model.weights, X)[0][-1]


def forward(model, m):
    """Full-space evaluation f(m); accepts a vector or a batch of rows."""
    m = np.asarray(m, dtype=float)
    single = m.ndim == 1
    M = np.atleast_2d(m)
    if M.shape[1] != model.d_m:
        raise ValueError(f"input dim {M.shape[1]} != d_M = {model.d_m}")
    if model.kind == "reduced_basis":
        out = latent_forward(model, M @ model.bases.psi) @ model.bases.phi.T \
            + model.bases.b
    else:
        out = latent_forward(model, M)
    return out[0] if single else out


def _chain_jacobian(layers, d1_rows):
    """Native Jacobian D_L W_L ... D_1 W_1 for one tape sample."""
    J = None
    for (W, _), d1 in zip(layers, d1_rows):
        J = W.copy() if J is None else W @ J
        J *= d1[:, None]
    return J


def parametric_jacobian(model, m):
    """Exact Jacobian of the model at m: latent r_Q x r_M for reduced-basis
    models, d_Q x d_M for generic ones."""
    m = np.asarray(m, dtype=float)
    x = m @ model.bases.psi if model.kind == "reduced_basis" else m
    _, d1s, _ = _mlp_forward(model.weights, x[None, :])
    return _chain_jacobian(model.weights.layers(), [d[0] for d in d1s])


def full_space_jacobian(model, m):
    """d_Q x d_M Jacobian; materializes Phi J Psi^T for reduced models."""
    J = parametric_jacobian(model, m)
    if model.kind == "reduced_basis":
        return model.bases.phi @ J @ model.bases.psi.T
    return J


# --- Jacobian-penalty flop accounting ----------------------------------------

class FlopCounter:
    """Multiply-count for the Jacobian-penalty evaluation path."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


PENALTY_FLOPS = FlopCounter()


def _mm(A, B):
    PENALTY_FLOPS.count += A.shape[0] * A.shape[1] * B.shape[1]
    return A @ B


def _penalty_value(layers, d1_rows, A, B, C, wgt=None):
    """||C - A^T J B||_F^2 (weighted if ``wgt``), J the native Jacobian.

    Evaluated in factored order: B is propagated up through the first half
    of the chain and A^T down through the second half, so the flop count
    scales with the projection ranks rather than with d_Q * d_M.
    """
    L = len(layers)
    mid = L // 2
    Rh = B  # None stands for the identity until the first product
    for l in range(mid):
        W = layers[l][0]
        Rh = d1_rows[l][:, None] * (W if Rh is None else _mm(W, Rh))
    Lh = None if A is None else A.T
    for l in range(L - 1, mid - 1, -1):
        W = layers[l][0]
        Lh = d1_rows[l][:, None] * W if Lh is None \
            else _mm(Lh * d1_rows[l][None, :], W)
    if Lh is None:
        S = Rh
    elif Rh is None:
        S = Lh
    else:
        S = _mm(Lh, Rh)
    E = S - C
    PENALTY_FLOPS.count += E.size
    if wgt is None:
        return E, float(np.sum(E**2))
    return E, float(np.sum(wgt * E**2))


# --- double backpropagation ---------------------------------------------------

def _jacobian_products(layers, d1_rows):
    """Forward products Jpart_l = D_l W_l ... D_1 W_1 and raw R_l = W_l Jpart_{l-1}."""
    n0 = layers[0][0].shape[1]
    Jparts = [np.eye(n0)]
    Rs = []
    for (W, _), d1 in zip(layers, d1_rows):
        R = W @ Jparts[-1]
        Rs.append(R)
        Jparts.append(d1[:, None] * R)
    return Jparts, Rs


def _accumulate_jacobian_grad(layers, zs_rows, d1_rows, d2_rows, M,
                              gWs, gbs, extra_seed=None):
    """Add the weight gradient of <M, J(w)> (+ a plain output seed) in place.

    ``M`` is the adjoint of the native Jacobian (n_L x n_0) or None;
    ``extra_seed`` is a gradient with respect to the network output z_L
    (the value-loss contribution), merged into the same backward sweep.
    """
    L = len(layers)
    seeds = [None] * L
    if M is not None:
        Jparts, Rs = _jacobian_products(layers, d1_rows)
        G = M
        for l in range(L - 1, -1, -1):
            DG = d1_rows[l][:, None] * G
            gWs[l] += DG @ Jparts[l].T
            seeds[l] = d2_rows[l] * np.sum(G * Rs[l], axis=1)
            if l > 0:
                G = layers[l][0].T @ DG
    c = extra_seed if extra_seed is not None else 0.0
    for l in range(L - 1, -1, -1):
        g_a = c * d1_rows[l] if np.ndim(c) else np.zeros(layers[l][0].shape[0])
        if seeds[l] is not None:
            g_a = g_a + seeds[l]
        gbs[l] += g_a
        gWs[l] += np.outer(g_a, zs_rows[l])
        c = layers[l][0].T @ g_a


# --- losses -------------------------------------------------------------------

@dataclass(eq=False)
class Batch:
    """One mini-batch; ``latent`` marks m/q already in reduced coordinates."""

    m: np.ndarray
    q: np.ndarray
    jac_u: np.ndarray = None
    jac_sigma: np.ndarray = None
    jac_v: np.ndarray = None
    jac_r: np.ndarray = None
    latent: bool = False

    @property
    def size(self):
        return self.m.shape[0]


def _ms_target(sigma, ridx, cidx):
    """Subsampled target U_[k]^T (U S V^T) V_[k'] for exact stored factors."""
    return np.where(ridx[:, None] == cidx[None, :],
                    sigma[ridx][:, None], 0.0)


def _ms_weight(r, ridx, cidx, mode):
    """Per-entry rescaling that unbiases the subsampled penalty."""
    k = len(ridx)
    if mode == "independent":
        return np.full((k, k), (r / k) ** 2)
    if k == 1:
        return np.full((1, 1), r / k)
    diag = ridx[:, None] == cidx[None, :]
    return np.where(diag, r / k, (r * (r - 1)) / (k * (k - 1)))


def _penalty_terms(model, batch, cfg, i, ms_idx):
    """(A, B, C, wgt) of the penalty ||C - A^T J B||^2 for sample i."""
    variant = cfg.variant
    if variant == "h1_full":
        if model.kind == "reduced_basis":
            if batch.jac_r is None:
                raise ValueError("h1_full with a reduced model needs jac_r")
            return None, None, batch.jac_r[i], None
        if batch.jac_u is None:
            raise ValueError("h1_full with a generic model needs jac_u/sigma/v")
        dense = (batch.jac_u[i] * batch.jac_sigma[i]) @ batch.jac_v[i].T
        return None, None, dense, None
    if batch.jac_u is None:
        raise ValueError(f"{variant} needs the stored Jacobian SVD factors")
    U, sigma, V = batch.jac_u[i], batch.jac_sigma[i], batch.jac_v[i]
    if variant == "h1_truncated":
        A, B = U, V
        C = np.diag(sigma)
        wgt = None
    elif variant == "h1_truncated_ms":
        if ms_idx is None:
            raise ValueError("h1_truncated_ms needs subsampled indices")
        ridx, cidx = ms_idx
        A, B = U[:, ridx], V[:, cidx]
        C = _ms_target(sigma, ridx, cidx)
        wgt = _ms_weight(sigma.shape[0], ridx, cidx, cfg.ms_mode) \
            if cfg.ms_rescale else None
    else:
        raise ValueError(f"unknown loss variant {variant!r}")
    if model.kind == "reduced_basis":
        A = model.bases.phi.T @ A
        B = model.bases.psi.T @ B
    return A, B, C, wgt


def loss_and_grad(model, batch, cfg, ms_idx=None):
    """Batch-mean loss of the configured formulation and its exact w-gradient.

    ``ms_idx`` is the (row, column) index pair drawn by the trainer for the
    matrix-subsampled variant.
    """
    weights = model.weights
    layers = weights.layers()
    nbatch = batch.size
    reduced = model.kind == "reduced_basis"
    if batch.latent and not reduced:
        raise ValueError("latent batches require a reduced-basis model")
    if reduced and not batch.latent:
        X = batch.m @ model.bases.psi
    else:
        X = batch.m
    if X.shape[1] != weights.spec.d_in:
        raise ValueError(f"input dim {X.shape[1]} != {weights.spec.d_in}")
    zs, d1s, d2s = _mlp_forward(weights, X)
    f_lat = zs[-1]

    if reduced and not batch.latent:
        res = f_lat @ model.bases.phi.T + model.bases.b - batch.q
        seeds = (2.0 / nbatch) * (res @ model.bases.phi)
    else:
        res = f_lat - batch.q
        seeds = (2.0 / nbatch) * res
    loss = float(np.sum(res**2)) / nbatch

    gWs = [np.zeros_like(W) for W, _ in layers]
    gbs = [np.zeros_like(b) for _, b in layers]
    use_penalty = cfg.variant != "l2"
    for i in range(nbatch):
        zs_rows = [z[i] for z in zs]
        d1_rows = [d[i] for d in d1s]
        d2_rows = [d[i] for d in d2s]
        M = None
        if use_penalty:
            A, B, C, wgt = _penalty_terms(model, batch, cfg, i, ms_idx)
            E, pen = _penalty_value(layers, d1_rows, A, B, C, wgt)
            loss += cfg.h1_weight * pen / nbatch
            EM = E if wgt is None else wgt * E
            scale = 2.0 * cfg.h1_weight / nbatch
            M = scale * EM
            if A is not None:
                M = A @ M
            if B is not None:
                M = M @ B.T
        _accumulate_jacobian_grad(layers, zs_rows, d1_rows, d2_rows, M,
                                  gWs, gbs, extra_seed=seeds[i])
    grad = NetworkWeights.from_layers(weights.spec, list(zip(gWs, gbs)))
    return loss, grad.flat


# --- persistence ----------------------------------------------------------------

def save_model(model, dirpath):
    arrays = {"weights": model.weights.flat}
    meta = {
        "object": "operator_model",
        "kind": model.kind,
        "widths": list(model.spec.widths),
        "activations": list(model.spec.activations),
        "init_seed": model.spec.init_seed,
    }
    if model.kind == "reduced_basis":
        arrays.update(Psi=model.bases.psi, Phi=model.bases.phi,
                      b=model.bases.b)
        meta["bases_tag"] = model.bases.tag
    io.save_arrays(dirpath, arrays, meta=meta)


def load_model(dirpath):
    arrays, manifest = io.load_arrays(dirpath)
    if manifest.get("object") != "operator_model":
        raise io.LoadError(f"{dirpath} does not hold an operator model")
    spec = MLPSpec(widths=tuple(manifest["widths"]),
                   activations=tuple(manifest["activations"]),
                   init_seed=manifest.get("init_seed", 0))
    weights = NetworkWeights(spec, arrays["weights"])
    bases = None
    if manifest["kind"] == "reduced_basis":
        bases = ReducedBasisPair(psi=arrays["Psi"], phi=arrays["Phi"],
                                 b=arrays["b"],
                                 tag=manifest.get("bases_tag", "unknown"))
    return OperatorModel(kind=manifest["kind"], spec=spec,
                         weights=weights, bases=bases)
