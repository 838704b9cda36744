"""LDA dimensionality reduction and two-covariance pLDA backend.

LDA maximizes between-class over within-class scatter; because five emotion
classes give only four Fisher directions, the remaining requested dimensions
are filled with within-class-whitened PCA directions (flagged in metadata).
pLDA models each class as a Gaussian latent mean with between-class
covariance plus within-class observation noise; EM fits both covariances,
and scoring evaluates the exact same-class vs different-class Gaussian
marginal likelihood ratio via a simultaneous diagonalization computed once
per model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .formats import PLD_MAGIC, FormatError, encode_header_blob, read_header_blob, take, write_atomic


class BackendError(Exception):
    """Bad inputs to backend fitting or scoring."""


@dataclass
class BackendConfig:
    lda_target_dim: int = 200
    em_max_iters: int = 50
    em_tol: float = 1e-6          # stop when per-sample log-likelihood gain drops below
    length_normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lda_target_dim < 1 or self.em_max_iters < 1:
            raise ValueError("dimensions and iteration counts must be positive")


@dataclass
class LdaModel:
    mean: np.ndarray          # (D,)
    projection: np.ndarray    # (d_out, D)
    n_fisher: int
    n_filler: int
    class_count: int

    @property
    def out_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def in_dim(self) -> int:
        return self.projection.shape[1]


@dataclass
class PldaModel:
    mean: np.ndarray      # (d,)
    between: np.ndarray   # (d, d) PSD
    within: np.ndarray    # (d, d) PD
    ll_history: list = field(default_factory=list)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.between = np.ascontiguousarray(self.between, dtype=np.float64)
        self.within = np.ascontiguousarray(self.within, dtype=np.float64)
        d = self.mean.shape[0]
        if self.between.shape != (d, d) or self.within.shape != (d, d):
            raise BackendError("covariance shapes do not match mean dimension")
        # simultaneous diagonalization: V' within V = I, V' between V = diag(psi)
        try:
            chol = np.linalg.cholesky(self.within)
        except np.linalg.LinAlgError as exc:
            raise BackendError("within-class covariance is not positive definite") from exc
        half = linalg.solve_triangular(chol, self.between, lower=True)
        whitened = linalg.solve_triangular(chol, half.T, lower=True).T
        psi, rot = np.linalg.eigh((whitened + whitened.T) / 2.0)
        self.psi = np.maximum(psi, 0.0)
        self.transform = linalg.solve_triangular(chol.T, rot, lower=False)  # columns

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def to_latent(self, vectors: np.ndarray) -> np.ndarray:
        """Map (N, d) rows into the diagonalized space."""
        v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if v.shape[1] != self.dim:
            raise BackendError(f"vector dim {v.shape[1]} != model dim {self.dim}")
        if not np.all(np.isfinite(v)):
            raise BackendError("non-finite input vectors")
        return (v - self.mean) @ self.transform


# ---------------------------------------------------------------------------
# LDA
# ---------------------------------------------------------------------------

def _class_stats(x: np.ndarray, labels):
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise BackendError(f"need at least 2 classes, got {len(classes)}")
    groups = {}
    for c in classes:
        rows = x[labels == c]
        if rows.shape[0] < 2:
            raise BackendError(f"class {c!r} has {rows.shape[0]} sample(s); need at least 2")
        groups[c] = rows
    return classes, groups


def scatter_matrices(x: np.ndarray, labels):
    """Within- and between-class scatter (normalized by N) plus the global mean."""
    x = np.asarray(x, dtype=np.float64)
    classes, groups = _class_stats(x, labels)
    n, d = x.shape
    mu = x.mean(axis=0)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for c in classes:
        rows = groups[c]
        cm = rows.mean(axis=0)
        centered = rows - cm
        s_w += centered.T @ centered
        diff = (cm - mu)[:, None]
        s_b += rows.shape[0] * (diff @ diff.T)
    return s_w / n, s_b / n, mu, classes, groups


def regularize(scatter: np.ndarray) -> np.ndarray:
    """Add lambda*I with lambda = 1e-6 * trace / D."""
    d = scatter.shape[0]
    lam = 1e-6 * np.trace(scatter) / d
    return scatter + lam * np.eye(d)


def fit_lda(x: np.ndarray, labels, cfg: BackendConfig | None = None) -> LdaModel:
    """Fisher directions via within-class whitening, PCA filler beyond C-1 dims."""
    cfg = cfg or BackendConfig()
    x = np.asarray(x, dtype=np.float64)
    s_w, s_b, mu, classes, _ = scatter_matrices(x, labels)
    d = x.shape[1]
    s_w_reg = regularize(s_w)
    try:
        chol = np.linalg.cholesky(s_w_reg)
    except np.linalg.LinAlgError as exc:
        raise BackendError("within-class scatter is singular even after regularization") from exc

    half = linalg.solve_triangular(chol, s_b, lower=True)
    whitened_sb = linalg.solve_triangular(chol, half.T, lower=True).T
    evals, evecs = np.linalg.eigh((whitened_sb + whitened_sb.T) / 2.0)
    order = np.argsort(evals)[::-1]
    evecs = evecs[:, order]

    d_out = min(cfg.lda_target_dim, d)
    n_fisher = min(len(classes) - 1, d_out)
    basis = [evecs[:, :n_fisher]]

    n_filler = d_out - n_fisher
    if n_filler > 0:
        whitened = linalg.solve_triangular(chol, (x - mu).T, lower=True).T
        total_cov = whitened.T @ whitened / x.shape[0]
        proj_out = np.eye(d) - basis[0] @ basis[0].T
        residual = proj_out @ total_cov @ proj_out
        fill_vals, fill_vecs = np.linalg.eigh((residual + residual.T) / 2.0)
        basis.append(fill_vecs[:, np.argsort(fill_vals)[::-1][:n_filler]])

    w = np.concatenate(basis, axis=1)  # whitened-space directions, columns
    projection = linalg.solve_triangular(chol.T, w, lower=False).T
    return LdaModel(mean=mu, projection=projection, n_fisher=n_fisher,
                    n_filler=n_filler, class_count=len(classes))


def apply_lda(model: LdaModel, vectors: np.ndarray) -> np.ndarray:
    """Project x -> P (x - mean); accepts a single vector or (N, D) rows."""
    v = np.asarray(vectors, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != model.in_dim:
        raise BackendError(f"vector dim {v.shape[1]} != LDA input dim {model.in_dim}")
    out = (v - model.mean) @ model.projection.T
    return out[0] if single else out


def length_normalize(vectors: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    out = v * (np.sqrt(v.shape[1]) / norms)
    return out[0] if np.asarray(vectors).ndim == 1 else out


# ---------------------------------------------------------------------------
# pLDA: two-covariance EM
# ---------------------------------------------------------------------------

def fit_plda(x: np.ndarray, labels, cfg: BackendConfig | None = None) -> PldaModel:
    """EM for the two-covariance model; log-likelihood is non-decreasing.

    Initialized from the empirical between/within scatter; stops when the
    per-sample likelihood gain falls under cfg.em_tol or at em_max_iters.
    """
    cfg = cfg or BackendConfig()
    x = np.asarray(x, dtype=np.float64)
    classes, groups = _class_stats(x, labels)
    n, d = x.shape
    c_count = len(classes)

    counts = np.array([groups[c].shape[0] for c in classes])
    means = np.stack([groups[c].mean(axis=0) for c in classes])
    s_within = np.zeros((d, d))
    for i, c in enumerate(classes):
        centered = groups[c] - means[i]
        s_within += centered.T @ centered

    m = x.mean(axis=0)
    phi_w = regularize(s_within / n)
    diff = means - m  # one latent draw per class, so the init is unweighted
    phi_b = regularize(diff.T @ diff / c_count)

    ll_history = []
    for _ in range(cfg.em_max_iters):
        ll, y_hat, post_cov = _e_step(means, counts, s_within, m, phi_b, phi_w)
        ll_history.append(ll)
        if len(ll_history) > 1 and (ll - ll_history[-2]) / n < cfg.em_tol:
            break

        m_new = y_hat.mean(axis=0)
        centered_y = y_hat - m_new
        phi_b = (centered_y.T @ centered_y + post_cov.sum(axis=0)) / c_count
        shift = means - y_hat
        phi_w = (
            s_within
            + (shift * counts[:, None]).T @ shift
            + np.tensordot(counts, post_cov, axes=(0, 0))
        ) / n
        m = m_new
        phi_b = (phi_b + phi_b.T) / 2.0
        phi_w = (phi_w + phi_w.T) / 2.0

    model = PldaModel(mean=m, between=_clip_psd(phi_b), within=phi_w)
    model.ll_history = ll_history
    return model


def _e_step(means, counts, s_within, m, phi_b, phi_w):
    """Posterior latent means/covariances per class plus the exact marginal LL."""
    c_count, d = means.shape
    n = int(counts.sum())
    phi_b_inv = _pd_inverse(phi_b)
    phi_w_inv = _pd_inverse(phi_w)
    sign_w, logdet_w = np.linalg.slogdet(phi_w)
    if sign_w <= 0:
        raise BackendError("within-class covariance lost positive definiteness")

    ll = -0.5 * n * d * np.log(2 * np.pi)
    ll -= 0.5 * np.trace(phi_w_inv @ s_within)
    ll -= 0.5 * (n - c_count) * logdet_w

    y_hat = np.empty_like(means)
    post_cov = np.empty((c_count, d, d))
    prior_term = phi_b_inv @ m
    for n_c in np.unique(counts):
        idx = np.flatnonzero(counts == n_c)
        precision = phi_b_inv + n_c * phi_w_inv
        cov = _pd_inverse(precision)
        post_cov[idx] = cov
        rhs = prior_term[None, :] + n_c * (means[idx] @ phi_w_inv.T)
        y_hat[idx] = rhs @ cov.T

        marg = phi_b + phi_w / n_c
        sign_m, logdet_m = np.linalg.slogdet(marg)
        if sign_m <= 0:
            raise BackendError("marginal covariance lost positive definiteness")
        centered = means[idx] - m
        solved = np.linalg.solve(marg, centered.T).T
        quad = np.einsum("ij,ij->i", centered, solved)
        # log|Phi_w + n Phi_b| = log|Phi_b + Phi_w/n| + d log n
        ll -= 0.5 * ((logdet_m + d * np.log(n_c)) * len(idx) + quad.sum())
    return ll, y_hat, post_cov


def _pd_inverse(mat: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky((mat + mat.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise BackendError("matrix not positive definite during EM") from exc
    inv = linalg.cho_solve((chol, True), np.eye(mat.shape[0]))
    return (inv + inv.T) / 2.0


def _clip_psd(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh((mat + mat.T) / 2.0)
    return (evecs * np.maximum(evals, 0.0)) @ evecs.T


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def score_pairs(model: PldaModel, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Same-class vs different-class log-likelihood ratios for paired rows.

    Exact under the model: per diagonalized dimension with between-variance
    psi the same-class pair covariance is [[1+psi, psi], [psi, 1+psi]] and
    the different-class one is diag(1+psi, 1+psi).  Symmetric in (u1, u2).
    """
    e1 = model.to_latent(u1)
    e2 = model.to_latent(u2)
    if e1.shape != e2.shape:
        raise BackendError(f"pair shapes differ: {e1.shape} vs {e2.shape}")
    psi = model.psi
    const = 0.5 * (2.0 * np.log1p(psi) - np.log1p(2.0 * psi))
    coef_sq = -(psi**2) / (2.0 * (1.0 + psi) * (1.0 + 2.0 * psi))
    coef_cross = psi / (1.0 + 2.0 * psi)
    scores = (
        const.sum()
        + (e1**2 + e2**2) @ coef_sq
        + (e1 * e2) @ coef_cross
    )
    return scores


def score_pair(model: PldaModel, u1: np.ndarray, u2: np.ndarray) -> float:
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    if u1.ndim != 1 or u2.ndim != 1:
        raise BackendError("score_pair takes single vectors; use score_pairs for batches")
    return float(score_pairs(model, u1[None, :], u2[None, :])[0])


def identify(model: PldaModel, probe: np.ndarray, enrollments: "dict[str, np.ndarray]"):
    """Score a probe against enrolled classes; returns (scores dict, best label).

    Per class the score is log p(probe | enrollment vectors) - log p(probe),
    computed from the posterior of the class latent given all enrollments.
    Ties break toward the earliest enrolled class.
    """
    if not enrollments:
        raise BackendError("no enrolled classes")
    probe = np.asarray(probe, dtype=np.float64)
    p = model.to_latent(probe)[0]
    psi = model.psi

    labels = list(enrollments.keys())
    scores = np.empty(len(labels))
    for i, label in enumerate(labels):
        vecs = np.atleast_2d(np.asarray(enrollments[label], dtype=np.float64))
        if vecs.shape[0] < 1 or vecs.size == 0:
            raise BackendError(f"class {label!r} has an empty enrollment set")
        if vecs.shape[0] == 1:
            # single enrollment: identical to the pairwise LLR, bit for bit
            scores[i] = score_pairs(model, probe[None, :], vecs)[0]
            continue
        e = model.to_latent(vecs)
        k = e.shape[0]
        post_var = psi / (1.0 + k * psi)
        post_mean = post_var * e.sum(axis=0)
        pred_var = post_var + 1.0
        marg_var = 1.0 + psi
        scores[i] = 0.5 * np.sum(
            np.log(marg_var) - np.log(pred_var)
            + p**2 / marg_var - (p - post_mean) ** 2 / pred_var
        )
    best = labels[int(np.argmax(scores))]
    return dict(zip(labels, scores)), best


# ---------------------------------------------------------------------------
# Backend bundle (LDA + pLDA) and PLD1 serialization
# ---------------------------------------------------------------------------

@dataclass
class BackendModel:
    lda: LdaModel
    plda: PldaModel
    class_labels: list
    config: dict = field(default_factory=dict)

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        out = apply_lda(self.lda, vectors)
        if self.config.get("length_normalize"):
            out = length_normalize(out)
        return out


def fit_backend(x: np.ndarray, labels, cfg: BackendConfig | None = None) -> BackendModel:
    """LDA projection followed by pLDA on the projected vectors."""
    cfg = cfg or BackendConfig()
    lda = fit_lda(x, labels, cfg)
    projected = apply_lda(lda, x)
    if cfg.length_normalize:
        projected = length_normalize(projected)
    plda = fit_plda(projected, labels, cfg)
    classes = sorted(set(np.asarray(labels).tolist()))
    return BackendModel(lda=lda, plda=plda, class_labels=classes,
                        config=dict(vars(cfg)))


def save_backend(path: str, model: BackendModel) -> None:
    header = {
        "in_dim": model.lda.in_dim,
        "lda_dim": model.lda.out_dim,
        "n_fisher": model.lda.n_fisher,
        "n_filler": model.lda.n_filler,
        "class_labels": [str(c) for c in model.class_labels],
        "config": model.config,
    }
    arrays = [model.lda.mean, model.lda.projection, model.plda.mean,
              model.plda.between, model.plda.within]
    write_atomic(path, encode_header_blob(PLD_MAGIC, header, arrays))


def load_backend(path: str) -> BackendModel:
    header, flat = read_header_blob(path, PLD_MAGIC)
    d_in, d = int(header["in_dim"]), int(header["lda_dim"])
    cursor = 0
    mu, cursor = take(flat, (d_in,), cursor, path)
    proj, cursor = take(flat, (d, d_in), cursor, path)
    m, cursor = take(flat, (d,), cursor, path)
    between, cursor = take(flat, (d, d), cursor, path)
    within, cursor = take(flat, (d, d), cursor, path)
    if cursor != flat.size:
        raise FormatError(f"{path}: {flat.size - cursor} trailing values after parameters")
    lda = LdaModel(mean=mu.astype(np.float64), projection=proj.astype(np.float64),
                   n_fisher=int(header["n_fisher"]), n_filler=int(header["n_filler"]),
                   class_count=len(header.get("class_labels", [])) or 2)
    plda = PldaModel(mean=m, between=between.astype(np.float64),
                     within=within.astype(np.float64))
    return BackendModel(lda=lda, plda=plda,
                        class_labels=list(header.get("class_labels", [])),
                        config=dict(header.get("config", {})))
