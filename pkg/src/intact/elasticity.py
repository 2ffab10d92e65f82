"""Hyperelastic energy models with analytic eigen-decomposed PSD Hessians.

Supported models: stable Neo-Hookean (SNH), Neo-Hookean (NH), corotated
linear (COR), and linear (LIN). All element-level routines are batched over
the leading axis.

The 9x9 Hessian of each energy density decomposes into nine analytic
eigenpairs in the frame of a rotation-variant SVD F = U diag(sigma) V^T:
three "scaling" modes from a 3x3 symmetric system in the singular values,
three antisymmetric "twist" modes and three symmetric "flip" modes, one per
index pair. Eigenvalue clamping plus the sparsity of the mode matrices gives
a 12x12 per-element block assembly cheaper than the dense two-multiplication
route; both paths are provided and must agree.
"""

from __future__ import annotations

import dataclasses
from enum import Enum

import numpy as np

# index pairs (p, q) for twist and flip modes, in eigenvalue storage order
MODE_PAIRS = ((0, 1), (0, 2), (1, 2))

# inversion_safe_step keeps det F above this fraction of its starting value
INVERSION_DET_FRACTION = 0.2
INVERSION_STEP_SCALE = 0.9


class MaterialModel(str, Enum):
    SNH = "snh"
    NH = "nh"
    COR = "cor"
    LIN = "lin"


def lame_parameters(young: float, poisson: float) -> tuple[float, float]:
    """(mu, lam) from Young's modulus and Poisson's ratio."""
    mu = young / (2.0 * (1.0 + poisson))
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return mu, lam


@dataclasses.dataclass(frozen=True)
class Material:
    model: MaterialModel
    young: float
    poisson: float

    def __post_init__(self):
        if self.young <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.poisson < 0.5:
            raise ValueError("Poisson's ratio must be in [0, 0.5)")

    @property
    def mu(self) -> float:
        return lame_parameters(self.young, self.poisson)[0]

    @property
    def lam(self) -> float:
        return lame_parameters(self.young, self.poisson)[1]


def deformation_gradients(x: np.ndarray, tets: np.ndarray, shape_rows: np.ndarray):
    """F per element from nodal positions; F is linear in x."""
    return np.einsum("mka,mkb->mab", x[tets], shape_rows)


def _dets(F):
    return np.linalg.det(F)


def cofactor(F: np.ndarray) -> np.ndarray:
    """Cofactor matrix (columns are cross products of F's columns)."""
    c0, c1, c2 = F[..., :, 0], F[..., :, 1], F[..., :, 2]
    return np.stack(
        [np.cross(c1, c2), np.cross(c2, c0), np.cross(c0, c1)], axis=-1
    )


def svd_rotation_variant(F: np.ndarray):
    """SVD with det U = det V = +1; reflections are folded into sigma[2].

    Returns (U, sigma, V) with sigma[0] >= sigma[1] >= |sigma[2]|.
    """
    U, s, Vt = np.linalg.svd(F)
    V = np.swapaxes(Vt, -1, -2)
    s = s.copy()
    flip_u = np.linalg.det(U) < 0.0
    U[flip_u, :, 2] *= -1.0
    s[flip_u, 2] *= -1.0
    flip_v = np.linalg.det(V) < 0.0
    V[flip_v, :, 2] *= -1.0
    s[flip_v, 2] *= -1.0
    return U, s, V


def _sym_strain(F):
    eps = 0.5 * (F + np.swapaxes(F, -1, -2))
    eps[..., 0, 0] -= 1.0
    eps[..., 1, 1] -= 1.0
    eps[..., 2, 2] -= 1.0
    return eps


def energy_density(material: Material, F: np.ndarray) -> np.ndarray:
    """Energy per unit rest volume, (M,). NH returns +inf where det F <= 0."""
    mu, lam = material.mu, material.lam
    model = material.model
    if model == MaterialModel.LIN:
        eps = _sym_strain(F)
        tr = np.trace(eps, axis1=-2, axis2=-1)
        return mu * (eps * eps).sum(axis=(-2, -1)) + 0.5 * lam * tr * tr
    if model == MaterialModel.COR:
        U, s, V = svd_rotation_variant(F)
        R = U @ np.swapaxes(V, -1, -2)
        diff = F - R
        tr = s.sum(axis=-1) - 3.0
        return mu * (diff * diff).sum(axis=(-2, -1)) + 0.5 * lam * tr * tr
    ic = (F * F).sum(axis=(-2, -1))
    J = _dets(F)
    if model == MaterialModel.SNH:
        return 0.5 * mu * (ic - 3.0) - mu * (J - 1.0) + 0.5 * lam * (J - 1.0) ** 2
    # NH
    out = np.full(F.shape[:-2], np.inf)
    ok = J > 0.0
    logJ = np.log(J, where=ok, out=np.zeros_like(J))
    val = 0.5 * mu * (ic - 3.0) - mu * logJ + 0.5 * lam * logJ * logJ
    out[ok] = val[ok]
    return out


def energy(material: Material, F: np.ndarray, volumes: np.ndarray) -> float:
    """Total elastic energy in joules."""
    return float(np.dot(energy_density(material, F), volumes))


def pk1(material: Material, F: np.ndarray) -> np.ndarray:
    """First Piola-Kirchhoff stress dPsi/dF, (M, 3, 3)."""
    mu, lam = material.mu, material.lam
    model = material.model
    if model == MaterialModel.LIN:
        eps = _sym_strain(F)
        tr = np.trace(eps, axis1=-2, axis2=-1)
        P = 2.0 * mu * eps
        P[..., 0, 0] += lam * tr
        P[..., 1, 1] += lam * tr
        P[..., 2, 2] += lam * tr
        return P
    if model == MaterialModel.COR:
        U, s, V = svd_rotation_variant(F)
        R = U @ np.swapaxes(V, -1, -2)
        tr = (s.sum(axis=-1) - 3.0)[..., None, None]
        return 2.0 * mu * (F - R) + lam * tr * R
    J = _dets(F)
    cof = cofactor(F)
    if model == MaterialModel.SNH:
        k = (lam * (J - 1.0) - mu)[..., None, None]
        return mu * F + k * cof
    # NH: F^{-T} = cof / J; caller guarantees J > 0
    k = (lam * np.log(J) - mu)[..., None, None]
    return mu * F + k * cof / J[..., None, None]


def element_gradients(material, F, shape_rows, volumes) -> np.ndarray:
    """dE/dx per element, (M, 4, 3); E = sum Psi * volume."""
    P = pk1(material, F)
    return volumes[:, None, None] * np.einsum("mab,mkb->mka", P, shape_rows)


@dataclasses.dataclass
class EigenSystem:
    """Batched analytic eigen-decomposition of the 9x9 energy Hessians.

    lam columns 0..2 are the scaling modes (paired with diag_vectors rows),
    3..5 the twist modes and 6..8 the flip modes, following MODE_PAIRS.
    """

    U: np.ndarray             # (M, 3, 3)
    sigma: np.ndarray         # (M, 3)
    V: np.ndarray             # (M, 3, 3)
    lam: np.ndarray           # (M, 9)
    diag_vectors: np.ndarray  # (M, 3, 3), row k is the k-th scaling direction


def eigen_system(material: Material, F: np.ndarray) -> EigenSystem:
    mu, lam_l = material.mu, material.lam
    model = material.model
    M = F.shape[0]

    if model == MaterialModel.LIN:
        # constant Hessian; express it in the identity frame
        U = np.broadcast_to(np.eye(3), (M, 3, 3)).copy()
        V = U.copy()
        s = np.ones((M, 3))
    else:
        U, s, V = svd_rotation_variant(F)
    s1, s2, s3 = s[:, 0], s[:, 1], s[:, 2]

    A = np.empty((M, 3, 3))
    twist = np.empty((M, 3))
    flip = np.empty((M, 3))
    if model in (MaterialModel.LIN, MaterialModel.COR):
        A[:] = 2.0 * mu * np.eye(3) + lam_l
        if model == MaterialModel.LIN:
            twist[:] = 0.0
            flip[:] = 2.0 * mu
        else:
            tr = s.sum(axis=1) - 3.0
            num = 2.0 * lam_l * tr - 4.0 * mu
            for t, (p, q) in enumerate(MODE_PAIRS):
                den = np.maximum(s[:, p] + s[:, q], 1e-8)
                twist[:, t] = 2.0 * mu + num / den
            flip[:] = 2.0 * mu
    elif model == MaterialModel.SNH:
        J = s1 * s2 * s3
        prods = np.stack([s2 * s3, s1 * s3, s1 * s2], axis=1)
        kj = lam_l * (J - 1.0) - mu
        A[:] = lam_l * prods[:, :, None] * prods[:, None, :]
        A[:, 0, 0] = mu + lam_l * prods[:, 0] ** 2
        A[:, 1, 1] = mu + lam_l * prods[:, 1] ** 2
        A[:, 2, 2] = mu + lam_l * prods[:, 2] ** 2
        A[:, 0, 1] += kj * s3
        A[:, 1, 0] += kj * s3
        A[:, 0, 2] += kj * s2
        A[:, 2, 0] += kj * s2
        A[:, 1, 2] += kj * s1
        A[:, 2, 1] += kj * s1
        other = np.stack([s3, s2, s1], axis=1)  # the index outside each pair
        twist[:] = mu + kj[:, None] * other
        flip[:] = mu - kj[:, None] * other
    else:  # NH
        J = s1 * s2 * s3
        m = lam_l * np.log(np.abs(J)) - mu
        inv = 1.0 / s
        A[:] = lam_l * inv[:, :, None] * inv[:, None, :]
        for p in range(3):
            A[:, p, p] = mu + (lam_l - m) * inv[:, p] ** 2
        pairprod = np.stack([s1 * s2, s1 * s3, s2 * s3], axis=1)
        inv_pp = 1.0 / pairprod
        twist[:] = mu + m[:, None] * inv_pp
        flip[:] = mu - m[:, None] * inv_pp

    diag_lam, vecs = np.linalg.eigh(A)
    diag_vectors = np.swapaxes(vecs, 1, 2)  # row k is the k-th eigenvector
    lam9 = np.concatenate([diag_lam, twist, flip], axis=1)
    return EigenSystem(U=U, sigma=s, V=V, lam=lam9, diag_vectors=diag_vectors)


def mode_matrices(es: EigenSystem) -> np.ndarray:
    """The nine orthonormal eigen-matrices Q_k, (M, 9, 3, 3)."""
    M = es.U.shape[0]
    Q = np.empty((M, 9, 3, 3))
    Q[:, :3] = np.einsum("mkb,mab,mcb->mkac", es.diag_vectors, es.U, es.V)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for t, (p, q) in enumerate(MODE_PAIRS):
        up = es.U[:, :, p]
        uq = es.U[:, :, q]
        vp = es.V[:, :, p]
        vq = es.V[:, :, q]
        outer_pq = up[:, :, None] * vq[:, None, :]
        outer_qp = uq[:, :, None] * vp[:, None, :]
        Q[:, 3 + t] = inv_sqrt2 * (outer_pq - outer_qp)
        Q[:, 6 + t] = inv_sqrt2 * (outer_pq + outer_qp)
    return Q


def _clamped(lam9, clamp):
    return np.maximum(lam9, 0.0) if clamp else lam9


def psd_block_hessians(material, F, shape_rows, volumes, clamp=True) -> np.ndarray:
    """Per-element 12x12 Hessians as (M, 4, 4, 3, 3) vertex blocks.

    Sparsity-exploiting route: rotate the shape rows into the V frame once,
    then each block needs only the 3x3 scaling kernel W and scalar twist/flip
    weights before the final U-frame sandwich.
    """
    es = eigen_system(material, F)
    lam9 = _clamped(es.lam, clamp)
    return assemble_vertex_blocks(es, lam9, shape_rows, volumes)


def assemble_vertex_blocks(es: EigenSystem, lam9, shape_rows, volumes) -> np.ndarray:
    y = np.einsum("mba,mib->mia", es.V, shape_rows)
    Mij = np.einsum("mia,mjb->mijab", y, y)
    W = np.einsum("mk,mka,mkb->mab", lam9[:, :3], es.diag_vectors, es.diag_vectors)
    S = W[:, None, None] * Mij
    for t, (p, q) in enumerate(MODE_PAIRS):
        lt = 0.5 * lam9[:, 3 + t, None, None]
        lf = 0.5 * lam9[:, 6 + t, None, None]
        S[..., p, p] += (lt + lf) * Mij[..., q, q]
        S[..., q, q] += (lt + lf) * Mij[..., p, p]
        S[..., p, q] += (lf - lt) * Mij[..., q, p]
        S[..., q, p] += (lf - lt) * Mij[..., p, q]
    K = np.einsum("mra,mijab,msb->mijrs", es.U, S, es.U)
    return K * volumes[:, None, None, None, None]


def psd_block_hessians_direct(material, F, shape_rows, volumes, clamp=True):
    """Reference route: clamp, form the 9x9, transform to 12x12 densely."""
    es = eigen_system(material, F)
    lam9 = _clamped(es.lam, clamp)
    Q = mode_matrices(es)
    H9 = np.einsum("mk,mkrc,mksd->mrcsd", lam9, Q, Q)
    K = np.einsum("mic,mjd,mrcsd->mijrs", shape_rows, shape_rows, H9)
    return K * volumes[:, None, None, None, None]


def hessian_9x9(material, F, clamp=False) -> np.ndarray:
    """Dense d^2 Psi / dF^2 per element, vec'd row-major, (M, 9, 9)."""
    es = eigen_system(material, F)
    lam9 = _clamped(es.lam, clamp)
    Q = mode_matrices(es)
    vecQ = Q.reshape(Q.shape[0], 9, 9)
    return np.einsum("mk,mki,mkj->mij", lam9, vecQ, vecQ)


def _smallest_positive_root(coeffs) -> float:
    # coeffs high-order first; ignore near-zero leading terms
    c = np.array(coeffs, dtype=np.float64)
    scale = np.abs(c).max()
    if scale == 0.0:
        return np.inf
    c = c / scale
    c = np.trim_zeros(c, "f")
    if len(c) <= 1:
        return np.inf
    roots = np.roots(c)
    real = roots[np.abs(roots.imag) < 1e-10 * (1.0 + np.abs(roots.real))].real
    pos = real[real > 1e-12]
    return pos.min() if len(pos) else np.inf


def inversion_safe_step(material, x, p, tets, shape_rows) -> float:
    """Largest step along p keeping every det F above a fraction of its start.

    Only enforced for the log-barrier material; the others tolerate inversion.
    """
    if material.model != MaterialModel.NH:
        return 1.0
    A = deformation_gradients(x, tets, shape_rows)
    B = deformation_gradients(p, tets, shape_rows)
    det_a = _dets(A)
    det_b = _dets(B)
    c1 = (cofactor(A) * B).sum(axis=(-2, -1))   # d det / dt at t=0
    c2 = (cofactor(B) * A).sum(axis=(-2, -1))
    c0 = (1.0 - INVERSION_DET_FRACTION) * det_a
    alpha = 1.0
    moving = (np.abs(B) > 0.0).any(axis=(1, 2))
    for m in np.nonzero(moving)[0]:
        t = _smallest_positive_root([det_b[m], c2[m], c1[m], c0[m]])
        alpha = min(alpha, INVERSION_STEP_SCALE * t)
    return max(alpha, 0.0)
