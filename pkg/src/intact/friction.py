"""Semi-implicit Coulomb friction with anchors frozen at the last step.

At the end of a converged step, each contact yields a normal force magnitude
(at incremental-potential scale, so readers of physical forces divide by h^2),
the signed relative-motion weights of its four vertices, and a tangent frame
from the contact normal. During the next step those stay fixed while the
smoothed mobilizer

    f0(y) = -y^3/(3 eps^2) + y^2/eps + eps/3   for y < eps,   y otherwise

shapes the potential coeff * f0(||u||) of the tangential slip u. f0 is C1 with
f0' in [0, 1], which makes the exact slip Hessian positive semidefinite
without any clamping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact import ActiveSet
from .distance import PairKind, ee_eval, vf_eval


def f0(y: np.ndarray, eps: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    smooth = -(y**3) / (3.0 * eps * eps) + y * y / eps + eps / 3.0
    return np.where(y >= eps, y, smooth)


def f0_over_y(y: np.ndarray, eps: float) -> np.ndarray:
    """f0'(y)/y, finite at zero slip (limit 2/eps)."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        coulomb = np.where(y > 0.0, 1.0 / np.maximum(y, 1e-300), 0.0)
    return np.where(y >= eps, coulomb, (2.0 * eps - y) / (eps * eps))


def f0_second(y: np.ndarray, eps: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.where(y >= eps, 0.0, 2.0 * (eps - y) / (eps * eps))


def tangent_basis(normals: np.ndarray) -> np.ndarray:
    """Orthonormal (k, 3, 2) frames spanning the planes normal to each row."""
    k = len(normals)
    helper = np.zeros((k, 3))
    helper[np.arange(k), np.argmin(np.abs(normals), axis=1)] = 1.0
    t1 = np.cross(normals, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    return np.stack([t1, t2], axis=2)


@dataclass
class FrictionTerms:
    """Frozen per-contact friction data contributing to one step's objective."""

    indices: np.ndarray  # (k, 4) global vertex ids
    weights: np.ndarray  # (k, 4) signed relative-motion weights
    frames: np.ndarray  # (k, 3, 2) tangent bases
    coeff: np.ndarray  # (k,) friction_coefficient * normal force (IP scale)
    ref: np.ndarray  # (k, 3) weighted contact points at the anchor state
    eps: float  # slip smoothing width h * eps_v (meters)

    def __len__(self) -> int:
        return len(self.coeff)

    def _slip(self, x_hat: np.ndarray) -> np.ndarray:
        rel = np.einsum("kj,kja->ka", self.weights, x_hat[self.indices]) - self.ref
        return np.einsum("kab,ka->kb", self.frames, rel)

    def energy(self, x_hat: np.ndarray) -> float:
        y = np.linalg.norm(self._slip(x_hat), axis=1)
        return float(np.dot(self.coeff, f0(y, self.eps)))

    def gradient_terms(self, x_hat: np.ndarray) -> np.ndarray:
        u = self._slip(x_hat)
        y = np.linalg.norm(u, axis=1)
        force = (self.coeff * f0_over_y(y, self.eps))[:, None] * u  # (k, 2)
        world = np.einsum("kab,kb->ka", self.frames, force)
        return self.weights[:, :, None] * world[:, None, :]

    def hessian_grids(self, x_hat: np.ndarray) -> np.ndarray:
        u = self._slip(x_hat)
        y = np.linalg.norm(u, axis=1)
        g1 = f0_over_y(y, self.eps)
        g2 = f0_second(y, self.eps)
        uu = np.einsum("ka,kb->kab", u, u)
        y2 = np.maximum(y * y, 1e-300)
        uhat = uu / y2[:, None, None]
        iso = np.broadcast_to(np.eye(2), uhat.shape)
        # Eigenvalues g2 along the slip and g1 across it, both nonnegative.
        h_u = g2[:, None, None] * uhat + g1[:, None, None] * (iso - uhat)
        h_u = np.where((y < 1e-12 * max(self.eps, 1e-300))[:, None, None],
                       g1[:, None, None] * iso, h_u)
        h_world = np.einsum("k,kab,kbc,kdc->kad", self.coeff, self.frames, h_u, self.frames)
        ww = np.einsum("ki,kj->kij", self.weights, self.weights)
        return ww[:, :, :, None, None] * h_world[:, None, None, :, :]


def friction_precompute(
    x: np.ndarray,
    active_set: ActiveSet,
    mu: float,
    offset: float,
    h: float,
    friction_coefficient: float,
    eps_v: float,
) -> FrictionTerms | None:
    """Friction anchors from a converged step's state and multipliers.

    Only contacts exerting a positive normal force contribute; a constraint
    whose slack is positive at x produces exactly zero force and drops out.
    """
    if friction_coefficient <= 0.0 or len(active_set) == 0:
        return None
    indices, wts, normals, coeffs, refs = [], [], [], [], []
    for con in active_set:
        pts = x[con.indices][None]
        eval_fn = vf_eval if con.kind == PairKind.VERTEX_FACE else ee_eval
        d, grad, weights, degenerate = eval_fn(pts)
        if degenerate[0]:
            continue
        c = float(d[0]) - offset
        shifted = c - con.lam / mu  # rounded once: positive slack zeroes the force exactly
        s = max(0.0, shifted)
        force = max(0.0, -mu * (shifted - s))
        if force == 0.0:
            continue
        w = weights[0]
        j = int(np.argmax(np.abs(w)))
        normal = grad[0].reshape(4, 3)[j] / w[j]
        indices.append(con.indices)
        wts.append(w)
        normals.append(normal)
        coeffs.append(friction_coefficient * force)
        refs.append(w @ x[con.indices])
    if not indices:
        return None
    normals = np.asarray(normals)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return FrictionTerms(
        indices=np.asarray(indices, dtype=int),
        weights=np.asarray(wts),
        frames=tangent_basis(normals),
        coeff=np.asarray(coeffs),
        ref=np.asarray(refs),
        eps=h * eps_v,
    )
