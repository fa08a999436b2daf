"""Point-wise finite-time hyperbolicity: Cauchy-Green tensor, normal
repulsion rate and ratio, FTLE, alignment angle, surface classification.

Batch helpers (``spectra``, ``rho_*_batch``) operate on stacks of flow
gradients; the scalar API calls them with a batch of one, so field scans and
point evaluations share the same arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import IntegratorConfig, as_state, flow_with_gradient
from .errors import BasisNotOrthonormal, SingularTensor, ZeroWindow

SINGULAR_FLOOR = 1e-300
# Below this ratio lambda_1/lambda_n the eigensolver's smallest eigenvalue is
# rounding noise; it is rebuilt from the integrated log-determinant instead.
REFINE_RATIO = 1e-8


def spectra(F, logdet=None):
    """Ascending eigenpairs of ``C = F^T F`` for a stack of gradients.

    ``F`` has shape ``(..., n, n)``.  Returns ``(lam, vec, C)`` with
    eigenvectors in the columns of ``vec``.
    """
    F = np.asarray(F, dtype=float)
    C = np.einsum("...ki,...kj->...ij", F, F)
    C = 0.5 * (C + np.swapaxes(C, -1, -2))
    lam, vec = np.linalg.eigh(C)
    n = F.shape[-1]
    if logdet is not None and n >= 2:
        logdet = np.asarray(logdet, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            rest = np.sum(np.log(lam[..., 1:]), axis=-1)
            rebuilt = np.exp(2.0 * logdet - rest)
        use = (lam[..., 0] < REFINE_RATIO * lam[..., -1]) & np.isfinite(rebuilt)
        lam = lam.copy()
        lam[..., 0] = np.where(use, rebuilt, lam[..., 0])
    return lam, vec, C


def rho_fixed_batch(lam, vec, n0):
    """``(sum_i (n0 . xi_i)^2 / lambda_i)^(-1/2)`` for each tensor in a stack."""
    proj = np.einsum("...ki,...k->...i", vec, n0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 1.0 / np.sqrt(np.sum(proj * proj / lam, axis=-1))


def rho_max_batch(lam):
    return np.sqrt(lam[..., -1])


def ftle_batch(lam, t):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(lam[..., -1]) / (2.0 * abs(t))


@dataclass(frozen=True, eq=False)
class CauchyGreenTensor:
    """``C = grad_phi^T grad_phi`` at ``(x0, t)`` with ascending eigenpairs.

    ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``.  When built from a
    field with a symmetry and ``quotient=True`` the tensor lives on the
    orthogonal complement of the symmetry directions, spanned by ``basis``.
    """
    x0: np.ndarray
    t: float
    C: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    grad: np.ndarray
    logdet: float | None = None
    basis: np.ndarray | None = None

    @property
    def dim(self):
        return self.C.shape[0]

    @property
    def reconstructed(self):
        """``V diag(lambda) V^T`` using the refined spectrum."""
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def complement_basis(directions):
    """Orthonormal basis (columns) of the complement of ``directions``."""
    S = np.atleast_2d(np.asarray(directions, dtype=float))
    if S.shape[0] < S.shape[1]:
        S = S.T
    n, k = S.shape
    u, _, _ = np.linalg.svd(S, full_matrices=True)
    return u[:, k:]


def quotient_gradient(F, symmetry):
    """Action of ``F`` on the complement of invariant ``symmetry`` directions.

    For a field invariant under translation along ``v`` the flow satisfies
    ``F v = v``; the quotient map ``B^T F B`` drops that neutral direction.
    """
    B = complement_basis(symmetry)
    return B.T @ F @ B, B


def cauchy_green_from_gradient(F, x0=None, t=0.0, logdet=None, basis=None):
    F = np.asarray(F, dtype=float)
    lam, vec, C = spectra(F[None], None if logdet is None else np.array([logdet]))
    lam, vec, C = lam[0], vec[0], C[0]
    if not np.all(np.isfinite(lam)) or lam[0] < SINGULAR_FLOOR:
        raise SingularTensor(
            f"smallest Cauchy-Green eigenvalue {lam[0]:.3g} is below {SINGULAR_FLOOR:g}; "
            "a direction has collapsed numerically")
    x0 = None if x0 is None else np.asarray(x0, dtype=float)
    return CauchyGreenTensor(x0, float(t), C, lam, vec, F, logdet, basis)


def cauchy_green(vf, x0, t, cfg=IntegratorConfig(), quotient=False):
    """Cauchy-Green tensor of the flow of ``vf`` from ``x0`` over ``t``.

    ``quotient=True`` factors out ``vf.symmetry`` (if any) first.
    """
    fs = flow_with_gradient(vf, x0, t, cfg)
    F = fs.grad_phi
    basis = None
    if quotient and vf.symmetry is not None:
        F, basis = quotient_gradient(F, vf.symmetry)
    return cauchy_green_from_gradient(F, fs.x0, t, fs.logdet, basis)


def _unit(v, name="n0"):
    # only the direction matters, so inputs are renormalized
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError(f"{name} must be a non-zero finite vector")
    return v / norm


def repulsion_rate(cg: CauchyGreenTensor, n0):
    """Normal repulsion rate ``1 / sqrt(<n0, C^-1 n0>)`` via the eigenbasis."""
    n0 = _unit(n0)
    if n0.shape[0] != cg.dim:
        raise ValueError(f"n0 has dimension {n0.shape[0]}, tensor has {cg.dim}")
    return float(rho_fixed_batch(cg.eigenvalues, cg.eigenvectors, n0))


def tangent_basis(n0):
    """Orthonormal basis (columns) of the hyperplane orthogonal to ``n0``."""
    return complement_basis(_unit(n0)[:, None])


def repulsion_ratio(cg: CauchyGreenTensor, n0, basis=None, tol=1e-9):
    """Normal repulsion ratio: ``rho`` over the largest tangential stretch.

    The tangential stretch ``max |grad_phi e0|`` over unit ``e0`` in the
    span of ``basis`` is the root of the largest eigenvalue of ``C``
    restricted to that span.
    """
    n0 = _unit(n0)
    E = tangent_basis(n0) if basis is None else np.atleast_2d(np.asarray(basis, dtype=float))
    if E.shape[0] != cg.dim and E.shape[1] == cg.dim:
        E = E.T
    if E.shape != (cg.dim, cg.dim - 1):
        raise BasisNotOrthonormal(f"tangent basis must be {cg.dim}x{cg.dim - 1}, got {E.shape}")
    if (np.max(np.abs(E.T @ E - np.eye(cg.dim - 1))) > tol
            or np.max(np.abs(E.T @ n0)) > tol):
        raise BasisNotOrthonormal("tangent basis is not orthonormal and orthogonal to n0")
    rho = repulsion_rate(cg, n0)
    CT = E.T @ cg.reconstructed @ E
    stretch = math.sqrt(np.linalg.eigvalsh(0.5 * (CT + CT.T))[-1])
    return rho / stretch


@dataclass(frozen=True)
class RepulsionResult:
    rho: float
    normal_used: np.ndarray
    window: float
    nu: float | None = None


def max_stretch_certificate(cg: CauchyGreenTensor):
    """``rho`` with the normal taken along the dominant stretch direction.

    This equals ``sqrt(lambda_n)``, the largest repulsion rate over all unit
    normals, and is the monitoring convention when no surface normal is known.
    """
    xi = cg.eigenvectors[:, -1]
    return RepulsionResult(float(rho_max_batch(cg.eigenvalues)), xi.copy(), cg.t)


def ftle(cg: CauchyGreenTensor):
    """``ln(lambda_n) / (2 |t|)``: log spectral norm of the gradient per unit time."""
    if cg.t == 0:
        raise ZeroWindow("FTLE is undefined for a zero-length window")
    return float(ftle_batch(cg.eigenvalues, cg.t))


def alignment_angle(cg: CauchyGreenTensor, n0):
    """Sine of the angle between ``n0`` and the dominant stretch direction."""
    n0 = _unit(n0)
    c = float(n0 @ cg.eigenvectors[:, -1])
    return math.sqrt(max(0.0, 1.0 - c * c))


def default_thresholds(T):
    """Rates giving 5 % net growth over the window: ``ln(1.05) / |T|``."""
    a = math.log(1.05) / abs(T)
    return a, a


def classify_surface_point(vf, x0, n0, T, alpha=None, beta=None, cfg=IntegratorConfig()):
    """``"repelling"``, ``"attracting"`` or ``"neither"`` over ``[0, T]``.

    Repelling when ``rho >= e^(alpha T)`` and ``nu >= e^(beta T)`` forward in
    time; attracting when the same holds for the backward window ``-T``.
    """
    if not T > 0:
        raise ValueError("window T must be positive")
    da, db = default_thresholds(T)
    alpha = da if alpha is None else alpha
    beta = db if beta is None else beta
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    x0 = as_state(x0, vf.dim)
    n0 = _unit(n0)
    E = tangent_basis(n0)
    for window, label in ((T, "repelling"), (-T, "attracting")):
        cg = cauchy_green(vf, x0, window, cfg)
        rho = repulsion_rate(cg, n0)
        nu = repulsion_ratio(cg, n0, E)
        if rho >= math.exp(alpha * T) and nu >= math.exp(beta * T):
            return label
    return "neither"
