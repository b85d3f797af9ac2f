"""Roll-out recurrent loss and its analytic gradient.

For a batch of windows with lifted targets ``Y[w, r]`` the model is rolled
out from ``z_0 = Y[w, 0]`` and compared with ``Y[w, 1..R]``::

    loss = sum_{w, r} || Y[w, r] - z_r ||^2 / (W * R)

The gradient is accumulated backwards through the recursion. For the
dissipative parameterization it continues through the similarity transform
``A = P Ahat P^-1`` and the exponential ``Ahat = exp(M)``; the adjoint of the
exponential is the Frechet derivative at ``M^T`` in the direction ``dL/dAhat``.
"""

from __future__ import annotations

import numpy as np

from .operator import (
    DissipativeParams,
    StandardParams,
    assemble_continuous,
    check_conditioning,
    matrix_exp,
    matrix_exp_directional,
    sigmoid,
    similarity,
)


def _batch(windows, R):
    """Time-major copies: ``Y`` is ``(R+1, W, N_phi)`` and ``U`` is ``(R, W, m)``."""
    Y, U = windows.time_major()
    return Y[:R + 1], U[:R]


def _forward(A, B, Y, U):
    Z = np.empty_like(Y)
    Z[0] = Y[0]
    At = A.T
    if np.any(U):
        UB = (U.reshape(-1, U.shape[-1]) @ B.T).reshape(Z[1:].shape)
        for r in range(1, len(Y)):
            np.matmul(Z[r - 1], At, out=Z[r])
            Z[r] += UB[r - 1]
    else:
        for r in range(1, len(Y)):
            np.matmul(Z[r - 1], At, out=Z[r])
    return Z


def rollout_residuals(A, B, windows, R):
    """Residuals ``z_r - Y_r`` for ``r = 1..R``, shape ``(W, R, N_phi)``."""
    Y, U = _batch(windows, R)
    with np.errstate(over="ignore", invalid="ignore"):
        Z = _forward(A, B, Y, U)
        return (Z[1:] - Y[1:]).transpose(1, 0, 2)


def loss_from_matrices(A, B, windows, R) -> float:
    if not 1 <= R <= windows.r_max:
        raise ValueError(f"roll-out length {R} outside [1, {windows.r_max}]")
    E = rollout_residuals(A, B, windows, R)
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sum(E * E) / (E.shape[0] * R))


def _grad_matrices(A, B, windows, R):
    """Loss and gradients with respect to the discrete ``A`` and ``B``."""
    Y, U = _batch(windows, R)
    W, N = Y.shape[1], Y.shape[2]
    with np.errstate(over="ignore", invalid="ignore"):
        Z = _forward(A, B, Y, U)
        E = Z[1:] - Y[1:]
        loss = float(np.dot(E.ravel(), E.ravel()) / (W * R))
        E *= 2.0 / (W * R)
        lam = E  # overwritten in place with the adjoint
        for r in range(R - 2, -1, -1):
            lam[r] += lam[r + 1] @ A
        lam2 = lam.reshape(-1, N)
        gA = lam2.T @ Z[:-1].reshape(-1, N)
        gB = lam2.T @ U.reshape(-1, U.shape[-1])
    return loss, gA, gB


def dissipative_chain(params: DissipativeParams, gA, Ahat, A):
    """Pull ``dL/dA`` back to ``(dQ_raw, dtheta_d, dP)``."""
    P, dt = params.P, params.dt
    At = assemble_continuous(params)
    Wm = np.linalg.solve(P, gA.T).T          # gA P^-T
    gAhat = P.T @ Wm
    gP = Wm @ Ahat.T - A.T @ Wm
    gM = matrix_exp_directional((At * dt).T, gAhat)
    gAt = dt * gM
    gQ = gAt - gAt.T
    gtheta = -np.diag(gAt) * sigmoid(params.theta_d)
    return gQ, gtheta, gP


def rollout_loss(params, windows, R) -> float:
    """Mean roll-out loss over windows and steps ``1..R``."""
    if isinstance(params, DissipativeParams):
        check_conditioning(params.P)
        A = similarity(params.P, matrix_exp(assemble_continuous(params) * params.dt))
    else:
        A = params.A
    return loss_from_matrices(A, params.B, windows, R)


def loss_and_gradient(params, windows, R):
    """Loss and a gradient list aligned with ``params.arrays()``."""
    if not 1 <= R <= windows.r_max:
        raise ValueError(f"roll-out length {R} outside [1, {windows.r_max}]")
    if isinstance(params, StandardParams):
        loss, gA, gB = _grad_matrices(params.A, params.B, windows, R)
        return loss, [gA, gB]
    check_conditioning(params.P)
    Ahat = matrix_exp(assemble_continuous(params) * params.dt)
    A = similarity(params.P, Ahat)
    loss, gA, gB = _grad_matrices(A, params.B, windows, R)
    if not np.isfinite(loss):
        return loss, [np.full_like(a, np.nan) for a in params.arrays()]
    gQ, gtheta, gP = dissipative_chain(params, gA, Ahat, A)
    return loss, [gQ, gtheta, gP, gB]


def loss_gradient(params, windows, R):
    return loss_and_gradient(params, windows, R)[1]
