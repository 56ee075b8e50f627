"""Adversarial, cycle-consistency and identity losses."""

from __future__ import annotations

from ..autodiff.tensor import Tensor
from ..errors import ContractError, ShapeError

D_EPS = 1e-7
DEFAULT_LAMBDA = 10.0


def _log_clamped(d: Tensor) -> Tensor:
    return d.clip(D_EPS, 1.0 - D_EPS).log()


def gan_loss(d_real: Tensor | None, d_fake: Tensor, role: str) -> Tensor:
    """Discriminator: ``-mean log D(real) - mean log(1 - D(fake))``.
    Generator (non-saturating): ``-mean log D(fake)``."""
    if role == "generator":
        return -_log_clamped(d_fake).mean()
    if role == "discriminator":
        if d_real is None:
            raise ContractError("discriminator loss needs D(real)")
        return -_log_clamped(d_real).mean() - _log_clamped(1.0 - d_fake).mean()
    raise ContractError(f"unknown role {role!r}")


def _l1(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return (a - b).abs().mean()


def cycle_loss(x: Tensor, f_g_x: Tensor, y: Tensor, g_f_y: Tensor) -> Tensor:
    return _l1(f_g_x, x) + _l1(g_f_y, y)


def identity_loss(g_y: Tensor, y: Tensor, f_x: Tensor, x: Tensor) -> Tensor:
    return _l1(g_y, y) + _l1(f_x, x)


def total_gan_loss(gan, cycle, identity, lam: float = DEFAULT_LAMBDA, identity_weight: float | None = None):
    """``gan + lam * cycle + identity_weight * identity``; identity weight defaults to ``0.5 * lam``."""
    if lam <= 0:
        raise ContractError("cycle weight lambda must be positive")
    idw = 0.5 * lam if identity_weight is None else identity_weight
    return gan + cycle * lam + identity * idw
