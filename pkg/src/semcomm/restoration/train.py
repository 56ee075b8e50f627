"""Cycle-consistent adversarial training of the two generators and discriminators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff.optim import Adam
from ..autodiff.tensor import Tensor
from .gan import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from .losses import DEFAULT_LAMBDA, cycle_loss, gan_loss, identity_loss, total_gan_loss


@dataclass
class CycleState:
    """``g`` maps domain X (real images) to Y (semantic renderings); ``f`` maps back.

    ``dx`` judges X-domain images, ``dy`` judges Y-domain images.
    """

    g: Generator
    f: Generator
    dx: Discriminator
    dy: Discriminator
    lam: float = DEFAULT_LAMBDA
    identity_weight: float | None = None
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    opt_g: Adam = field(init=False)
    opt_d: Adam = field(init=False)

    def __post_init__(self):
        self.opt_g = Adam(self.g.parameters() + self.f.parameters(), self.lr, betas=self.betas)
        self.opt_d = Adam(self.dx.parameters() + self.dy.parameters(), self.lr, betas=self.betas)

    @classmethod
    def create(cls, gen: GeneratorConfig | None = None, disc: DiscriminatorConfig | None = None,
               seed: int = 0, **kwargs) -> "CycleState":
        gen = gen or GeneratorConfig()
        disc = disc or DiscriminatorConfig()

        def with_seed(cfg, s):
            return type(cfg)(**{**cfg.__dict__, "seed": s})

        return cls(Generator(with_seed(gen, seed)), Generator(with_seed(gen, seed + 1)),
                   Discriminator(with_seed(disc, seed + 2)), Discriminator(with_seed(disc, seed + 3)), **kwargs)


def cycle_train_step(x: np.ndarray, y: np.ndarray, state: CycleState) -> dict:
    """One discriminator update followed by one generator update.

    ``x`` and ``y`` are unpaired batches ``[N, 3, H, W]`` in [-1, 1].
    Returns the generator-side loss components evaluated before the update.
    """
    tx, ty = Tensor(x), Tensor(y)

    # discriminators see detached fakes
    fake_y = state.g(tx).detach()
    fake_x = state.f(ty).detach()
    state.opt_d.zero_grad()
    d_loss = gan_loss(state.dx(tx), state.dx(fake_x), "discriminator") + \
        gan_loss(state.dy(ty), state.dy(fake_y), "discriminator")
    d_loss.backward()
    state.opt_d.step()

    state.opt_g.zero_grad()
    gx = state.g(tx)
    fy = state.f(ty)
    adv = gan_loss(None, state.dy(gx), "generator") + gan_loss(None, state.dx(fy), "generator")
    cyc = cycle_loss(tx, state.f(gx), ty, state.g(fy))
    idt = identity_loss(state.g(ty), ty, state.f(tx), tx)
    total = total_gan_loss(adv, cyc, idt, state.lam, state.identity_weight)
    total.backward()
    # discriminator grads from the generator pass are discarded by the next zero_grad
    state.opt_g.step()
    return {
        "total": float(total.data),
        "adversarial": float(adv.data),
        "cycle": float(cyc.data),
        "identity": float(idt.data),
        "discriminator": float(d_loss.data),
    }


def train_cycle(state: CycleState, xs: np.ndarray, ys: np.ndarray, steps: int, batch_size: int = 4,
                seed: int = 0, callback=None) -> list[dict]:
    """Random unpaired mini-batches from ``xs`` and ``ys`` (both in [-1, 1])."""
    rng = np.random.default_rng(seed)
    trace = []
    for step in range(steps):
        ix = np.sort(rng.choice(len(xs), size=min(batch_size, len(xs)), replace=False))
        iy = np.sort(rng.choice(len(ys), size=min(batch_size, len(ys)), replace=False))
        trace.append(cycle_train_step(xs[ix], ys[iy], state))
        if callback is not None:
            callback(step, trace[-1])
    return trace
