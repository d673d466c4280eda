"""Variance-preserving diffusion over an analytic Gaussian-mixture prior.

The posterior mean E[x0 | x_t] of a Gaussian mixture under the VP forward
process has a closed form, so the denoiser and its Jacobian are exact rather
than learned.  DDIM sampling and inversion run the standard first-order
recurrence on top of that denoiser; inversion evaluates the denoiser at the
source step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import as_image, numerical_rank

_FORWARD = "forward"
_INVERSE = "inverse"


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """The alpha_t sequence of the forward process, indices 0..T.

    alpha_0 = 1 (clean data), alpha_T <= 1e-4 (effectively pure noise), and
    the sequence is strictly decreasing in (0, 1].
    """

    alphas: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.alphas, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("schedule needs at least alpha_0 and alpha_T")
        if arr[0] != 1.0:
            raise ValueError(f"alpha_0 must be 1, got {arr[0]}")
        if arr[-1] > 1e-4:
            raise ValueError(f"alpha_T must be <= 1e-4, got {arr[-1]}")
        if np.any(np.diff(arr) >= 0.0):
            raise ValueError("alphas must be strictly decreasing")
        if np.any(arr <= 0.0) or np.any(arr > 1.0):
            raise ValueError("alphas must lie in (0, 1]")
        object.__setattr__(self, "alphas", _readonly(arr))

    @property
    def T(self) -> int:
        return self.alphas.size - 1

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"step {t} outside [0, {self.T}]")
        return float(self.alphas[t])

    @classmethod
    def linear_beta(
        cls, T: int = 200, beta_min: float = 1e-4, beta_max: float = 0.1
    ) -> "NoiseSchedule":
        """Linear-beta VP schedule; defaults reach alpha_T ~ 3e-5 at T=200."""
        if T < 1:
            raise ValueError("T must be >= 1")
        betas = np.linspace(beta_min, beta_max, T)
        alphas = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(alphas)


@dataclass(frozen=True)
class MixtureComponent:
    """One Gaussian component: covariance = basis diag(scales^2) basis^T + tau^2 I.

    ``basis`` has orthonormal columns (possibly zero of them); the shared
    isotropic floor tau lives on the prior.
    """

    weight: float
    mean: np.ndarray
    basis: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        basis = np.asarray(self.basis, dtype=np.float64)
        scales = np.asarray(self.scales, dtype=np.float64)
        if mean.ndim != 1:
            raise ValueError("component mean must be a vector")
        d = mean.size
        if basis.ndim != 2 or basis.shape[0] != d:
            raise ValueError(f"basis must be ({d}, r), got {basis.shape}")
        r = basis.shape[1]
        if scales.shape != (r,):
            raise ValueError(f"scales must have shape ({r},), got {scales.shape}")
        if np.any(scales <= 0.0):
            raise ValueError("scales must be positive")
        if self.weight <= 0.0:
            raise ValueError("component weight must be positive")
        if r > 0:
            gram = basis.T @ basis
            if np.max(np.abs(gram - np.eye(r))) > 1e-10:
                raise ValueError("basis columns must be orthonormal (tol 1e-10)")
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "basis", _readonly(basis))
        object.__setattr__(self, "scales", _readonly(scales))

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class GaussianMixturePrior:
    """Mixture of low-rank Gaussians on flattened (C, H, W) tensors."""

    shape: tuple[int, int, int]
    components: tuple[MixtureComponent, ...]
    tau: float = 1e-6

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3:
            raise ValueError("shape must be (C, H, W)")
        c, h, w = shape
        if c < 1 or h < 2 or w < 2 or h % 2 or w % 2:
            raise ValueError(f"invalid tensor shape {shape}")
        d = c * h * w
        comps = tuple(self.components)
        if not comps:
            raise ValueError("prior needs at least one component")
        total = math.fsum(comp.weight for comp in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
        for comp in comps:
            if comp.mean.size != d:
                raise ValueError("component dimension does not match shape")
        if self.tau < 0.0:
            raise ValueError("tau must be nonnegative")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "components", comps)

    @property
    def d(self) -> int:
        c, h, w = self.shape
        return c * h * w

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n samples, returned as an (n, C, H, W) array."""
        if n < 1:
            raise ValueError("n must be >= 1")
        weights = np.array([comp.weight for comp in self.components])
        picks = rng.choice(len(self.components), size=n, p=weights / weights.sum())
        out = np.empty((n, self.d))
        for i, k in enumerate(picks):
            comp = self.components[k]
            x = comp.mean + self.tau * rng.standard_normal(self.d)
            if comp.rank > 0:
                x = x + comp.basis @ (comp.scales * rng.standard_normal(comp.rank))
            out[i] = x
        return out.reshape((n,) + self.shape)

    @classmethod
    def isotropic(
        cls,
        shape: tuple[int, int, int],
        std: float = 1.0,
        mean: Optional[np.ndarray] = None,
    ) -> "GaussianMixturePrior":
        """Single full-rank component with covariance std^2 I."""
        d = int(np.prod(shape))
        mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=np.float64).ravel()
        comp = MixtureComponent(1.0, mu, np.zeros((d, 0)), np.zeros(0))
        return cls(tuple(shape), (comp,), tau=float(std))

    @classmethod
    def random_low_rank(
        cls,
        shape: tuple[int, int, int],
        rank: int,
        rng: np.random.Generator,
        n_components: int = 1,
        scale: float = 3.0,
        tau: float = 1e-6,
        separation: float = 10.0,
    ) -> "GaussianMixturePrior":
        """Equal-weight mixture with random orthonormal rank-r bases.

        Component means are placed ``separation`` apart along random
        directions so responsibilities are near one-hot at moderate noise and
        the local Jacobian rank matches the component rank.
        """
        d = int(np.prod(shape))
        if not 0 < rank <= d:
            raise ValueError(f"rank must be in [1, {d}]")
        comps = []
        for k in range(n_components):
            basis, _ = np.linalg.qr(rng.standard_normal((d, rank)))
            if n_components == 1:
                mean = np.zeros(d)
            else:
                direction = rng.standard_normal(d)
                mean = separation * direction / np.linalg.norm(direction)
            comps.append(
                MixtureComponent(
                    1.0 / n_components, mean, basis, np.full(rank, float(scale))
                )
            )
        return cls(tuple(shape), tuple(comps), tau=float(tau))


@dataclass(frozen=True)
class DenoiserEval:
    """Posterior mean, component responsibilities, optional Jacobian."""

    posterior: np.ndarray
    responsibilities: np.ndarray
    jacobian: Optional[np.ndarray] = None


def ddim_transition(
    x: np.ndarray, f: np.ndarray, alpha_src: float, alpha_dst: float
) -> np.ndarray:
    """One DDIM move between noise levels given the denoiser output ``f``.

    Implements sqrt(a_dst) f + sqrt(1-a_dst) eps with
    eps = (x - sqrt(a_src) f) / sqrt(1-a_src); at a_src = 1 the residual is
    identically zero (the posterior mean is the identity there), so eps = 0.
    """
    if alpha_src >= 1.0:
        eps = np.zeros_like(x)
    else:
        eps = (x - math.sqrt(alpha_src) * f) / math.sqrt(1.0 - alpha_src)
    return math.sqrt(alpha_dst) * f + math.sqrt(1.0 - alpha_dst) * eps


class AnalyticDiffusion:
    """Exact posterior-mean denoiser plus DDIM machinery for one prior."""

    def __init__(self, prior: GaussianMixturePrior, schedule: NoiseSchedule):
        self.prior = prior
        self.schedule = schedule
        self.shape = prior.shape
        self.d = prior.d

    @property
    def T(self) -> int:
        return self.schedule.T

    def _flat(self, x) -> np.ndarray:
        arr = as_image(x)
        if arr.shape != self.shape:
            raise ValueError(f"expected shape {self.shape}, got {arr.shape}")
        return arr.reshape(self.d)

    def forward_noise(self, x0, t: int, rng: np.random.Generator) -> np.ndarray:
        """Marginal forward sample sqrt(a_t) x0 + sqrt(1-a_t) eps."""
        a = self.schedule.alpha(t)
        flat = self._flat(x0)
        noisy = math.sqrt(a) * flat + math.sqrt(1.0 - a) * rng.standard_normal(self.d)
        return noisy.reshape(self.shape)

    def _component_stats(self, x: np.ndarray, alpha: float):
        """Per-component responsibilities and posterior pieces at one x_t.

        The marginal of x_t under component k is Gaussian with covariance
        B diag(alpha s^2 + nu) B^T + nu (I - B B^T), nu = alpha tau^2 + 1 - alpha,
        which the low-rank structure lets us invert without forming matrices.
        """
        tau2 = self.prior.tau**2
        nu = alpha * tau2 + (1.0 - alpha)
        if nu <= 0.0:
            raise ValueError(
                "marginal covariance is singular; a positive tau is required at t=0"
            )
        sqrt_a = math.sqrt(alpha)
        comps = self.prior.components
        loglik = np.empty(len(comps))
        cache = []
        for k, comp in enumerate(comps):
            z = x - sqrt_a * comp.mean
            b = comp.basis.T @ z if comp.rank else np.zeros(0)
            m = nu + alpha * comp.scales**2
            quad = (z @ z - b @ b) / nu + np.sum(b * b / m) if comp.rank else (z @ z) / nu
            logdet = (self.d - comp.rank) * math.log(nu) + float(np.sum(np.log(m)))
            loglik[k] = math.log(comp.weight) - 0.5 * (quad + logdet)
            cache.append((z, b, m))
        shifted = loglik - np.max(loglik)
        resp = np.exp(shifted)
        resp /= resp.sum()
        return nu, sqrt_a, resp, cache

    def posterior_mean(self, x, t: int, with_jacobian: bool = False) -> DenoiserEval:
        """Exact E[x0 | x_t] under the prior, with optional exact Jacobian."""
        alpha = self.schedule.alpha(t)
        flat = self._flat(x)
        tau2 = self.prior.tau**2
        nu, sqrt_a, resp, cache = self._component_stats(flat, alpha)
        comps = self.prior.components

        posts = np.empty((len(comps), self.d))
        for k, comp in enumerate(comps):
            z, b, m = cache[k]
            contrib = (tau2 / nu) * z
            if comp.rank:
                gain = (comp.scales**2 + tau2) / m
                contrib = contrib + comp.basis @ (gain * b) - (tau2 / nu) * (
                    comp.basis @ b
                )
            posts[k] = comp.mean + sqrt_a * contrib
        f = resp @ posts

        jac = None
        if with_jacobian:
            jac = sqrt_a * (tau2 / nu) * np.eye(self.d)
            grads = np.empty((len(comps), self.d))
            for k, comp in enumerate(comps):
                z, b, m = cache[k]
                g = -z / nu
                if comp.rank:
                    gain = (comp.scales**2 + tau2) / m
                    jac += resp[k] * sqrt_a * (
                        comp.basis * (gain - tau2 / nu)
                    ) @ comp.basis.T
                    g = g + comp.basis @ (b / nu - b / m)
                grads[k] = g
            gbar = resp @ grads
            jac += np.einsum("k,ki,kj->ij", resp, posts, grads - gbar)

        return DenoiserEval(
            posterior=f.reshape(self.shape),
            responsibilities=resp,
            jacobian=jac,
        )

    def jacobian(
        self, x, t: int, mode: str = "analytic", step: float = 1e-5
    ) -> np.ndarray:
        """d x d Jacobian of the posterior mean, analytic or central-difference."""
        if mode == "analytic":
            out = self.posterior_mean(x, t, with_jacobian=True).jacobian
            assert out is not None
            return out
        if mode != "finite_difference":
            raise ValueError(f"unknown jacobian mode {mode!r}")
        flat = self._flat(x)
        jac = np.empty((self.d, self.d))
        probe = flat.copy()
        for j in range(self.d):
            probe[j] = flat[j] + step
            hi = self.posterior_mean(probe.reshape(self.shape), t).posterior.ravel()
            probe[j] = flat[j] - step
            lo = self.posterior_mean(probe.reshape(self.shape), t).posterior.ravel()
            probe[j] = flat[j]
            jac[:, j] = (hi - lo) / (2.0 * step)
        return jac

    def ddim_step(self, x, t: int, direction: str) -> np.ndarray:
        """One DDIM step: ``forward`` maps t -> t-1, ``inverse`` maps t -> t+1."""
        if direction == _FORWARD:
            if not 1 <= t <= self.T:
                raise ValueError(f"forward step needs 1 <= t <= {self.T}, got {t}")
            dst = t - 1
        elif direction == _INVERSE:
            if not 0 <= t <= self.T - 1:
                raise ValueError(f"inverse step needs 0 <= t <= {self.T - 1}, got {t}")
            dst = t + 1
        else:
            raise ValueError(f"unknown direction {direction!r}")
        f = self.posterior_mean(x, t).posterior
        out = ddim_transition(
            as_image(x), f, self.schedule.alpha(t), self.schedule.alpha(dst)
        )
        return out

    def ddim_run(self, x, from_t: int, to_t: int) -> np.ndarray:
        """Deterministic multi-step DDIM between two steps (direction implied)."""
        if not 0 <= from_t <= self.T or not 0 <= to_t <= self.T:
            raise ValueError(f"steps must lie in [0, {self.T}]")
        if from_t == to_t:
            raise ValueError("from_t and to_t must differ")
        cur = as_image(x)
        if from_t > to_t:
            for t in range(from_t, to_t, -1):
                cur = self.ddim_step(cur, t, _FORWARD)
        else:
            for t in range(from_t, to_t):
                cur = self.ddim_step(cur, t, _INVERSE)
        return cur

    def rank_ratio_curve(
        self,
        x0_samples: Sequence[np.ndarray],
        t_grid: Sequence[int],
        rng: np.random.Generator,
        rel_threshold: float = 1e-2,
    ) -> list[tuple[int, float, float]]:
        """Mean Jacobian rank ratio and spectral norm at each grid step.

        Samples are forward-noised prior draws; each grid point averages the
        numerical rank of the analytic Jacobian over them.
        """
        samples = [as_image(s) for s in x0_samples]
        if not samples:
            raise ValueError("need at least one sample")
        out = []
        for t in t_grid:
            ratios = []
            norms = []
            for x0 in samples:
                x_t = self.forward_noise(x0, t, rng)
                info = numerical_rank(
                    self.jacobian(x_t, t), rel_threshold=rel_threshold
                )
                ratios.append(info.ratio)
                norms.append(info.sigma_max)
            out.append((int(t), float(np.mean(ratios)), float(np.mean(norms))))
        return out
