"""Numerical checks of the ISTA adapters against the reference solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..ista import ista_adapter_forward, ista_reference_solve, max_step, tied_adapter_params


@dataclass
class LassoInstance:
    x: np.ndarray       # (M, N)
    D: np.ndarray       # (M, L)
    lam: float


def lasso_instance(seed: int, m: int = 8, latent: int = 16, n: int = 4, lam_fraction: float = 0.3) -> LassoInstance:
    """Gaussian dictionary with unit-norm atoms; ``lam`` is a fraction of the all-zero threshold."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(m, latent))
    d /= np.linalg.norm(d, axis=0, keepdims=True)
    x = rng.normal(size=(m, n))
    lam_max = float(np.max(np.abs(2.0 * d.T @ x)))
    return LassoInstance(x, d, lam_fraction * lam_max)


def adapter_chain(inst: LassoInstance, k: int, step: float | None = None) -> np.ndarray:
    """Code after ``k`` tied adapters (skip off) starting from a zero code."""
    step = max_step(inst.D) if step is None else step
    params = tied_adapter_params(inst.D, inst.lam, step)
    x = torch.as_tensor(inst.x, dtype=torch.float64)
    a = torch.zeros(inst.D.shape[1], inst.x.shape[1], dtype=torch.float64)
    for _ in range(k):
        _, a = ista_adapter_forward(x, a, params, skip=False)
    return a.numpy()


def verify_instance(seed: int, iters: int = 5000, chain: int = 4, **kw) -> dict:
    inst = lasso_instance(seed, **kw)
    res = ista_reference_solve(inst.x, inst.D, inst.lam, iters=iters)
    short = ista_reference_solve(inst.x, inst.D, inst.lam, iters=chain)
    diff = float(np.max(np.abs(adapter_chain(inst, chain) - short.code)))
    return {"seed": seed, "objective_final": float(res.trace[-1]), "kkt_residual": res.kkt,
            "adapter_vs_oracle_maxdiff": diff,
            "monotone": bool(np.all(np.diff(res.trace) <= 1e-12 * np.maximum(1.0, np.abs(res.trace[:-1]))))}
