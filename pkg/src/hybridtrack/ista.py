"""Sparse coding adapters built by unrolling ISTA.

The NumPy half (:func:`lasso_objective`, :func:`ista_reference_solve`) is a
plain proximal-gradient LASSO solver kept deliberately independent of the
PyTorch half; tests tie the two together.

Shapes follow the column convention: features ``(..., M, N)``, codes
``(..., L, N)``, dictionaries act from the left. Multi-step tensors carry a
leading time axis ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class StepSizeError(RuntimeError):
    """The ISTA objective increased: the step is too large for the dictionary."""


def soft_threshold(x, theta):
    """``sign(x) * max(|x| - theta, 0)`` for NumPy arrays or tensors."""
    if isinstance(x, torch.Tensor):
        theta = torch.as_tensor(theta, dtype=x.dtype, device=x.device)
        if bool((theta < 0).any()):
            raise ValueError("threshold must be nonnegative")
        return torch.sign(x) * torch.clamp(torch.abs(x) - theta, min=0.0)
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def lasso_objective(x, dictionary, a, lam: float) -> float:
    """``||x - D a||_F^2 + lam * sum|a|``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    dictionary = np.asarray(dictionary, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if x.ndim == 1:
        x, a = x[:, None], a.reshape(-1, 1)
    r = x - dictionary @ a
    return float(np.sum(r * r) + lam * np.sum(np.abs(a)))


def kkt_residual(x, dictionary, a, lam: float) -> float:
    """Max violation of ``0 in 2 D^T (D a - x) + lam * d|a|_1``."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if x.ndim == 1:
        x, a = x[:, None], a.reshape(-1, 1)
    g = 2.0 * dictionary.T @ (dictionary @ a - x)
    nz = a != 0
    viol = np.where(nz, np.abs(g + lam * np.sign(a)), np.maximum(np.abs(g) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


@dataclass
class IstaResult:
    code: np.ndarray
    trace: np.ndarray
    kkt: float


def max_step(dictionary) -> float:
    """Largest step with guaranteed descent, ``1 / (2 sigma_max(D^T D))``."""
    d = np.asarray(dictionary, dtype=np.float64)
    return 1.0 / (2.0 * np.linalg.norm(d, 2) ** 2)


def ista_reference_solve(x, dictionary, lam: float, step: float | None = None, iters: int = 1000,
                         tol: float = 1e-12) -> IstaResult:
    """Classical ISTA from ``a = 0``.

    ``a <- soft_threshold(a + 2 step D^T (x - D a), step lam)``. The trace holds
    the objective before the first and after every iteration. Raises
    :class:`StepSizeError` if it ever rises by more than ``tol`` (relative).
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(dictionary, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if step is None:
        step = max_step(d)
    a = np.zeros((d.shape[1], x.shape[1]))
    gram = d.T @ d
    dtx = d.T @ x
    trace = np.empty(iters + 1)
    trace[0] = lasso_objective(x, d, a, lam)
    thr = step * lam
    for k in range(iters):
        z = a + 2.0 * step * (dtx - gram @ a)
        a = np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
        r = x - d @ a
        trace[k + 1] = np.vdot(r, r) + lam * np.abs(a).sum()
        if trace[k + 1] > trace[k] + tol * max(1.0, abs(trace[k])):
            raise StepSizeError(f"objective rose at iteration {k + 1}: {trace[k]:.6g} -> {trace[k + 1]:.6g}")
    kkt = kkt_residual(x, d, a, lam)
    return IstaResult(a[:, 0] if squeeze else a, trace, kkt)


# ---------------------------------------------------------------------------
# learned adapters
# ---------------------------------------------------------------------------

def init_code(x0: torch.Tensor, p0: torch.Tensor) -> torch.Tensor:
    """``a0 = P0 x0``; applied per step when ``x0`` has leading time/batch axes."""
    if p0.shape[-1] != x0.shape[-2]:
        raise ValueError(f"P0 expects {p0.shape[-1]} channels, tokens have {x0.shape[-2]}")
    return torch.matmul(p0, x0)


class CodeInit(nn.Module):
    """Learned projection producing the first sparse code of an adapter chain."""

    def __init__(self, dim_in: int, latent: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(latent, dim_in))
        nn.init.normal_(self.weight, std=1.0 / np.sqrt(dim_in))

    def forward(self, x0: torch.Tensor) -> torch.Tensor:
        return init_code(x0, self.weight)


def tda_forward(a_multi: torch.Tensor, weight: torch.Tensor, pool: int) -> torch.Tensor:
    """Temporal downsampling attention.

    ``a_multi`` is (T, B, L, N) or (T, L, N). Each step is flattened, average-
    and max-pooled to ``pool`` values, and both descriptors go through the
    same bias-free linear map ``weight`` of shape (T, T*pool). The sigmoid of
    their sum weights the steps.
    """
    squeeze = a_multi.dim() == 3
    if squeeze:
        a_multi = a_multi.unsqueeze(1)
    alpha = tda_weights(a_multi, weight, pool)  # (B, T)
    out = torch.einsum("bt,tbln->bln", alpha, a_multi)
    return out[0] if squeeze else out


def tda_weights(a_multi: torch.Tensor, weight: torch.Tensor, pool: int) -> torch.Tensor:
    """The attention scores alpha in (0, 1)^T used by :func:`tda_forward`."""
    if a_multi.dim() == 3:
        a_multi = a_multi.unsqueeze(1)
    t, b = a_multi.shape[:2]
    if weight.shape != (t, t * pool):
        raise ValueError(f"TDA weight {tuple(weight.shape)} does not fit T={t}, pool={pool}")
    flat = a_multi.permute(1, 0, 2, 3).reshape(b, t, -1)
    avg = F.adaptive_avg_pool1d(flat, pool).reshape(b, -1)
    mx = F.adaptive_max_pool1d(flat, pool).reshape(b, -1)
    return torch.sigmoid(avg @ weight.T + mx @ weight.T)


class TDA(nn.Module):
    """Collapses a T-step sparse code to one step with learned sigmoid weights."""

    def __init__(self, steps: int, pool: int = 8):
        super().__init__()
        self.steps = steps
        self.pool = pool
        self.weight = nn.Parameter(torch.empty(steps, steps * pool))
        nn.init.normal_(self.weight, std=0.02)

    def forward(self, a_multi: torch.Tensor) -> torch.Tensor:
        return tda_forward(a_multi, self.weight, self.pool)

    def attention(self, a_multi: torch.Tensor) -> torch.Tensor:
        return tda_weights(a_multi, self.weight, self.pool)


@dataclass
class AdapterParams:
    """Plain-tensor view of one adapter: analysis, dictionary, synthesis, thresholds."""

    P: torch.Tensor        # (L, M_in)
    D: torch.Tensor        # (M_in, L)
    D_out: torch.Tensor    # (M_out, L)
    theta: torch.Tensor    # (L,), used through abs()


def ista_adapter_forward(x_src: torch.Tensor, a_prev: torch.Tensor, params: AdapterParams,
                         tda: TDA | None = None, *, skip: bool = True,
                         single_step_target: bool = False,
                         temporal: str = "tda") -> tuple[torch.Tensor, torch.Tensor]:
    """One unrolled ISTA iteration followed by synthesis.

    ``x_src`` is (B, M, N) or (T, B, M, N); ``a_prev`` is (B, L, N) or
    (T, B, L, N) and broadcasts over time. With ``skip`` the thresholded
    code is averaged with its input; without it the update is plain ISTA.
    When the code is multi-step and the target branch is single-step it is
    collapsed by TDA (``temporal="tda"``) or by a time mean (``"mean"``).
    Returns the mapped features and the code to pass down the chain.
    """
    a = a_prev + torch.matmul(params.P, x_src - torch.matmul(params.D, a_prev))
    theta = torch.abs(params.theta)[:, None]
    shrunk = soft_threshold(a, theta)
    a = 0.5 * (shrunk + a) if skip else shrunk
    multi = x_src.dim() == 4 or a_prev.dim() == 4
    if multi and single_step_target:
        if temporal == "tda":
            if tda is None:
                raise ValueError("multi-step code needs a TDA module for a single-step target")
            a = tda(a)
        elif temporal == "mean":
            a = a.mean(dim=0)
        else:
            raise ValueError(f"unknown temporal reduction {temporal!r}")
    return torch.matmul(params.D_out, a), a


class IstaAdapter(nn.Module):
    """Learned ISTA adapter with its own P_k, D_k, D'_k and theta_k.

    The TDA module is passed at call time so several adapters can share one.
    """

    def __init__(self, dim_in: int, latent: int, dim_out: int | None = None, *,
                 single_step_target: bool = False, temporal: str = "tda",
                 skip: bool = True, theta_init: float = 0.01):
        super().__init__()
        dim_out = dim_in if dim_out is None else dim_out
        self.P = nn.Parameter(torch.empty(latent, dim_in))
        self.D = nn.Parameter(torch.empty(dim_in, latent))
        self.D_out = nn.Parameter(torch.empty(dim_out, latent))
        self.theta = nn.Parameter(torch.full((latent,), float(theta_init)))
        nn.init.normal_(self.D, std=1.0 / np.sqrt(dim_in))
        nn.init.normal_(self.P, std=0.1 / np.sqrt(dim_in))
        nn.init.normal_(self.D_out, std=0.02)
        self.skip = skip
        self.single_step_target = single_step_target
        self.temporal = temporal

    @property
    def params(self) -> AdapterParams:
        return AdapterParams(self.P, self.D, self.D_out, self.theta)

    def forward(self, x_src: torch.Tensor, a_prev: torch.Tensor,
                tda: TDA | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        temporal = self.temporal
        if temporal == "tda" and tda is None and x_src.dim() == 4 and x_src.shape[0] == 1:
            # one time step: collapsing is just dropping the axis
            temporal = "mean"
        return ista_adapter_forward(x_src, a_prev, self.params, tda, skip=self.skip,
                                    single_step_target=self.single_step_target, temporal=temporal)


def tied_adapter_params(dictionary: np.ndarray | torch.Tensor, lam: float, step: float,
                        dtype=torch.float64) -> AdapterParams:
    """Parameters that turn one adapter into one exact ISTA iteration (skip off)."""
    d = torch.as_tensor(np.asarray(dictionary), dtype=dtype)
    latent = d.shape[1]
    return AdapterParams(P=2.0 * step * d.T.clone(), D=d.clone(),
                         D_out=d.clone(),
                         theta=torch.full((latent,), step * lam, dtype=dtype))
