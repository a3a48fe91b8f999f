"""Structured perspective regularization (SPR).

For one prunable entity with weights ``w`` the penalty is the value of the
inner minimization over the relaxed indicator ``y``::

    z(w) = min { alpha*||w||_2^2 / y + (1 - alpha)*y  :  ||w||_inf / M <= y <= 1 }

The minimizer is the stationary point ``sqrt(alpha / (1 - alpha)) * ||w||_2``
clamped to ``[||w||_inf / M, 1]``, which gives four regimes:

=============  =========================  ===========================================
regime         y~                         z
=============  =========================  ===========================================
zero           0                          0
interior       the stationary point       2*sqrt(alpha*(1-alpha))*||w||_2
lower-clamp    ||w||_inf / M              alpha*M*||w||_2^2/||w||_inf + (1-alpha)*||w||_inf/M
upper-clamp    1                          alpha*||w||_2^2 + (1 - alpha)
=============  =========================  ===========================================

Every value is computed from the regime's closed form, never by dividing by
``y~``, so tiny ``y~`` is harmless.  When ``||w||_inf > M`` the box is empty;
``y~ = 1`` is used there (upper-clamp), which keeps ``z`` continuous.

``variant="literal"`` reproduces the coefficients of the original
derivation as written (``min`` with the lower bound, no ``alpha`` on the
quadratic terms, ``(1 + alpha)`` factor).  It exists for side-by-side
comparison only.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "REGIMES",
    "SprParams",
    "PenaltyEval",
    "PenaltyResult",
    "spr_rows",
    "ytilde",
    "spr_value",
    "spr_grad",
    "spr_eval",
    "aggregate_penalty",
    "baseline_penalty",
    "l2_penalty",
    "kept_l2_coefficients",
    "weighted_l2",
    "nonprunable_coef",
    "entity_diagnostics",
    "diagnostics_csv",
]

REGIMES = ("zero", "interior", "lower-clamp", "upper-clamp")
ZERO, INTERIOR, LOWER, UPPER = range(4)
VARIANTS = ("consistent", "literal")
NONPRUNABLE = ("mean-entity", "plain", "none")


def nonprunable_coef(lam: float, alpha: float, n_entities: int, mode: str = "mean-entity") -> float:
    if mode == "mean-entity":
        return lam * alpha / n_entities
    if mode == "plain":
        return lam * alpha
    if mode == "none":
        return 0.0
    raise ValueError(f"unknown nonprunable mode {mode!r}")


@dataclass(frozen=True)
class SprParams:
    """Hyper-parameters of the penalty; the bounds M live on the partition.

    ``lam = 0`` is accepted and means "no penalty at all".

    ``nonprunable`` sets the l2 coefficient on weights outside every entity
    (biases, classifier head): ``"mean-entity"`` uses ``lam*alpha/N``, the
    per-weight l2 strength of an average kept entity; ``"plain"`` uses
    ``lam*alpha``; ``"none"`` leaves them unregularized.
    """

    lam: float
    alpha: float
    variant: str = "consistent"
    nonprunable: str = "mean-entity"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.nonprunable not in NONPRUNABLE:
            raise ValueError(f"unknown nonprunable mode {self.nonprunable!r}")


@dataclass
class PenaltyEval:
    value: float
    grad: np.ndarray
    ytilde: float
    regime: str


def _check_inputs(rows, alpha, M):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    M = np.broadcast_to(np.asarray(M, dtype=np.float64), rows.shape[:1])
    if np.any(M <= 0):
        raise ValueError("M must be positive")
    if not np.all(np.isfinite(rows)):
        raise ValueError("non-finite weights")
    return M


def spr_rows(rows, alpha: float, M, variant: str = "consistent", with_grad: bool = True):
    """Evaluate the penalty for a stack of equally sized entities.

    ``rows`` has shape ``(k, u)``; ``M`` is a scalar or a length-``k`` array.
    Returns ``(z, grad, ytilde, regime)`` with shapes ``(k,), (k, u), (k,), (k,)``.
    ``grad`` is None when ``with_grad`` is false.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("rows must be 2-d")
    M = _check_inputs(rows, alpha, M)
    k = rows.shape[0]
    absw = np.abs(rows)
    l2sq = np.einsum("ij,ij->i", rows, rows)
    linf = absw.max(axis=1) if rows.shape[1] else np.zeros(k)
    nz = linf > 0
    l2 = np.sqrt(l2sq)
    # rescale where the squares under/overflow so norms of tiny entities stay exact
    odd = nz & ((l2sq < 1e-280) | ~np.isfinite(l2sq))
    if odd.any():
        scaled = rows[odd] / linf[odd, None]
        l2[odd] = linf[odd] * np.sqrt(np.einsum("ij,ij->i", scaled, scaled))
    lo = linf / M
    if alpha == 1.0:
        root = np.where(nz, np.inf, 0.0)
    else:
        root = np.sqrt(alpha / (1.0 - alpha)) * l2

    z = np.zeros(k)
    yt = np.zeros(k)
    regime = np.full(k, ZERO, dtype=np.int8)
    grad = np.zeros_like(rows) if with_grad else None
    # lowest-index maximiser carries the l_inf subgradient
    jstar = absw.argmax(axis=1) if rows.shape[1] else np.zeros(k, dtype=np.int64)
    ar = np.arange(k)

    if variant == "consistent":
        upper = nz & (np.maximum(lo, root) >= 1.0)
        inner = nz & ~upper & (root > lo)
        lower = nz & ~upper & ~inner
        yt = np.where(upper, 1.0, np.where(inner, root, np.where(lower, lo, 0.0)))
        c_int = 2.0 * np.sqrt(alpha * (1.0 - alpha))
        q_coef, lin_coef = alpha, 1.0 - alpha  # z = q*M*l2^2/linf + lin*linf/M on lower
        up_q = alpha
        int_coef = c_int
    elif variant == "literal":
        lit = np.minimum(np.minimum(lo, root), 1.0)
        inner = nz & (lo <= root) & (root <= 1.0)
        lower = nz & ~inner & (root <= lo) & (lo <= 1.0)
        upper = nz & ~inner & ~lower
        yt = np.where(nz, lit, 0.0)
        q_coef, lin_coef = 1.0, 1.0 - alpha
        up_q = 1.0
        int_coef = np.sqrt((1.0 - alpha) / alpha) * (1.0 + alpha) if alpha > 0 else 0.0
    else:
        raise ValueError(f"unknown variant {variant!r}")

    regime[inner] = INTERIOR
    regime[lower] = LOWER
    regime[upper] = UPPER

    z[inner] = int_coef * l2[inner]
    z[upper] = up_q * l2sq[upper] + (1.0 - alpha)
    if lower.any():
        Ml, li = M[lower], linf[lower]
        ratio = l2[lower] / li  # in [1, sqrt(u)]; avoids squaring tiny norms
        z[lower] = q_coef * Ml * l2[lower] * ratio + lin_coef * li / Ml

    if with_grad:
        if inner.any():
            grad[inner] = int_coef * rows[inner] / l2[inner, None]
        if upper.any():
            grad[upper] = 2.0 * up_q * rows[upper]
        if lower.any():
            idx = ar[lower]
            Ml, li = M[lower], linf[lower]
            ratio = l2[lower] / li
            g = 2.0 * q_coef * Ml[:, None] * (rows[lower] / li[:, None])
            js = jstar[lower]
            sg = np.sign(rows[idx, js])
            # |w_j*| = linf, so d/dw_j* of M*l2^2/linf collapses to M*sign*(2 - ratio^2)
            g[np.arange(idx.size), js] = q_coef * Ml * sg * (2.0 - ratio**2) + lin_coef * sg / Ml
            grad[lower] = g
    return z, grad, yt, regime


def _single(w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("entity weights must be a 1-d vector")
    return w[None, :]


def spr_eval(w, alpha: float, M: float, variant: str = "consistent") -> PenaltyEval:
    z, g, y, r = spr_rows(_single(w), alpha, M, variant)
    return PenaltyEval(float(z[0]), g[0], float(y[0]), REGIMES[r[0]])


def ytilde(w, alpha: float, M: float, variant: str = "consistent") -> tuple[float, str]:
    """Optimal relaxed indicator for fixed weights, and the active regime."""
    _, _, y, r = spr_rows(_single(w), alpha, M, variant, with_grad=False)
    return float(y[0]), REGIMES[r[0]]


def spr_value(w, alpha: float, M: float, variant: str = "consistent") -> float:
    z, _, _, _ = spr_rows(_single(w), alpha, M, variant, with_grad=False)
    return float(z[0])


def spr_grad(w, alpha: float, M: float, variant: str = "consistent") -> np.ndarray:
    return spr_rows(_single(w), alpha, M, variant)[1][0]


# ---------------------------------------------------------------------------
# whole-network penalties
# ---------------------------------------------------------------------------


@dataclass
class PenaltyResult:
    value: float
    grad: np.ndarray
    prunable_value: float = 0.0
    other_value: float = 0.0


def _flat(net_or_params) -> np.ndarray:
    return getattr(net_or_params, "params", net_or_params)


def aggregate_penalty(net_or_params, partition, params: SprParams) -> PenaltyResult:
    """``lam * sum_i (u_i / U) * z_i`` plus an l2 term on the non-prunable weights.

    The l2 coefficient on non-prunable weights follows ``params.nonprunable``.

    ``partition`` is a :class:`sprkit.groups.EntityPartition` (anything with
    ``blocks``, ``total_u`` and ``nonprunable_mask(n)`` works).
    """
    w = _flat(net_or_params)
    grad = np.zeros_like(w)
    if params.lam == 0.0:
        return PenaltyResult(0.0, grad)
    total_u = partition.total_u
    pr_value = 0.0
    for block in partition.blocks:
        rows = w[block.index]
        z, g, _, _ = spr_rows(rows, params.alpha, block.M, params.variant)
        weight = params.lam * block.u / total_u
        pr_value += weight * float(z.sum())
        grad[block.index] += weight * g
    other = partition.nonprunable_mask(w.size)
    wo = w[other]
    coef = nonprunable_coef(params.lam, params.alpha, len(partition), params.nonprunable)
    other_value = coef * float(wo @ wo)
    grad[other] += 2.0 * coef * wo
    return PenaltyResult(pr_value + other_value, grad, pr_value, other_value)


def l2_penalty(net_or_params, lam: float, mask: np.ndarray | None = None) -> PenaltyResult:
    """``lam * sum w^2`` over ``mask`` (all parameters when None)."""
    w = _flat(net_or_params)
    grad = np.zeros_like(w)
    sel = w if mask is None else w[mask]
    value = lam * float(sel @ sel)
    if mask is None:
        grad[:] = 2.0 * lam * w
    else:
        grad[mask] = 2.0 * lam * sel
    return PenaltyResult(value, grad, other_value=value)


def kept_l2_coefficients(partition, lam: float, alpha: float, frozen=None, nonprunable: str = "mean-entity") -> np.ndarray:
    """Per-weight l2 coefficients of the pruned model's objective with y fixed.

    A kept entity contributes ``lam*(u_i/U)*alpha*||w_i||^2`` (its SPR value at
    ``y = 1``), so its weights get ``lam*alpha*u_i/U``; non-prunable weights
    get :func:`nonprunable_coef`; frozen weights get 0.
    """
    coef = np.full(partition.n_params, nonprunable_coef(lam, alpha, len(partition), nonprunable))
    total_u = partition.total_u
    for block in partition.blocks:
        coef[block.index] = lam * alpha * block.u / total_u
    if frozen is not None:
        coef[frozen] = 0.0
    return coef


def weighted_l2(net_or_params, coef: np.ndarray) -> PenaltyResult:
    w = _flat(net_or_params)
    cw = coef * w
    value = float(cw @ w)
    return PenaltyResult(value, 2.0 * cw, other_value=value)


def baseline_penalty(kind: str, net_or_params, partition, lam: float) -> PenaltyResult:
    """Comparison regularizers: ``l2``, ``l1`` (all weights) or ``group_lasso`` (entities).

    Subgradients are 0 at every kink.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    w = _flat(net_or_params)
    if kind == "l2":
        return l2_penalty(w, lam)
    if kind == "l1":
        return PenaltyResult(lam * float(np.abs(w).sum()), lam * np.sign(w))
    if kind == "group_lasso":
        grad = np.zeros_like(w)
        value = 0.0
        for block in partition.blocks:
            rows = w[block.index]
            norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
            scale = lam * np.sqrt(block.u)
            value += scale * float(norms.sum())
            safe = np.where(norms > 0, norms, 1.0)
            grad[block.index] = np.where(norms[:, None] > 0, scale * rows / safe[:, None], 0.0)
        return PenaltyResult(value, grad, prunable_value=value)
    raise ValueError(f"unknown baseline penalty {kind!r}")


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

DIAG_COLUMNS = ("entity_id", "layer", "u", "M", "ytilde", "regime", "z", "l2", "linf")


def entity_diagnostics(net_or_params, partition, alpha: float, variant: str = "consistent") -> list[dict]:
    """Per-entity ``(ytilde, regime, z, ||w||_2, ||w||_inf)`` rows, ordered by entity id."""
    w = _flat(net_or_params)
    out = []
    for block in partition.blocks:
        rows = w[block.index]
        z, _, yt, reg = spr_rows(rows, alpha, block.M, variant, with_grad=False)
        for r, eid in enumerate(block.entity_ids):
            ent = partition.entities[eid]
            out.append(
                {
                    "entity_id": int(eid),
                    "layer": ent.layer_id,
                    "u": ent.u,
                    "M": float(block.M[r]),
                    "ytilde": float(yt[r]),
                    "regime": REGIMES[reg[r]],
                    "z": float(z[r]),
                    "l2": float(np.linalg.norm(rows[r])),
                    "linf": float(np.abs(rows[r]).max()) if rows.shape[1] else 0.0,
                }
            )
    out.sort(key=lambda d: d["entity_id"])
    return out


def diagnostics_csv(rows: list[dict], extra: tuple[str, ...] = ()) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=DIAG_COLUMNS + tuple(extra), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
