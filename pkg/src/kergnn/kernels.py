"""P-step random walk kernels between attributed graphs.

Two routes compute the same quantity:

* `rw_kernel_oracle` materializes the direct product graph and evaluates
  sum_p lambda_p * s^T A_x^p s with explicit matrix powers. Slow, used as
  the reference in tests.
* `rw_kernel` uses the Hadamard identity

      K_p = sum_ij [ (X_H X_G^T) (.) (A_H^p X_H (A_G^p X_G)^T) ]_ij

  which never forms the product graph. The deep variant multiplies each
  (i, j) summand by a per-node-pair weight, shared across all p.

`rw_kernel_grad` returns the exact derivatives of the Hadamard form with
respect to the filter-side parameters. The stacked_* functions evaluate the
same forward/backward over every subgraph of a graph and every filter of a
layer at once; they are the training fast path and are pinned to the scalar
functions by tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RWKernelConfig",
    "KernelGradients",
    "direct_product_graph",
    "rw_kernel_oracle",
    "rw_kernel",
    "rw_kernel_grad",
    "walk_kernel",
    "stacked_kernel_forward",
    "stacked_kernel_backward",
    "StackedKernelCache",
]


@dataclass(frozen=True)
class RWKernelConfig:
    """Walk length P, per-step weights lambda_0..lambda_P, and variant."""

    P: int
    lambdas: tuple = None
    variant: str = "plain"

    def __post_init__(self):
        if self.P < 0:
            raise ValueError("P must be >= 0")
        lambdas = self.lambdas
        if lambdas is None:
            lambdas = (1.0,) * (self.P + 1)
        lambdas = tuple(float(x) for x in np.atleast_1d(lambdas))
        if len(lambdas) != self.P + 1:
            raise ValueError(f"lambdas must have P+1 = {self.P + 1} entries, got {len(lambdas)}")
        if any(x < 0 for x in lambdas):
            raise ValueError("lambda weights must be nonnegative")
        if self.variant not in ("plain", "deep"):
            raise ValueError(f"unknown kernel variant: {self.variant!r}")
        object.__setattr__(self, "lambdas", lambdas)

    @property
    def is_deep(self) -> bool:
        return self.variant == "deep"


@dataclass
class KernelGradients:
    d_adjacency: np.ndarray
    d_attributes: np.ndarray
    d_deep_weights: np.ndarray | None = None


def _arrays(g) -> tuple:
    """(adjacency, attributes) from a Graph/Subgraph/GraphFilter or pair."""
    if isinstance(g, tuple):
        adj, attr = g
    else:
        adj, attr = g.adjacency, g.attributes
    return np.asarray(adj, dtype=np.float64), np.asarray(attr, dtype=np.float64)


# ---------------------------------------------------------------------------
# Direct product oracle
# ---------------------------------------------------------------------------


def direct_product_graph(g1, g2) -> tuple:
    """Adjacency of the direct product graph and the flattened similarities.

    Nodes of the product are pairs (i, j), i from g1 and j from g2, laid out
    column-major so that A_x = kron(A_2, A_1) and s = vec(X_1 X_2^T).
    """
    a1, x1 = _arrays(g1)
    a2, x2 = _arrays(g2)
    if x1.shape[1] != x2.shape[1]:
        raise ValueError(f"attribute widths differ: {x1.shape[1]} vs {x2.shape[1]}")
    a_cross = np.kron(a2, a1)
    s = (x1 @ x2.T).flatten(order="F")
    return a_cross, s


def rw_kernel_oracle(g1, g2, cfg: RWKernelConfig) -> float:
    """sum_p lambda_p * s^T A_x^p s via explicit matrix powers. Test oracle."""
    a_cross, s = direct_product_graph(g1, g2)
    power = np.eye(a_cross.shape[0])
    value = 0.0
    for p in range(cfg.P + 1):
        if p > 0:
            power = power @ a_cross
        value += cfg.lambdas[p] * float(s @ power @ s)
    return value


# ---------------------------------------------------------------------------
# Hadamard form
# ---------------------------------------------------------------------------


def walk_kernel(adj_h, attr_h, adj_g, attr_g, cfg: RWKernelConfig, pair_weights=None) -> float:
    """Hadamard-form kernel on raw arrays; H indexes rows, G columns."""
    adj_h = np.asarray(adj_h, dtype=np.float64)
    attr_h = np.asarray(attr_h, dtype=np.float64)
    adj_g = np.asarray(adj_g, dtype=np.float64)
    attr_g = np.asarray(attr_g, dtype=np.float64)
    if attr_h.shape[1] != attr_g.shape[1]:
        raise ValueError(f"attribute widths differ: {attr_h.shape[1]} vs {attr_g.shape[1]}")
    if cfg.is_deep:
        if pair_weights is None:
            raise ValueError("deep variant requires pair weights")
        pair_weights = np.asarray(pair_weights, dtype=np.float64)
        if pair_weights.shape != (adj_h.shape[0], adj_g.shape[0]):
            raise ValueError(
                f"pair weights shape {pair_weights.shape} != "
                f"({adj_h.shape[0]}, {adj_g.shape[0]})"
            )

    s = attr_h @ attr_g.T
    t = s * pair_weights if cfg.is_deep else s
    uh, vg = attr_h, attr_g
    value = cfg.lambdas[0] * float(np.sum(t * (uh @ vg.T)))
    for p in range(1, cfg.P + 1):
        uh = adj_h @ uh
        vg = adj_g @ vg
        value += cfg.lambdas[p] * float(np.sum(t * (uh @ vg.T)))
    return value


def rw_kernel(sub, filt, cfg: RWKernelConfig, deep_weights=None, normalize=False) -> float:
    """Kernel between a padded subgraph and a graph filter.

    Padded slots have zero attribute rows, so they contribute exact zeros.
    With normalize=True the value is divided by sqrt(K(sub,sub)*K(filt,filt))
    computed without pair weights; off by default.
    """
    value = walk_kernel(filt.adjacency, filt.attributes, sub.adjacency, sub.attributes, cfg, deep_weights)
    if not normalize:
        return value
    plain = RWKernelConfig(cfg.P, cfg.lambdas, "plain")
    k_ss = walk_kernel(sub.adjacency, sub.attributes, sub.adjacency, sub.attributes, plain)
    k_ff = walk_kernel(filt.adjacency, filt.attributes, filt.adjacency, filt.attributes, plain)
    denom = np.sqrt(k_ss * k_ff)
    if denom <= 0:
        return 0.0
    return value / denom


def rw_kernel_grad(sub, filt, cfg: RWKernelConfig, deep_weights=None):
    """Kernel value plus exact gradients w.r.t. the filter parameters.

    The adjacency gradient is the symmetrized matrix-power split sum with a
    zeroed diagonal, matching the symmetric zero-diagonal parameterization.
    """
    adj_h = np.asarray(filt.adjacency, dtype=np.float64)
    attr_h = np.asarray(filt.attributes, dtype=np.float64)
    adj_g = np.asarray(sub.adjacency, dtype=np.float64)
    attr_g = np.asarray(sub.attributes, dtype=np.float64)
    if attr_h.shape[1] != attr_g.shape[1]:
        raise ValueError(f"attribute widths differ: {attr_h.shape[1]} vs {attr_g.shape[1]}")
    if cfg.is_deep and deep_weights is None:
        raise ValueError("deep variant requires pair weights")

    n = adj_h.shape[0]
    # cached powers A_H^0..A_H^P and A_G^0..A_G^P
    pows_h = [np.eye(n)]
    pows_g = [np.eye(adj_g.shape[0])]
    for _ in range(cfg.P):
        pows_h.append(pows_h[-1] @ adj_h)
        pows_g.append(pows_g[-1] @ adj_g)

    s = attr_h @ attr_g.T
    if cfg.is_deep:
        w = np.asarray(deep_weights, dtype=np.float64)
        t = s * w
    else:
        t = s

    u = [ph @ attr_h for ph in pows_h]
    v = [pg @ attr_g for pg in pows_g]
    msum = np.zeros_like(s)
    value = 0.0
    for p in range(cfg.P + 1):
        m_p = u[p] @ v[p].T
        msum += cfg.lambdas[p] * m_p
        value += cfg.lambdas[p] * float(np.sum(t * m_p))

    gs = msum * w if cfg.is_deep else msum
    d_attr = gs @ attr_g
    d_adj = np.zeros_like(adj_h)
    for p in range(cfg.P + 1):
        z = cfg.lambdas[p] * (t @ v[p])  # dK/dU_p
        d_attr += pows_h[p] @ z
        zx = z @ attr_h.T
        for q in range(p):
            d_adj += pows_h[q] @ zx @ pows_h[p - 1 - q]
    d_adj = (d_adj + d_adj.T) / 2.0
    np.fill_diagonal(d_adj, 0.0)

    d_deep = s * msum if cfg.is_deep else None
    return value, KernelGradients(d_adjacency=d_adj, d_attributes=d_attr, d_deep_weights=d_deep)


# ---------------------------------------------------------------------------
# Stacked evaluation: every subgraph of a graph against every filter at once
# ---------------------------------------------------------------------------


@dataclass
class StackedKernelCache:
    """Intermediates saved by stacked_kernel_forward for the backward pass."""

    cfg: RWKernelConfig
    attr_h: np.ndarray  # (f, n, d)
    pows_h: list  # [A_H^1..A_H^P], each (f, n, n)
    pows_g: list  # [A_G^1..A_G^P], each (N, k, k)
    x_sub: np.ndarray  # (N, k, d)
    u: list  # U_p, (f, n, d)
    v: list  # V_p, (N, k, d)
    s4: np.ndarray  # (f, n, N, k)
    msum4: np.ndarray  # (f, n, N, k), lambda-weighted sum of M_p
    t4: np.ndarray  # S or W (.) S
    weights: np.ndarray | None  # (f, n, k)


def stacked_kernel_forward(attr_h, pows_h, x_sub, pows_g, cfg: RWKernelConfig, weights=None):
    """Kernel values (N, f) of all subgraphs against all filters.

    attr_h: (f, n, d) filter attributes; pows_h: [A_H^1..A_H^P] stacked per
    filter; x_sub: (N, k, d) padded subgraph attributes; pows_g likewise per
    node. Everything reduces to (f*n, N*k) matmuls.
    """
    f, n, d = attr_h.shape
    big_n, k, _ = x_sub.shape
    xh2 = attr_h.reshape(f * n, d)
    xs2 = x_sub.reshape(big_n * k, d)

    s2 = xh2 @ xs2.T
    s4 = s2.reshape(f, n, big_n, k)
    msum2 = cfg.lambdas[0] * s2  # M_0 == S
    u = [attr_h]
    v = [x_sub]
    for p in range(1, cfg.P + 1):
        u_p = pows_h[p - 1] @ attr_h
        v_p = pows_g[p - 1] @ x_sub
        u.append(u_p)
        v.append(v_p)
        msum2 = msum2 + cfg.lambdas[p] * (u_p.reshape(f * n, d) @ v_p.reshape(big_n * k, d).T)
    msum4 = msum2.reshape(f, n, big_n, k)

    if cfg.is_deep:
        if weights is None:
            raise ValueError("deep variant requires pair weights")
        t4 = s4 * weights[:, :, None, :]
    else:
        t4 = s4

    values = np.einsum("fnvk,fnvk->vf", t4, msum4)
    cache = StackedKernelCache(
        cfg=cfg, attr_h=attr_h, pows_h=pows_h, pows_g=pows_g, x_sub=x_sub,
        u=u, v=v, s4=s4, msum4=msum4, t4=t4, weights=weights,
    )
    return values, cache


def stacked_kernel_backward(cache: StackedKernelCache, gout):
    """Gradients of sum_{v,i} gout[v,i] * K[v,i].

    Returns (d_attr_h, d_adj_h, d_weights, d_x_sub); d_adj_h is symmetrized
    with a zero diagonal, d_weights is None for the plain variant.
    """
    cfg = cache.cfg
    f, n, big_n, k = cache.s4.shape
    d = cache.attr_h.shape[2]
    xh2 = cache.attr_h.reshape(f * n, d)
    xs2 = cache.x_sub.reshape(big_n * k, d)
    gb = gout.T[:, None, :, None]  # broadcast over (f, n, N, k)

    gs4 = cache.msum4 * cache.weights[:, :, None, :] if cfg.is_deep else cache.msum4
    gsg2 = (gs4 * gb).reshape(f * n, big_n * k)
    tg2 = (cache.t4 * gb).reshape(f * n, big_n * k)

    d_weights = None
    if cfg.is_deep:
        d_weights = np.einsum("vf,fnvk->fnk", gout, cache.s4 * cache.msum4)

    d_xh = (gsg2 @ xs2).reshape(f, n, d)
    d_xsub = (gsg2.T @ xh2).reshape(big_n, k, d)
    d_adj = np.zeros((f, n, n))
    for p in range(cfg.P + 1):
        zu = cfg.lambdas[p] * (tg2 @ cache.v[p].reshape(big_n * k, d)).reshape(f, n, d)
        zv = cfg.lambdas[p] * (tg2.T @ cache.u[p].reshape(f * n, d)).reshape(big_n, k, d)
        d_xh += cache.pows_h[p - 1] @ zu if p > 0 else zu
        d_xsub += cache.pows_g[p - 1] @ zv if p > 0 else zv
        if p > 0:
            zx = zu @ cache.attr_h.transpose(0, 2, 1)  # (f, n, n)
            for q in range(p):
                term = zx
                if q > 0:
                    term = cache.pows_h[q - 1] @ term
                if p - 1 - q > 0:
                    term = term @ cache.pows_h[p - 2 - q]
                d_adj += term
    d_adj = (d_adj + d_adj.transpose(0, 2, 1)) / 2.0
    idx = np.arange(n)
    d_adj[:, idx, idx] = 0.0
    return d_xh, d_adj, d_weights, d_xsub
