"""Dissipativity certificates for MLP vector fields.

A model is certified by exhibiting a positive semidefinite certificate
matrix assembled from the network weights, per-layer slope constants of
the activations, non-negative layer multipliers, and a quadratic supply
rate described by matrices (Q, S, R).  The module provides the supply
rate presets, the slope quadratic, three assembly routes (the layer
stack, the corner embedding, and the full certificate matrix), pointwise
empirical checks, and the feasibility searches.

Assembly is deliberately implemented twice: ``build_ml`` writes the full
matrix directly, while ``build_pl`` plus ``build_st`` compose it from its
two summands.  Tests pin the two routes against each other.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import matkit
from .errors import ContractError, DataError
from .neuralfield import Activation, Mlp, forward

__all__ = [
    "PSD_TOL",
    "QsrSpec",
    "qsr_preset",
    "slope_constants",
    "slope_quadratic",
    "PBlocks",
    "Multipliers",
    "build_st",
    "build_pl",
    "build_ml",
    "lemma1_quadratic",
    "supply_rate",
    "empirical_dissipativity",
    "SearchConfig",
    "Certificate",
    "verify",
    "RelaxedIndices",
    "relaxed_indices",
    "s_procedure_holds",
    "net_file_digest",
    "save_certificate",
    "load_certificate",
    "CERT_FORMAT",
]

PSD_TOL = 1e-9

CERT_FORMAT = "dissnode-cert-1"


class QsrSpec:
    """Supply-rate matrices: Q acts on output pairs, R on input pairs.

    Q and R must be symmetric within 1e-12; they are stored symmetrized.
    """

    def __init__(self, q, s, r):
        self.q = matkit.as_symmetric(q, atol=1e-12)
        self.r = matkit.as_symmetric(r, atol=1e-12)
        s = np.asarray(s, dtype=float)
        if s.ndim != 2 or s.shape != (self.q.shape[0], self.r.shape[0]):
            raise ContractError(
                f"S shape {s.shape} does not bridge Q {self.q.shape} and R {self.r.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise ContractError("S has non-finite entries")
        self.s = s.copy()

    @property
    def n_y(self):
        return self.q.shape[0]

    @property
    def n_u(self):
        return self.r.shape[0]

    def p11(self):
        """Corner block [[Q, S], [S^T, R]] as one dense matrix."""
        return matkit.frob_block_assemble([[self.q, self.s], [self.s.T, self.r]])

    def __eq__(self, other):
        return (
            isinstance(other, QsrSpec)
            and np.array_equal(self.q, other.q)
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.r, other.r)
        )


def qsr_preset(kind, n_y, n_u, **params):
    """Standard supply-rate families at the requested dimensions.

    kinds and parameters:
      l2_gain(gamma > 0)            Q = -(1/gamma) I, S = 0, R = gamma I
      passivity                     Q = 0, S = I/2, R = 0
      strict_passivity(eps, delta)  Q = -eps I, S = I/2, R = -delta I
      conicity(c, r > 0)            Q = -I, S = c I, R = (r^2 - c^2) I
      sector(a, b)                  Q = -I, S = (a + b) I, R = -a b I

    Every kind except l2_gain couples outputs to inputs through a scaled
    identity, so those require n_y = n_u.
    """
    n_y, n_u = int(n_y), int(n_u)
    if n_y < 1 or n_u < 1:
        raise ContractError("dimensions must be positive")
    iy, iu = np.eye(n_y), np.eye(n_u)
    if kind == "l2_gain":
        gamma = float(params.pop("gamma"))
        _no_extra(kind, params)
        if not gamma > 0.0:
            raise ContractError("l2_gain needs gamma > 0")
        return QsrSpec(-(1.0 / gamma) * iy, np.zeros((n_y, n_u)), gamma * iu)
    if n_y != n_u:
        raise ContractError(f"{kind} preset needs n_y = n_u")
    if kind == "passivity":
        _no_extra(kind, params)
        return QsrSpec(0.0 * iy, 0.5 * iy, 0.0 * iu)
    if kind == "strict_passivity":
        eps = float(params.pop("eps"))
        delta = float(params.pop("delta"))
        _no_extra(kind, params)
        if not (eps > 0.0 and delta > 0.0):
            raise ContractError("strict_passivity needs eps > 0 and delta > 0")
        return QsrSpec(-eps * iy, 0.5 * iy, -delta * iu)
    if kind == "conicity":
        c = float(params.pop("c"))
        r = float(params.pop("r"))
        _no_extra(kind, params)
        if not r > 0.0:
            raise ContractError("conicity needs r > 0")
        return QsrSpec(-iy, c * iy, (r * r - c * c) * iu)
    if kind == "sector":
        a = float(params.pop("a"))
        b = float(params.pop("b"))
        _no_extra(kind, params)
        return QsrSpec(-iy, (a + b) * iy, -(a * b) * iu)
    raise ContractError(f"unknown preset kind {kind!r}")


def _no_extra(kind, params):
    if params:
        raise ContractError(f"{kind} got unexpected parameters {sorted(params)}")


def slope_constants(act):
    """(p, m) = (alpha*beta, (alpha+beta)/2) for an activation."""
    if not isinstance(act, Activation):
        raise ContractError("expected an Activation")
    return act.alpha * act.beta, 0.5 * (act.alpha + act.beta)


def slope_quadratic(v_a, v_b, act):
    """Quadratic form whose non-positivity encodes the slope restriction.

    With dv = v_b - v_a and dphi = phi(v_b) - phi(v_a) this is
    p |dv|^2 - 2 m dv.dphi + |dphi|^2, which factors elementwise as
    (dphi - alpha dv)(dphi - beta dv) and is therefore <= 0 whenever
    every secant slope of phi lies in [alpha, beta].
    """
    v_a = np.atleast_1d(np.asarray(v_a, dtype=float))
    v_b = np.atleast_1d(np.asarray(v_b, dtype=float))
    if v_a.shape != v_b.shape or v_a.ndim != 1:
        raise ContractError("v_a and v_b must be 1-D with equal length")
    p, m = slope_constants(act)
    dv = v_b - v_a
    dphi = act.apply(v_b) - act.apply(v_a)
    return float(p * dv @ dv - 2.0 * m * dv @ dphi + dphi @ dphi)


class PBlocks:
    """Corner blocks of the certificate: P11, P12, P21, P22.

    P11 and P22 must be symmetric within 1e-12 and P21 must equal P12^T.
    The theorem configuration uses P11 = [[Q, S], [S^T, R]], zero
    off-corners and negative definite P22; the general form is accepted
    here because the layer-stack lemma does not restrict the blocks.
    """

    def __init__(self, p11, p22, p12=None, p21=None):
        self.p11 = matkit.as_symmetric(p11, atol=1e-12)
        self.p22 = matkit.as_symmetric(p22, atol=1e-12)
        n0, nl = self.p11.shape[0], self.p22.shape[0]
        if p12 is None and p21 is None:
            p12 = np.zeros((n0, nl))
            p21 = np.zeros((nl, n0))
        elif p12 is None or p21 is None:
            raise ContractError("supply both P12 and P21 or neither")
        p12 = np.asarray(p12, dtype=float)
        p21 = np.asarray(p21, dtype=float)
        if p12.shape != (n0, nl) or p21.shape != (nl, n0):
            raise ContractError(
                f"off-corner shapes {p12.shape}/{p21.shape} do not match {n0}x{nl}"
            )
        if not (np.all(np.isfinite(p12)) and np.all(np.isfinite(p21))):
            raise ContractError("non-finite off-corner blocks")
        if np.max(np.abs(p12.T - p21)) > 1e-12:
            raise ContractError("P21 must equal P12 transposed")
        self.p12 = p12.copy()
        self.p21 = p21.copy()

    @classmethod
    def theorem_blocks(cls, qsr, p22):
        """Zero off-corners, P11 assembled from the supply-rate matrices."""
        return cls(qsr.p11(), p22)

    @property
    def n0(self):
        return self.p11.shape[0]

    @property
    def nl(self):
        return self.p22.shape[0]


@dataclass(frozen=True)
class Multipliers:
    """Non-negative multipliers: one per layer, plus a shared factor.

    The shared factor ``lam`` only ever multiplies a per-layer value
    (every assembled block carries a product lambda_i * lam), so the pair
    (per_layer, lam) and (lam * per_layer, 1) produce identical matrices.
    It is therefore fixed to 1 by default and kept only so the assembled
    form matches its written definition.
    """

    per_layer: tuple
    lam: float = 1.0

    def __post_init__(self):
        pl = tuple(float(v) for v in self.per_layer)
        if len(pl) == 0:
            raise ContractError("need at least one per-layer multiplier")
        if any(not (v >= 0.0 and math.isfinite(v)) for v in pl):
            raise ContractError("per-layer multipliers must be finite and >= 0")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ContractError("lam must be finite and >= 0")
        object.__setattr__(self, "per_layer", pl)
        object.__setattr__(self, "lam", float(self.lam))


def _layer_slopes(net):
    return [slope_constants(a) for a in net.activations]


def _check_net_mult(net, mult):
    if not isinstance(net, Mlp):
        raise ContractError("expected an Mlp")
    if not isinstance(mult, Multipliers):
        raise ContractError("expected Multipliers")
    if len(mult.per_layer) != net.n_layers:
        raise ContractError(
            f"{len(mult.per_layer)} multipliers for {net.n_layers} layers"
        )


def build_st(net, mult):
    """Stacked slope-restriction matrix over all layers.

    Block row i couples the inputs and outputs of layer i+1; the shared
    factor of ``mult`` is not used here (it enters when the stack is
    combined with the corner embedding).
    """
    _check_net_mult(net, mult)
    dims = net.layer_dims
    slopes = _layer_slopes(net)
    lams = mult.per_layer
    n_blocks = len(dims)
    grid = [[None] * n_blocks for _ in range(n_blocks)]
    for i in range(n_blocks):
        p_next = None
        block = np.zeros((dims[i], dims[i]))
        if i > 0:
            block += lams[i - 1] * np.eye(dims[i])
        if i < n_blocks - 1:
            p_next, _m = slopes[i]
            w = net.weights[i]
            block += lams[i] * p_next * (w.T @ w)
        grid[i][i] = block
    for i in range(1, n_blocks):
        _p, m = slopes[i - 1]
        w = net.weights[i - 1]
        grid[i][i - 1] = -lams[i - 1] * m * w
        grid[i - 1][i] = (-lams[i - 1] * m * w).T
    return matkit.frob_block_assemble(grid)


def build_pl(pb, layer_dims):
    """Corner embedding of the P blocks into the stacked coordinates."""
    if not isinstance(pb, PBlocks):
        raise ContractError("expected PBlocks")
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ContractError("layer_dims needs at least two entries")
    if pb.n0 != dims[0] or pb.nl != dims[-1]:
        raise ContractError(
            f"P blocks sized {pb.n0}/{pb.nl} do not match dims {dims[0]}/{dims[-1]}"
        )
    n_blocks = len(dims)
    grid = [[None] * n_blocks for _ in range(n_blocks)]
    for i, d in enumerate(dims):
        grid[i][i] = np.zeros((d, d))
    grid[0][0] = pb.p11.copy()
    if n_blocks == 2:
        # both corners share the single off-diagonal block position
        grid[0][1] = pb.p12.copy()
        grid[1][0] = pb.p21.copy()
        grid[1][1] = pb.p22.copy()
        return matkit.frob_block_assemble(grid)
    grid[0][n_blocks - 1] = pb.p12.copy()
    grid[n_blocks - 1][0] = pb.p21.copy()
    grid[n_blocks - 1][n_blocks - 1] = pb.p22.copy()
    return matkit.frob_block_assemble(grid)


def build_ml(net, pb, mult):
    """Certificate matrix, written out directly block by block.

    Layout over block coordinates (z^0, .., z^l):
      diagonal 0:      P11 + c_1 p_1 W_1^T W_1
      diagonal i:      c_i I + c_{i+1} p_{i+1} W_{i+1}^T W_{i+1}
      diagonal l:      P22 + c_l I
      below diagonal:  -c_i m_i W_i at (i, i-1)
      corners:         P12 at (0, l), P21 at (l, 0)
    with c_i = lambda_i * lam.  For a single-layer network the corner
    position coincides with the sub-diagonal one and the two terms add.
    """
    _check_net_mult(net, mult)
    if not isinstance(pb, PBlocks):
        raise ContractError("expected PBlocks")
    dims = net.layer_dims
    if pb.n0 != dims[0] or pb.nl != dims[-1]:
        raise ContractError("P block sizes do not match the network")
    offs = np.concatenate([[0], np.cumsum(dims)])
    n = int(offs[-1])
    slopes = _layer_slopes(net)
    c = [v * mult.lam for v in mult.per_layer]
    m_l = np.zeros((n, n))

    def at(i, j):
        return slice(offs[i], offs[i + 1]), slice(offs[j], offs[j + 1])

    m_l[at(0, 0)] += pb.p11
    m_l[at(len(dims) - 1, len(dims) - 1)] += pb.p22
    m_l[at(0, len(dims) - 1)] += pb.p12
    m_l[at(len(dims) - 1, 0)] += pb.p21
    for i in range(net.n_layers):
        p_i, m_i = slopes[i]
        w = net.weights[i]
        m_l[at(i, i)] += c[i] * p_i * (w.T @ w)
        m_l[at(i + 1, i + 1)] += c[i] * np.eye(dims[i + 1])
        m_l[at(i + 1, i)] += -c[i] * m_i * w
        m_l[at(i, i + 1)] += (-c[i] * m_i * w).T
    return m_l


def lemma1_quadratic(net, z_a, z_b, pb):
    """Input-output quadratic form for a pair of network evaluations."""
    if not isinstance(pb, PBlocks):
        raise ContractError("expected PBlocks")
    z_a = np.asarray(z_a, dtype=float)
    z_b = np.asarray(z_b, dtype=float)
    dz0 = z_b - z_a
    if dz0.shape != (pb.n0,):
        raise ContractError(f"inputs must have length {pb.n0}")
    dzl = forward(net, z_b) - forward(net, z_a)
    return float(
        dz0 @ pb.p11 @ dz0
        + dz0 @ pb.p12 @ dzl
        + dzl @ pb.p21 @ dz0
        + dzl @ pb.p22 @ dzl
    )


def supply_rate(dy, du, qsr):
    """Pointwise supply rate of an output/input difference pair."""
    dy = np.atleast_1d(np.asarray(dy, dtype=float))
    du = np.atleast_1d(np.asarray(du, dtype=float))
    if dy.shape != (qsr.n_y,) or du.shape != (qsr.n_u,):
        raise ContractError(
            f"expected lengths {qsr.n_y} and {qsr.n_u}, got {dy.shape} and {du.shape}"
        )
    return float(dy @ qsr.q @ dy + 2.0 * (dy @ qsr.s @ du) + du @ qsr.r @ du)


def empirical_dissipativity(net, pairs, qsr):
    """Minimum supply rate over trajectory pairs, sample by sample.

    Each pair must share dt and length, with rows laid out as the
    network state (outputs first, then inputs).  A model consistent with
    pointwise incremental dissipativity keeps this minimum above -tol.
    """
    if qsr.n_y + qsr.n_u != net.layer_dims[0]:
        raise ContractError("supply-rate dimensions do not cover the state")
    pairs = list(pairs)
    if len(pairs) == 0:
        raise ContractError("no trajectory pairs")
    worst = math.inf
    for idx, (ta, tb) in enumerate(pairs):
        if ta.dt != tb.dt or len(ta) != len(tb):
            raise ContractError(f"pair {idx}: mismatched dt or length")
        if ta.samples.shape[1] != net.layer_dims[0]:
            raise ContractError(f"pair {idx}: sample width")
        d = ta.samples - tb.samples
        dy = d[:, : qsr.n_y]
        du = d[:, qsr.n_y :]
        rates = (
            np.einsum("ti,ij,tj->t", dy, qsr.q, dy)
            + 2.0 * np.einsum("ti,ij,tj->t", dy, qsr.s, du)
            + np.einsum("ti,ij,tj->t", du, qsr.r, du)
        )
        worst = min(worst, float(np.min(rates)))
    return worst


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for the deterministic multiplier search."""

    psd_tol: float = PSD_TOL
    coord_passes: int = 3
    grid_lo: float = 1e-2
    grid_hi: float = 1e3
    grid_points: int = 11
    golden_iters: int = 24
    bisect_iters: int = 60
    shift_cap: float = 1e6

    def __post_init__(self):
        if not (self.psd_tol >= 0.0 and self.grid_lo > 0.0 and self.grid_hi > self.grid_lo):
            raise ContractError("bad search configuration")
        if min(self.coord_passes, self.grid_points, self.golden_iters, self.bisect_iters) < 1:
            raise ContractError("iteration counts must be >= 1")

    def grid(self):
        return np.geomspace(self.grid_lo, self.grid_hi, self.grid_points)


@dataclass(frozen=True)
class Certificate:
    """Outcome of a feasibility search.

    feasible means the best matrix found clears -psd_tol with admissible
    multipliers; eps and delta are populated in family mode, None for a
    fixed supply rate.  net_digest ties the certificate to a model file.
    """

    feasible: bool
    qsr: QsrSpec
    p22: np.ndarray
    multipliers: Multipliers
    eps: float
    delta: float
    min_eig_ml: float
    psd_tol: float
    net_digest: str = None


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _coordinate_search(n_axes, score_fn, cfg):
    """Maximize score_fn over positive multipliers, one axis at a time.

    score_fn maps a multiplier tuple to an orderable score.  Ties keep
    the incumbent, so the outcome is deterministic: candidates are tried
    in grid order, lowest axis first.
    """
    point = [1.0] * n_axes
    best = score_fn(tuple(point))
    for _ in range(cfg.coord_passes):
        for axis in range(n_axes):
            for cand in cfg.grid():
                if cand == point[axis]:
                    continue
                trial = list(point)
                trial[axis] = float(cand)
                sc = score_fn(tuple(trial))
                if sc > best:
                    best = sc
                    point = trial
            # golden-section polish on this axis, in log space
            lo = math.log10(max(point[axis] / 10.0, cfg.grid_lo / 10.0))
            hi = math.log10(min(point[axis] * 10.0, cfg.grid_hi * 10.0))
            a, b = lo, hi
            c1 = b - _GOLDEN * (b - a)
            c2 = a + _GOLDEN * (b - a)

            def eval_at(x):
                trial = list(point)
                trial[axis] = 10.0**x
                return score_fn(tuple(trial))

            f1, f2 = eval_at(c1), eval_at(c2)
            for _it in range(cfg.golden_iters):
                if f1 >= f2:
                    b, c2, f2 = c2, c1, f1
                    c1 = b - _GOLDEN * (b - a)
                    f1 = eval_at(c1)
                else:
                    a, c1, f1 = c1, c2, f2
                    c2 = a + _GOLDEN * (b - a)
                    f2 = eval_at(c2)
            x = c1 if f1 >= f2 else c2
            sc = eval_at(x)
            if sc > best:
                best = sc
                point[axis] = 10.0**x
    return tuple(point), best


def _require_nd(p22):
    p22 = matkit.as_symmetric(p22, atol=1e-12)
    top = matkit.sym_eig(p22).values[-1]
    if not top < 0.0:
        raise ContractError("P22 must be negative definite")
    return p22


def _shift_matrices(net, qsr):
    """Diagonal directions of the eps and delta entries inside the matrix."""
    n = sum(net.layer_dims)
    d_y = np.zeros((n, n))
    d_u = np.zeros((n, n))
    for i in range(qsr.n_y):
        d_y[i, i] = 1.0
    for i in range(qsr.n_u):
        d_u[qsr.n_y + i, qsr.n_y + i] = 1.0
    return d_y, d_u


def _max_feasible_shift(g, target, cfg, lo_start=0.0):
    """Largest t with g(t) >= target, for g nonincreasing in t.

    Returns None when even t = -shift_cap fails; returns shift_cap when
    the cap itself is feasible.
    """
    if g(lo_start) >= target:
        lo, hi = lo_start, max(2.0 * abs(lo_start), 1.0)
        while g(hi) >= target:
            lo = hi
            hi *= 2.0
            if hi > cfg.shift_cap:
                return cfg.shift_cap
    else:
        hi, lo = lo_start, -max(2.0 * abs(lo_start), 1.0)
        while g(lo) < target:
            hi = lo
            lo *= 2.0
            if -lo > cfg.shift_cap:
                return None
    for _ in range(cfg.bisect_iters):
        mid = 0.5 * (lo + hi)
        if g(mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def verify(net, family, p22, cfg=None):
    """Search multipliers for a certificate of the given supply rate.

    ``family`` is either a fixed QsrSpec, or the string
    "strict_passivity" meaning Q = -eps I, S = I/2, R = -delta I with
    eps, delta >= 0 free.  Raising either index only shrinks the matrix
    diagonal, so over the family the minimum eigenvalue is maximized at
    eps = delta = 0 and feasibility is decided there; the certificate
    reports that boundary pair.
    """
    cfg = cfg or SearchConfig()
    p22 = _require_nd(p22)
    if p22.shape[0] != net.layer_dims[-1]:
        raise ContractError("P22 size does not match the network output")

    if isinstance(family, QsrSpec):
        qsr = family
        if qsr.n_y + qsr.n_u != net.layer_dims[0]:
            raise ContractError("supply-rate dimensions do not cover the state")
        pb = PBlocks.theorem_blocks(qsr, p22)

        def score(lams):
            m = build_ml(net, pb, Multipliers(lams))
            return matkit.min_eig(m)

        lams, best = _coordinate_search(net.n_layers, score, cfg)
        return Certificate(
            feasible=bool(best >= -cfg.psd_tol),
            qsr=qsr,
            p22=p22,
            multipliers=Multipliers(lams),
            eps=None,
            delta=None,
            min_eig_ml=float(best),
            psd_tol=cfg.psd_tol,
        )

    if family != "strict_passivity":
        raise ContractError("family must be a QsrSpec or 'strict_passivity'")
    n0 = net.layer_dims[0]
    if n0 % 2 != 0:
        raise ContractError("strict_passivity family needs an even state width")
    n_y = n0 // 2
    base = qsr_preset("passivity", n_y, n_y)
    pb0 = PBlocks.theorem_blocks(base, p22)

    def score(lams):
        m = build_ml(net, pb0, Multipliers(lams))
        return matkit.min_eig(m)

    lams, best = _coordinate_search(net.n_layers, score, cfg)
    return Certificate(
        feasible=bool(best >= -cfg.psd_tol),
        qsr=base,
        p22=p22,
        multipliers=Multipliers(lams),
        eps=0.0,
        delta=0.0,
        min_eig_ml=float(best),
        psd_tol=cfg.psd_tol,
    )


@dataclass(frozen=True)
class RelaxedIndices:
    """Least relaxation of the two passivity indices that admits a matrix.

    eps and delta are capped at zero from above: a model feasible without
    relaxation reports (0, 0).  The objective follows the written form
    min(-eps, 0) + min(-delta, 0).
    """

    eps: float
    delta: float
    multipliers: Multipliers
    min_eig_ml: float

    @property
    def objective(self):
        return min(-self.eps, 0.0) + min(-self.delta, 0.0)


def relaxed_indices(net, p22, cfg=None):
    """Sign-unconstrained passivity indices closest to zero.

    For each multiplier point the largest balanced shift of (eps, delta)
    keeping the matrix above -psd_tol is found by bisection, then each
    index is raised separately (two alternating passes), never above
    zero.  Multiplier points are ranked by the smaller index, then the
    index sum, then the matrix margin; all steps are deterministic.
    """
    cfg = cfg or SearchConfig()
    p22 = _require_nd(p22)
    if p22.shape[0] != net.layer_dims[-1]:
        raise ContractError("P22 size does not match the network output")
    n0 = net.layer_dims[0]
    if n0 % 2 != 0:
        raise ContractError("passivity indices need an even state width")
    n_y = n0 // 2
    base = qsr_preset("passivity", n_y, n_y)
    pb0 = PBlocks.theorem_blocks(base, p22)
    d_y, d_u = _shift_matrices(net, base)
    target = -cfg.psd_tol

    def indices_for(lams):
        m0 = build_ml(net, pb0, Multipliers(lams))

        def g_pair(e, d):
            return matkit.min_eig(m0 - e * d_y - d * d_u)

        t = _max_feasible_shift(lambda t: g_pair(t, t), target, cfg)
        if t is None:
            return None
        e = d = min(t, 0.0)
        for _ in range(2):
            e_new = _max_feasible_shift(
                lambda x: g_pair(x, d), target, cfg, lo_start=e
            )
            if e_new is not None:
                e = min(e_new, 0.0)
            d_new = _max_feasible_shift(
                lambda x: g_pair(e, x), target, cfg, lo_start=d
            )
            if d_new is not None:
                d = min(d_new, 0.0)
        return e, d, g_pair(e, d)

    def score(lams):
        res = indices_for(lams)
        if res is None:
            return (-math.inf, -math.inf, -math.inf)
        e, d, me = res
        return (min(e, d), e + d, me)

    lams, _best = _coordinate_search(net.n_layers, score, cfg)
    res = indices_for(lams)
    if res is None:
        # every multiplier point failed even at the shift cap
        m = build_ml(net, pb0, Multipliers(lams))
        return RelaxedIndices(
            eps=-math.inf,
            delta=-math.inf,
            multipliers=Multipliers(lams),
            min_eig_ml=float(matkit.min_eig(m)),
        )
    e, d, me = res
    return RelaxedIndices(
        eps=float(e),
        delta=float(d),
        multipliers=Multipliers(lams),
        min_eig_ml=float(me),
    )


def s_procedure_holds(f0, f1, lam, psd_tol=PSD_TOL):
    """Whether F0 - lam F1 clears -psd_tol for a non-negative lam.

    When it does, non-negativity of the F1 form implies non-negativity
    of the F0 form.
    """
    f0 = matkit.as_symmetric(f0, atol=1e-12)
    f1 = matkit.as_symmetric(f1, atol=1e-12)
    if f0.shape != f1.shape:
        raise ContractError("F0 and F1 must have equal dimensions")
    if not lam >= 0.0:
        raise ContractError("lam must be >= 0")
    return bool(matkit.min_eig(f0 - lam * f1) >= -psd_tol)


def net_file_digest(path):
    """Hex digest of a model file, for certificate provenance."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def save_certificate(path, cert):
    doc = {
        "format": CERT_FORMAT,
        "feasible": bool(cert.feasible),
        "qsr": {
            "q": cert.qsr.q.tolist(),
            "s": cert.qsr.s.tolist(),
            "r": cert.qsr.r.tolist(),
        },
        "p22": np.asarray(cert.p22).tolist(),
        "multipliers": {
            "per_layer": list(cert.multipliers.per_layer),
            "lam": cert.multipliers.lam,
        },
        "eps": cert.eps,
        "delta": cert.delta,
        "min_eig_ml": cert.min_eig_ml,
        "psd_tol": cert.psd_tol,
        "net_digest": cert.net_digest,
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_certificate(path):
    try:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read certificate {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CERT_FORMAT:
        raise DataError(f"certificate {path}: unknown format tag")
    try:
        qsr = QsrSpec(doc["qsr"]["q"], doc["qsr"]["s"], doc["qsr"]["r"])
        mult = Multipliers(
            tuple(doc["multipliers"]["per_layer"]), doc["multipliers"]["lam"]
        )
        return Certificate(
            feasible=bool(doc["feasible"]),
            qsr=qsr,
            p22=np.asarray(doc["p22"], dtype=float),
            multipliers=mult,
            eps=doc["eps"],
            delta=doc["delta"],
            min_eig_ml=float(doc["min_eig_ml"]),
            psd_tol=float(doc["psd_tol"]),
            net_digest=doc.get("net_digest"),
        )
    except (KeyError, TypeError, ValueError, ContractError) as exc:
        raise DataError(f"certificate {path}: {exc}") from exc
