"""Minimal weight perturbation onto the certificate-feasible set.

Given a baseline network, the solver looks for nearby weights admitting
a positive semidefinite certificate matrix with non-negative multipliers,
leaving every bias untouched.  Two modes are offered:

``eig_penalty``
    Penalized first-order descent on the weights: merit is the squared
    perturbation norm plus a growing penalty on the squared feasibility
    gap, with the gap's subgradient taken through the eigenvectors at
    the minimum eigenvalue.  Multipliers are refreshed between penalty
    rounds by the certificate search at fixed weights.

``conservative_lmi``
    Drops the quadratic weight terms from the certificate matrix (they
    only add positive semidefinite mass, so the reduced constraint is
    sufficient) and alternates between projecting onto the positive
    semidefinite cone and restoring the fixed diagonal structure.

Before either mode runs, a structural screen checks a provable emptiness
condition: with zero off-corner blocks and a negative semidefinite tail
block, a positive semidefinite certificate forces the leading corner
block to be positive semidefinite on its own.  When that corner block
has a negative eigenvalue the feasible set is empty for every weight
choice, and the solver reports failure immediately instead of grinding.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import certkit, matkit
from .errors import ContractError
from .neuralfield import Mlp

__all__ = [
    "SolverConfig",
    "PerturbResult",
    "flatten_weights",
    "unflatten_weights",
    "feasibility_gap",
    "perturb",
    "write_trace",
    "TRACE_HEADER",
]

TRACE_HEADER = "iteration,gap,norm,rho"

# trimmed certificate search used for multiplier refreshes
_REFRESH = certkit.SearchConfig(coord_passes=2, golden_iters=10, bisect_iters=40)

_EIG_CLUSTER = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    ``margin`` is the strict-feasibility target the penalty mode aims
    for: the penalized residual chases min_eig >= margin, so that the
    finite-penalty stationary point still satisfies min_eig >= -psd_tol.
    Feasibility of iterates is always judged against psd_tol alone.

    ``seed`` is reserved for future randomized variants and is recorded
    in artifacts; both current modes are deterministic and ignore it.
    """

    mode: str = "eig_penalty"
    rho_init: float = 10.0
    rho_growth: float = 6.0
    max_rounds: int = 12
    step_init: float = 0.1
    backtrack: float = 0.5
    max_iters: int = 150
    psd_tol: float = 1e-9
    margin: float = 1e-6
    stagnation_tol: float = 1e-10
    structural_screen: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("eig_penalty", "conservative_lmi"):
            raise ContractError(f"unknown solver mode {self.mode!r}")
        if not (self.rho_init > 0.0 and self.step_init > 0.0):
            raise ContractError("rho_init and step_init must be positive")
        if not self.rho_growth > 1.0:
            raise ContractError("rho_growth must exceed 1")
        if not (0.0 < self.backtrack < 1.0):
            raise ContractError("backtrack factor must lie in (0, 1)")
        if self.max_rounds < 1 or self.max_iters < 1:
            raise ContractError("max_rounds and max_iters must be >= 1")
        if self.psd_tol < 0.0 or self.stagnation_tol < 0.0:
            raise ContractError("tolerances must be >= 0")
        if not self.margin > 0.0:
            raise ContractError("margin must be positive")


@dataclass(frozen=True)
class PerturbResult:
    """Outcome of a perturbation solve.

    The certificate always refers to the returned network.  On failure
    the baseline is returned unchanged (norm 0) and ``best_min_eig``
    records the largest minimum eigenvalue seen on any iterate, so a
    failure is never silent.  ``trace`` rows are (iteration, gap, norm,
    rho) tuples in solve order.
    """

    net: Mlp
    certificate: certkit.Certificate
    perturbation_norm: float
    iterations: int
    feasible: bool
    reason: str
    best_min_eig: float
    trace: list = field(default_factory=list, repr=False)


def flatten_weights(net):
    """All weight entries, layer-major then row-major; biases excluded."""
    return np.concatenate([w.ravel() for w in net.weights])


def unflatten_weights(net, vec):
    """Net with weights taken from ``vec`` in flatten order; biases kept."""
    vec = np.asarray(vec, dtype=float)
    total = sum(w.size for w in net.weights)
    if vec.shape != (total,):
        raise ContractError(f"expected {total} entries, got {vec.shape}")
    out = net.copy()
    pos = 0
    for w in out.weights:
        w[:] = vec[pos : pos + w.size].reshape(w.shape)
        pos += w.size
    return out


def _family_qsr(net, family):
    """Resolve a family selector to the supply rate the gap is evaluated at.

    The strict-passivity family's matrix is maximized at the index
    origin, so its gap is measured there.
    """
    if isinstance(family, certkit.QsrSpec):
        return family
    if family == "strict_passivity":
        n0 = net.layer_dims[0]
        if n0 % 2 != 0:
            raise ContractError("strict_passivity family needs an even state width")
        return certkit.qsr_preset("passivity", n0 // 2, n0 // 2)
    raise ContractError("family must be a QsrSpec or 'strict_passivity'")


def feasibility_gap(net, family, p22, mult):
    """max(0, -min_eig) of the certificate matrix at the given point.

    ``family`` may also be a prebuilt PBlocks, in which case ``p22`` is
    not consulted (the blocks already carry it).
    """
    if isinstance(family, certkit.PBlocks):
        pb = family
    else:
        qsr = _family_qsr(net, family)
        pb = certkit.PBlocks.theorem_blocks(qsr, p22)
    m = certkit.build_ml(net, pb, mult)
    return max(0.0, -matkit.min_eig(m))


def _min_eig_and_grads(net, pb, mult):
    """Minimum eigenvalue of the certificate matrix and its weight slopes.

    Degenerate minima (eigenvalues within a small cluster width) are
    handled by averaging the per-eigenvector gradients, which keeps the
    direction deterministic.
    """
    m = certkit.build_ml(net, pb, mult)
    res = matkit.sym_eig(m)
    mu = float(res.values[0])
    members = [
        k for k in range(len(res.values)) if res.values[k] <= mu + _EIG_CLUSTER
    ]
    dims = net.layer_dims
    offs = np.concatenate([[0], np.cumsum(dims)])
    slopes = [certkit.slope_constants(a) for a in net.activations]
    grads = [np.zeros_like(w) for w in net.weights]
    for k in members:
        v = res.vectors[:, k]
        parts = [v[offs[i] : offs[i + 1]] for i in range(len(dims))]
        for i in range(net.n_layers):
            p_i, m_i = slopes[i]
            c = mult.per_layer[i] * mult.lam
            wv = net.weights[i] @ parts[i]
            grads[i] += 2.0 * c * p_i * np.outer(wv, parts[i]) - 2.0 * c * m_i * np.outer(
                parts[i + 1], parts[i]
            )
    inv = 1.0 / len(members)
    for g in grads:
        g *= inv
    return mu, grads


def _norm_from(net, base_flat):
    return float(np.linalg.norm(flatten_weights(net) - base_flat))


def _screen_blocked(qsr):
    """Provably empty feasible set: the corner block is indefinite."""
    return matkit.min_eig(qsr.p11()) < -1e-12


def _refresh_multipliers(net, family, p22):
    if isinstance(family, certkit.QsrSpec):
        cert = certkit.verify(net, family, p22, _REFRESH)
        return cert.multipliers, cert.min_eig_ml
    res = certkit.relaxed_indices(net, p22, _REFRESH)
    gap_mult = res.multipliers
    qsr = _family_qsr(net, family)
    pb = certkit.PBlocks.theorem_blocks(qsr, p22)
    me = matkit.min_eig(certkit.build_ml(net, pb, gap_mult))
    return gap_mult, float(me)


def _reverify(net, family, p22, psd_tol):
    cfg = certkit.SearchConfig(psd_tol=psd_tol)
    return certkit.verify(net, family, p22, cfg)


def perturb(baseline, family, p22, cfg=None):
    """Move the baseline weights onto the certificate-feasible set.

    Among all iterates that met the feasibility tolerance, the one with
    the smallest perturbation norm is returned, re-verified by an
    independent certificate search.  Biases are never touched.
    """
    cfg = cfg or SolverConfig()
    if not isinstance(baseline, Mlp):
        raise ContractError("baseline must be an Mlp")
    p22 = matkit.as_symmetric(p22, atol=1e-12)
    if not matkit.sym_eig(p22).values[-1] < 0.0:
        raise ContractError("P22 must be negative definite")
    qsr = _family_qsr(baseline, family)
    if qsr.n_y + qsr.n_u != baseline.layer_dims[0]:
        raise ContractError("supply-rate dimensions do not cover the state")
    if p22.shape[0] != baseline.layer_dims[-1]:
        raise ContractError("P22 size does not match the network output")

    if cfg.structural_screen and _screen_blocked(qsr):
        cert = _reverify(baseline, family, p22, cfg.psd_tol)
        corner = matkit.min_eig(qsr.p11())
        return PerturbResult(
            net=baseline.copy(),
            certificate=cert,
            perturbation_norm=0.0,
            iterations=0,
            feasible=False,
            reason=(
                "structurally infeasible: the supply-rate corner block has "
                f"minimum eigenvalue {corner:.6g} < 0, and with zero "
                "off-corner blocks and a negative definite tail block a "
                "positive semidefinite certificate matrix would require "
                "that corner block to be positive semidefinite, for every "
                "weight choice"
            ),
            best_min_eig=cert.min_eig_ml,
            trace=[],
        )

    if cfg.mode == "eig_penalty":
        return _solve_eig_penalty(baseline, family, qsr, p22, cfg)
    return _solve_conservative(baseline, family, qsr, p22, cfg)


def _solve_eig_penalty(baseline, family, qsr, p22, cfg):
    # The penalty chases min_eig >= margin rather than >= 0, so the
    # finite-rho residual of the quadratic penalty still lands inside
    # the feasible set; the smallest-norm feasible iterate then wins.
    pb = certkit.PBlocks.theorem_blocks(qsr, p22)
    base_flat = flatten_weights(baseline)
    base_w = [w.copy() for w in baseline.weights]
    mult, me = _refresh_multipliers(baseline, family, p22)
    work = baseline.copy()
    best_min_eig = me
    best_feasible = None  # (norm, weights snapshot)
    if me >= -cfg.psd_tol:
        best_feasible = (0.0, [w.copy() for w in work.weights])

    trace = []
    iterations = 0
    rho = cfg.rho_init
    prev_round_pen = math.inf
    prev_best_norm = math.inf
    for _round in range(cfg.max_rounds):
        step = cfg.step_init
        mu, grads = _min_eig_and_grads(work, pb, mult)
        pen = max(0.0, cfg.margin - mu)
        norm = _norm_from(work, base_flat)
        merit = norm * norm + rho * pen * pen
        round_best_pen = pen
        for _it in range(cfg.max_iters):
            iterations += 1
            trace.append((iterations, max(0.0, -mu), norm, rho))
            if mu >= -cfg.psd_tol and (
                best_feasible is None or norm < best_feasible[0]
            ):
                best_feasible = (norm, [w.copy() for w in work.weights])
            if mu >= -cfg.psd_tol and norm == 0.0:
                break
            # merit gradient: 2 (W - Wbar) - 2 rho pen d(min_eig)/dW
            gw = [2.0 * (w - b) for w, b in zip(work.weights, base_w)]
            if pen > 0.0:
                for g, dmu in zip(gw, grads):
                    g -= 2.0 * rho * pen * dmu
            accepted = False
            while step >= 1e-14:
                trial = work.copy()
                for w, g in zip(trial.weights, gw):
                    w -= step * g
                mu_t, grads_t = _min_eig_and_grads(trial, pb, mult)
                pen_t = max(0.0, cfg.margin - mu_t)
                norm_t = _norm_from(trial, base_flat)
                merit_t = norm_t * norm_t + rho * pen_t * pen_t
                if merit_t < merit - 1e-15:
                    work = trial
                    mu, grads, pen, norm, merit = mu_t, grads_t, pen_t, norm_t, merit_t
                    best_min_eig = max(best_min_eig, mu)
                    round_best_pen = min(round_best_pen, pen)
                    accepted = True
                    step = min(step / cfg.backtrack, 10.0 * cfg.step_init)
                    break
                step *= cfg.backtrack
            if not accepted:
                break
        mult, me = _refresh_multipliers(work, family, p22)
        best_min_eig = max(best_min_eig, me)
        norm_now = _norm_from(work, base_flat)
        if me >= -cfg.psd_tol and (
            best_feasible is None or norm_now < best_feasible[0]
        ):
            best_feasible = (norm_now, [w.copy() for w in work.weights])
        if best_feasible is not None:
            if best_feasible[0] == 0.0:
                break
            if prev_best_norm - best_feasible[0] < cfg.stagnation_tol:
                break
            prev_best_norm = best_feasible[0]
        elif prev_round_pen - round_best_pen < cfg.stagnation_tol:
            break
        prev_round_pen = round_best_pen
        rho *= cfg.rho_growth

    if best_feasible is not None:
        norm, weights = best_feasible
        out = baseline.copy()
        for w, src in zip(out.weights, weights):
            w[:] = src
        cert = _reverify(out, family, p22, cfg.psd_tol)
        return PerturbResult(
            net=out,
            certificate=cert,
            perturbation_norm=_norm_from(out, base_flat),
            iterations=iterations,
            feasible=bool(cert.feasible),
            reason="feasible iterate found" if cert.feasible else (
                "re-verification fell short of the feasibility tolerance"
            ),
            best_min_eig=max(best_min_eig, cert.min_eig_ml),
            trace=trace,
        )
    cert = _reverify(baseline, family, p22, cfg.psd_tol)
    return PerturbResult(
        net=baseline.copy(),
        certificate=cert,
        perturbation_norm=0.0,
        iterations=iterations,
        feasible=False,
        reason=(
            "no feasible iterate within the round budget; best certificate "
            f"minimum eigenvalue seen was {best_min_eig:.6g}"
        ),
        best_min_eig=max(best_min_eig, cert.min_eig_ml),
        trace=trace,
    )


def _conservative_matrix(net, pb, mult):
    """Certificate matrix without the quadratic weight terms.

    The dropped terms are positive semidefinite (slope products are
    non-negative), so feasibility of this matrix implies feasibility of
    the full one.
    """
    dims = net.layer_dims
    offs = np.concatenate([[0], np.cumsum(dims)])
    n = int(offs[-1])
    m = np.zeros((n, n))
    m[: dims[0], : dims[0]] += pb.p11
    m[offs[-2] :, offs[-2] :] += pb.p22
    m[: dims[0], offs[-2] :] += pb.p12
    m[offs[-2] :, : dims[0]] += pb.p21
    slopes = [certkit.slope_constants(a) for a in net.activations]
    for i in range(net.n_layers):
        c = mult.per_layer[i] * mult.lam
        _p, m_i = slopes[i]
        r = slice(offs[i + 1], offs[i + 2])
        s = slice(offs[i], offs[i + 1])
        m[r, r] += c * np.eye(dims[i + 1])
        blk = -c * m_i * net.weights[i]
        m[r, s] += blk
        m[s, r] += blk.T
    return m


def _solve_conservative(baseline, family, qsr, p22, cfg):
    pb = certkit.PBlocks.theorem_blocks(qsr, p22)
    base_flat = flatten_weights(baseline)
    mult, me0 = _refresh_multipliers(baseline, family, p22)
    slopes = [certkit.slope_constants(a) for a in baseline.activations]
    dims = baseline.layer_dims
    offs = np.concatenate([[0], np.cumsum(dims)])

    work = baseline.copy()
    best_min_eig = me0
    best_feasible = None
    if me0 >= -cfg.psd_tol:
        best_feasible = (0.0, [w.copy() for w in work.weights])
    trace = []
    iterations = 0
    for _it in range(cfg.max_iters):
        iterations += 1
        if iterations % 50 == 0:
            mult, me = _refresh_multipliers(work, family, p22)
            best_min_eig = max(best_min_eig, me)
        m = _conservative_matrix(work, pb, mult)
        res = matkit.sym_eig(m)
        cons_gap = max(0.0, -float(res.values[0]))
        norm = _norm_from(work, base_flat)
        trace.append((iterations, cons_gap, norm, 0.0))
        full_gap = feasibility_gap(work, family, p22, mult)
        if full_gap <= cfg.psd_tol:
            best_min_eig = max(best_min_eig, -full_gap)
            if best_feasible is None or norm < best_feasible[0]:
                best_feasible = (norm, [w.copy() for w in work.weights])
        if cons_gap <= cfg.psd_tol:
            break
        # project onto the cone, then restore the affine structure by
        # reading weights back off the sub-diagonal blocks
        clipped = res.vectors @ np.diag(np.maximum(res.values, 0.0)) @ res.vectors.T
        clipped = 0.5 * (clipped + clipped.T)
        for i in range(work.n_layers):
            c = mult.per_layer[i] * mult.lam
            m_i = slopes[i][1]
            if c * m_i <= 1e-14:
                continue
            blk = clipped[offs[i + 1] : offs[i + 2], offs[i] : offs[i + 1]]
            work.weights[i][:] = -blk / (c * m_i)

    if best_feasible is not None:
        norm, weights = best_feasible
        out = baseline.copy()
        for w, src in zip(out.weights, weights):
            w[:] = src
        cert = _reverify(out, family, p22, cfg.psd_tol)
        return PerturbResult(
            net=out,
            certificate=cert,
            perturbation_norm=_norm_from(out, base_flat),
            iterations=iterations,
            feasible=bool(cert.feasible),
            reason="feasible iterate found" if cert.feasible else (
                "re-verification fell short of the feasibility tolerance"
            ),
            best_min_eig=max(best_min_eig, cert.min_eig_ml),
            trace=trace,
        )
    cert = _reverify(baseline, family, p22, cfg.psd_tol)
    return PerturbResult(
        net=baseline.copy(),
        certificate=cert,
        perturbation_norm=0.0,
        iterations=iterations,
        feasible=False,
        reason=(
            "alternating projection did not reach the feasibility tolerance; "
            f"best certificate minimum eigenvalue seen was {best_min_eig:.6g}"
        ),
        best_min_eig=max(best_min_eig, cert.min_eig_ml),
        trace=trace,
    )


def write_trace(path, rows):
    """Solver trace as CSV with columns iteration, gap, norm, rho."""
    lines = [TRACE_HEADER]
    for it, gap, norm, rho in rows:
        lines.append(f"{int(it)},{gap!r},{norm!r},{rho!r}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
