"""Numerical verification of the exact algebraic identities.

Each check evaluates one identity on randomized instances with fixed seeds
and reports its maximum observed deviation against a pinned tolerance.  The
suite is the release gate behind the ``verify`` CLI subcommand; a corrupt
flag lets each check be deliberately broken to prove the gate trips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .estimators import (
    hat_matrix,
    profile_ls_objective,
    score_adaptive,
    score_collaboration,
    score_comparison,
)
from .model import (
    DIFFERENTIAL,
    InteractionMatrix,
    ModelSpec,
    RankSpace,
    beta_for_snr,
    build_mean_matrix,
    default_sum_budget,
    loss,
    signal_gap,
    signal_gap_closed_form,
    snr,
    space_contains,
)
from .poisson import bhattacharyya_affinity, cell_affinity_series
from .simulate import derive_seed, random_feasible_rank

GAP_SIZES = (5, 20, 100)
GAP_PAIRS_PER_SIZE = 1000
SCORE_INSTANCES = 50
DEFAULT_SEED = 20260810


@dataclass(frozen=True)
class IdentityResult:
    name: str
    passed: bool
    max_deviation: float
    tolerance: float
    seed: int
    detail: str = ""


def _rank_pairs(n: int, count: int, seed: int, restricted: bool = False):
    space = RankSpace.default_restricted(n) if restricted else RankSpace.default(n)
    pairs = []
    for idx in range(count):
        r = random_feasible_rank(space, derive_seed(seed, n, idx, 0)).entries
        r_tilde = random_feasible_rank(space, derive_seed(seed, n, idx, 1)).entries
        pairs.append((r, r_tilde))
    return space, pairs


def check_differential_gap(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Closed-form differential signal gap against direct summation."""
    tol = 1e-9
    worst = 0.0
    for n in GAP_SIZES:
        rng = np.random.default_rng(derive_seed(seed, 1, n))
        _, pairs = _rank_pairs(n, GAP_PAIRS_PER_SIZE, derive_seed(seed, 2, n))
        for r, r_tilde in pairs:
            beta = float(rng.uniform(0.1, 2.5))
            alpha = float(rng.uniform(-5.0, 5.0))
            model = ModelSpec.parametric(DIFFERENTIAL, n, alpha=alpha, beta_tilde=beta)
            direct = signal_gap(model, r, r_tilde)
            closed = signal_gap_closed_form(model, r, r_tilde)
            if corrupt:
                closed += 1e-3
            worst = max(worst, abs(direct - closed) / (1.0 + direct))
    return IdentityResult("differential-gap", worst <= tol, worst, tol, seed)


def check_poisson_gap(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Closed-form sqrt-scale Poisson gap against direct summation."""
    tol = 1e-9
    worst = 0.0
    for n in GAP_SIZES:
        rng = np.random.default_rng(derive_seed(seed, 3, n))
        _, pairs = _rank_pairs(n, GAP_PAIRS_PER_SIZE, derive_seed(seed, 4, n))
        for r, r_tilde in pairs:
            beta = float(rng.uniform(0.1, 2.5))
            model = ModelSpec.poisson_sqrt_linear(n, alpha=beta * n**2, beta_tilde=beta)
            direct = signal_gap(model, r, r_tilde)
            closed = signal_gap_closed_form(model, r, r_tilde)
            if corrupt:
                closed += 1e-3
            worst = max(worst, abs(direct - closed) / (1.0 + direct))
    return IdentityResult("poisson-gap", worst <= tol, worst, tol, seed)


def check_score_comparison(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Noise-free comparison scores equal theta_{r(i)} - Delta_r / n."""
    tol = 1e-12
    worst = 0.0
    for n in GAP_SIZES:
        rng = np.random.default_rng(derive_seed(seed, 5, n))
        _, pairs = _rank_pairs(n, SCORE_INSTANCES, derive_seed(seed, 6, n))
        for r, _ in pairs:
            theta = rng.normal(0.0, 2.0, n)
            if corrupt:
                theta = theta.copy()
                theta[0] += 1e-3
                model = ModelSpec.differential(theta)
                theta[0] -= 1e-3
            else:
                model = ModelSpec.differential(theta)
            X = InteractionMatrix(build_mean_matrix(model, r))
            s = score_comparison(X, theta).values
            delta_r = theta[r - 1].sum() - theta.sum()
            expected = theta[r - 1] - delta_r / n
            dev = np.max(np.abs(s - expected) / (1.0 + np.abs(expected)))
            worst = max(worst, float(dev))
    return IdentityResult("score-comparison", worst <= tol, worst, tol, seed)


def check_score_collaboration(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Noise-free collaboration scores equal theta_{r(i)} exactly."""
    tol = 1e-12
    worst = 0.0
    for n in GAP_SIZES:
        rng = np.random.default_rng(derive_seed(seed, 7, n))
        _, pairs = _rank_pairs(n, SCORE_INSTANCES, derive_seed(seed, 8, n))
        for r, _ in pairs:
            theta = rng.normal(0.0, 2.0, n)
            model = ModelSpec.additive(theta)
            X = InteractionMatrix(build_mean_matrix(model, r))
            s = score_collaboration(X).values
            expected = theta[r - 1]
            if corrupt:
                expected = expected + 1e-3
            dev = np.max(np.abs(s - expected) / (1.0 + np.abs(expected)))
            worst = max(worst, float(dev))
    return IdentityResult("score-collaboration", worst <= tol, worst, tol, seed)


def check_score_adaptive_linear(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Noise-free adaptive comparison scores are exactly linear in position."""
    tol = 1e-12
    worst = 0.0
    for n in GAP_SIZES:
        rng = np.random.default_rng(derive_seed(seed, 9, n))
        for _ in range(SCORE_INSTANCES):
            beta = float(rng.uniform(0.2, 3.0))
            alpha = float(rng.uniform(-4.0, 4.0))
            model = ModelSpec.parametric(DIFFERENTIAL, n, alpha=alpha, beta_tilde=beta)
            X = InteractionMatrix(build_mean_matrix(model, np.arange(1, n + 1)))
            s = score_adaptive(X, "comparison").values
            i = np.arange(1, n + 1, dtype=np.float64)
            expected = beta * i - beta * (n + 1) / 2.0
            if corrupt:
                expected = expected + 1e-3
            dev = np.max(np.abs(s - expected) / (1.0 + np.abs(expected)))
            worst = max(worst, float(dev))
    return IdentityResult("score-adaptive-linear", worst <= tol, worst, tol, seed)


def check_hat_matrix(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Hat-matrix algebra: symmetry, idempotence, H1=1, Hr=r, trace 2."""
    tol = 1e-10
    worst = 0.0
    for n in GAP_SIZES:
        _, pairs = _rank_pairs(n, 25, derive_seed(seed, 10, n))
        for r, _ in pairs:
            if np.all(r == r[0]):
                continue
            h = hat_matrix(r)
            if corrupt:
                h = h + 1e-6
            ones = np.ones(n)
            rr = r.astype(np.float64)
            worst = max(
                worst,
                float(np.max(np.abs(h - h.T))),
                float(np.max(np.abs(h @ h - h))),
                float(np.max(np.abs(h @ ones - ones))),
                float(np.max(np.abs(h @ rr - rr)) / (1.0 + float(np.max(np.abs(rr))))),
                abs(float(np.trace(h)) - 2.0),
            )
    return IdentityResult("hat-matrix", worst <= tol, worst, tol, seed)


def check_profile_ls_hat(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Profile objective equals the squared hat-matrix residual norm."""
    tol = 1e-9
    worst = 0.0
    for n in GAP_SIZES:
        rng = np.random.default_rng(derive_seed(seed, 11, n))
        _, pairs = _rank_pairs(n, 25, derive_seed(seed, 12, n))
        for r, _ in pairs:
            if np.all(r == r[0]):
                continue
            s = rng.normal(0.0, 1.0, n)
            pl = profile_ls_objective(s, r)
            resid = s - hat_matrix(r) @ s
            via_hat = float(np.dot(resid, resid))
            if corrupt:
                via_hat *= 1.0 + 1e-6
            worst = max(worst, abs(pl - via_hat) / (1.0 + pl))
    return IdentityResult("profile-ls-hat", worst <= tol, worst, tol, seed)


def check_bhattacharyya(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Closed-form Poisson affinity against the truncated series, per cell."""
    tol = 1e-8
    worst = 0.0
    rng = np.random.default_rng(derive_seed(seed, 13))
    cells = []
    for _ in range(120):
        mu1 = float(np.exp(rng.uniform(math.log(0.1), math.log(1e4))))
        mu2 = mu1 * float(np.exp(rng.uniform(-0.7, 0.7)))
        mu2 = min(max(mu2, 0.1), 1e4)
        cells.append((mu1, mu2))
    for _ in range(40):
        cells.append(
            (
                float(np.exp(rng.uniform(math.log(0.1), math.log(1e4)))),
                float(np.exp(rng.uniform(math.log(0.1), math.log(1e4)))),
            )
        )
    for mu1, mu2 in cells:
        closed = math.exp(-0.5 * (math.sqrt(mu1) - math.sqrt(mu2)) ** 2)
        series = cell_affinity_series(mu1, mu2)
        if corrupt:
            series *= 1.0 + 1e-6
        worst = max(worst, abs(closed - series))
    # matrix-level product vs closed form on a small instance
    mu_a = rng.uniform(5.0, 50.0, size=(4, 4))
    mu_b = mu_a * rng.uniform(0.8, 1.25, size=(4, 4))
    closed = bhattacharyya_affinity(mu_a, mu_b)
    prod = 1.0
    for i in range(4):
        for j in range(4):
            if i != j:
                prod *= cell_affinity_series(float(mu_a[i, j]), float(mu_b[i, j]))
    worst = max(worst, abs(closed - prod))
    return IdentityResult("bhattacharyya-series", worst <= tol, worst, tol, seed)


def check_loss_properties(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """l_q ranges, zero at identical arguments, and l0 <= l1 <= l2 nesting."""
    tol = 0.0
    worst = 0.0
    q_grid = (0.0, 0.5, 1.0, 1.5, 2.0)
    for n in GAP_SIZES:
        _, pairs = _rank_pairs(n, 40, derive_seed(seed, 14, n))
        for r, r_tilde in pairs:
            if corrupt:
                r_tilde = r_tilde.copy()
                r_tilde[0] = max(1, r_tilde[0] - 1)
                worst = max(worst, abs(loss(0.0, r, r_tilde)))
            for q in q_grid:
                worst = max(worst, abs(loss(q, r, r)))
                val = loss(q, r_tilde, r)
                worst = max(worst, max(0.0, -val))
                cap = 1.0 if q == 0.0 else float((n - 1) ** q)
                worst = max(worst, max(0.0, val - cap))
            l0 = loss(0.0, r_tilde, r)
            l1 = loss(1.0, r_tilde, r)
            l2 = loss(2.0, r_tilde, r)
            worst = max(worst, max(0.0, l0 - l1), max(0.0, l1 - l2))
    return IdentityResult("loss-properties", worst <= tol, worst, tol, seed)


def check_signal_window(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Signal condition window for the parametric differential model.

    For theta_k = alpha + bt*k the gap satisfies
        2*n*bt^2*(1 - 4*c_n^2/n) * ||d||^2 <= gap <= 2*n*bt^2*||d||^2,
    i.e. the two-sided signal condition holds with constant M <= 1 + eps.
    Verified on 1000 random pairs at n = 100.
    """
    tol = 1e-9
    n = 100
    c = default_sum_budget(n)
    lower = 1.0 - 4.0 * c * c / n
    worst = 0.0
    rng = np.random.default_rng(derive_seed(seed, 15))
    _, pairs = _rank_pairs(n, 1000, derive_seed(seed, 16))
    for r, r_tilde in pairs:
        d2 = float(np.sum((r - r_tilde) ** 2))
        if d2 == 0.0:
            continue
        beta = float(rng.uniform(0.1, 2.5))
        model = ModelSpec.parametric(DIFFERENTIAL, n, alpha=0.0, beta_tilde=beta)
        gap = signal_gap(model, r, r_tilde)
        ratio = gap / (2.0 * n * beta * beta * d2)
        if corrupt:
            ratio += 1e-3
        worst = max(worst, max(0.0, ratio - 1.0), max(0.0, lower - ratio))
    return IdentityResult(
        "signal-window",
        worst <= tol,
        worst,
        tol,
        seed,
        detail=f"ratio window [{lower:.4f}, 1] at n={n}",
    )


def check_snr_roundtrip(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """beta_for_snr inverts snr to relative 1e-12."""
    tol = 1e-12
    worst = 0.0
    rng = np.random.default_rng(derive_seed(seed, 17))
    for _ in range(500):
        n = int(rng.integers(2, 500))
        beta = float(rng.uniform(1e-4, 10.0))
        sigma = float(rng.uniform(1e-3, 10.0))
        val = snr(n, beta, sigma)
        back = beta_for_snr(n, val, sigma)
        if corrupt:
            back *= 1.0 + 1e-6
        worst = max(worst, abs(back - beta) / beta)
    return IdentityResult("snr-roundtrip", worst <= tol, worst, tol, seed)


def check_space_nesting(seed: int = DEFAULT_SEED, corrupt: bool = False) -> IdentityResult:
    """Membership in the restricted space implies membership in the base space."""
    tol = 0.0
    violations = 0.0
    for n in GAP_SIZES:
        restricted = RankSpace.default_restricted(n)
        base = RankSpace.default(n)
        tiny = RankSpace(n=n, c_n=1) if corrupt else base
        for idx in range(50):
            r = random_feasible_rank(restricted, derive_seed(seed, 18, n, idx)).entries
            if corrupt:
                r = r.copy()
                r[: n // 2] = 1
                if space_contains(tiny, r):
                    continue
                violations += 1.0
            elif not space_contains(base, r):
                violations += 1.0
    return IdentityResult("space-nesting", violations <= tol, violations, tol, seed)


CHECKS = {
    "differential-gap": check_differential_gap,
    "poisson-gap": check_poisson_gap,
    "score-comparison": check_score_comparison,
    "score-collaboration": check_score_collaboration,
    "score-adaptive-linear": check_score_adaptive_linear,
    "hat-matrix": check_hat_matrix,
    "profile-ls-hat": check_profile_ls_hat,
    "bhattacharyya-series": check_bhattacharyya,
    "loss-properties": check_loss_properties,
    "signal-window": check_signal_window,
    "snr-roundtrip": check_snr_roundtrip,
    "space-nesting": check_space_nesting,
}


def run_identity_suite(
    inject: str | None = None, seed: int = DEFAULT_SEED
) -> list[IdentityResult]:
    """Run every identity check; ``inject`` corrupts the named one."""
    if inject is not None and inject not in CHECKS:
        raise InputError(
            f"unknown identity {inject!r}; choose from: {', '.join(sorted(CHECKS))}"
        )
    results = []
    for name, fn in CHECKS.items():
        results.append(fn(seed=seed, corrupt=(name == inject)))
    return results
