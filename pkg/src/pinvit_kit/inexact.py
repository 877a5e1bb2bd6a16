"""Perturbed PINVIT with approximate operator applications.

An approximate application ``M_eps(v)`` only has to satisfy
``dual(M_eps(v) - M v) <= eps * norm(v)``. For the stiffness operator the
norm pair is (P-norm, P^{-1}-norm); for the mass operator it is (E-norm,
E^{-1}-norm). The step driver halves ``eps`` until either the reliable
residual bound falls below ``tau`` or ``eps`` is small relative to the
estimated residual, which keeps the induced perturbation within budget.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import (
    BadStartError,
    BreakdownError,
    CapabilityError,
    HalvingLimitError,
    IterationLimitError,
    MissingSpectralDataError,
    NotPositiveError,
)
from .linop import as_vector, estimate_constants, norm_in, norm_in_inverse
from .pinvit import BREAKDOWN_RTOL, residual_measure

LOG_FIELDS = ("step", "mu", "mu_eps", "rho_eps", "epsilon", "halvings", "bound_ok")


# ---------------------------------------------------------------- metrics


class Metric:
    """Norm pair induced by an SPD operator ``G``: ``||x||_G`` and ``||f||_{G^{-1}}``."""

    def __init__(self, G):
        self.G = G
        d = G.diagonal() if G.is_diagonal else None
        self.diag = None if d is None else np.asarray(d, dtype=np.float64)

    @property
    def additive(self):
        return self.diag is not None

    def norm(self, x):
        if self.diag is not None:
            return math.sqrt(float(np.sum(self.diag * x * x)))
        return norm_in(self.G, x)

    def dual(self, f):
        if self.diag is not None:
            return math.sqrt(float(np.sum(f * f / self.diag)))
        return norm_in_inverse(self.G, f)

    def riesz(self, x):
        """``G x``, the dual element aligned with ``x``."""
        return self.G.apply(x)


def metrics_for(problem):
    """Contract metrics of the stiffness (via P) and mass (via E) operators."""
    return Metric(problem.P), Metric(problem.E)


# ---------------------------------------------------------------- policies


class Policy:
    """Realisation of approximate applications.

    ``plan(M, v, metric, exact)`` does the eps-independent work once and
    returns a function ``eps -> M_eps(v)``, so the halving loop can query
    many accuracies cheaply.
    """

    name = "policy"

    def plan(self, M, v, metric, exact):
        raise NotImplementedError

    def __call__(self, M, v, eps, metric, exact=None):
        return self.plan(M, v, metric, M.apply(v) if exact is None else exact)(eps)


class TruncationPolicy(Policy):
    """Drop the smallest entries of the exact product within the budget.

    Entries are ordered by their contribution to the dual norm (ascending,
    ties broken by lowest index) and the longest prefix whose removal keeps
    the error within ``eps * norm(v)`` is zeroed.
    """

    name = "truncation"

    def plan(self, M, v, metric, exact):
        w = exact
        vnorm = metric.norm(v)
        weights = w * w / metric.diag if metric.additive else w * w
        order = np.argsort(weights, kind="stable")
        csum = np.cumsum(weights[order]) if metric.additive else None

        def realise(eps):
            if eps <= 0:
                return w.copy()
            budget = eps * vnorm
            if csum is not None:
                k = int(np.searchsorted(csum, budget * budget, side="right"))
                while k > 0 and metric.dual(_masked(w, order[:k])) > budget:
                    k -= 1
            else:
                k = _search(w, order, budget, metric)
            out = w.copy()
            out[order[:k]] = 0.0
            return out

        return realise


def _search(w, order, budget, metric):
    if metric.dual(w) <= budget:
        return w.size
    lo, hi = 0, w.size
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if metric.dual(_masked(w, order[:mid])) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def _masked(w, idx):
    d = np.zeros_like(w)
    d[idx] = w[idx]
    return d


class ExactPolicy(Policy):
    """Ignore ``eps`` and return the exact product."""

    name = "exact"

    def plan(self, M, v, metric, exact):
        return lambda eps: exact.copy()


class SaturatingPolicy(Policy):
    """Error of size exactly ``factor * eps * norm(v)`` in the dual norm.

    ``mode='aligned'`` puts the error along ``+-G v`` (sign per operator kind
    from ``signs``), the direction that moves ``<M_eps(v), v>`` the most;
    ``mode='random'`` uses a seeded random direction. ``factor > 1`` breaks
    the contract on purpose.
    """

    name = "saturating"

    def __init__(self, factor=1.0, mode="aligned", signs=None, seed=0):
        if mode not in ("aligned", "random"):
            raise ValueError("mode must be 'aligned' or 'random'")
        self.factor = float(factor)
        self.mode = mode
        self.signs = {"stiffness": 1.0, "mass": -1.0, **(signs or {})}
        self.rng = np.random.default_rng(seed)

    def plan(self, M, v, metric, exact):
        w = exact
        vnorm = metric.norm(v)
        if self.mode == "aligned":
            d = self.signs.get(M.kind, 1.0) * metric.riesz(v)
        else:
            d = self.rng.standard_normal(v.size)
        dn = metric.dual(d)
        unit = d / dn if dn > 0 else np.zeros_like(w)

        def realise(eps):
            if eps <= 0:
                return w.copy()
            return w + (self.factor * eps * vnorm) * unit

        return realise


DEFAULT_POLICY = TruncationPolicy()


def apply_approx(M, v, eps, metric=None, policy=None, exact=None):
    """Approximate ``M v`` with dual-norm error at most ``eps * norm(v)``.

    Parameters
    ----------
    M : LinearOperator
    v : array_like
    eps : float
        Relative accuracy; ``0`` returns the exact product.
    metric : Metric, optional
        Contract norms; defaults to the norms induced by ``M`` itself.
    policy : callable, optional
        Realisation of the approximation (truncation by default).
    exact : ndarray, optional
        Precomputed ``M v``.
    """
    if not M.has_approx_apply:
        raise CapabilityError(f"{M!r} has no approximate apply")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    v = as_vector(v, M.dim)
    metric = metric or Metric(M)
    return (policy or DEFAULT_POLICY)(M, v, float(eps), metric, exact)


@dataclass(frozen=True)
class ApproxEvaluation:
    """Approximate applications at one ``eps`` and the derived quantities."""

    eps: float
    Av: np.ndarray
    Ev: np.ndarray
    mu_eps: float
    r_eps: np.ndarray


def approx_plans(A, E, v, metrics=None, policy=None, exact=None):
    """Per-iterand realisations ``eps -> A_eps v`` and ``eps -> E_eps v``."""
    v = as_vector(v, A.dim)
    ma, me = metrics if metrics is not None else (Metric(A), Metric(E))
    ea, ee = exact if exact is not None else (A.apply(v), E.apply(v))
    policy = policy or DEFAULT_POLICY
    return policy.plan(A, v, ma, ea), policy.plan(E, v, me, ee)


def evaluate(A, E, v, eps, metrics=None, policy=None, exact=None, plans=None):
    """Evaluate ``A_eps v``, ``E_eps v``, ``mu_eps`` and ``r_eps`` consistently."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if plans is None:
        plans = approx_plans(A, E, v, metrics, policy, exact)
    Av, Ev = plans[0](eps), plans[1](eps)
    den = float(Ev @ v)
    if not den > 0:
        raise NotPositiveError("<E_eps v, v> is not positive; the accuracy contract is violated")
    mu_eps = float(Av @ v) / den
    return ApproxEvaluation(eps, Av, Ev, mu_eps, Av - mu_eps * Ev)


def perturbed_rayleigh(A, E, v, eps, metrics=None, policy=None):
    """``<A_eps v, v> / <E_eps v, v>``."""
    return evaluate(A, E, v, eps, metrics, policy).mu_eps


def approx_residual(A, E, v, eps, metrics=None, policy=None):
    """``A_eps v - mu_eps(v) E_eps v``."""
    return evaluate(A, E, v, eps, metrics, policy).r_eps


def residual_estimator(P, v, r_eps):
    """``||r_eps||_{P^{-1}} / ||v||_P``."""
    return norm_in_inverse(P, r_eps) / norm_in(P, v)


def accuracy_test(eps, rho_eps, c3):
    """``eps <= c3 * rho_eps`` (inclusive)."""
    return eps <= c3 * rho_eps


# ---------------------------------------------------------------- constants and config


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the inexact iteration.

    Unset constants (``None``) are derived from spectral constants by
    :func:`resolve_config`.
    """

    tau: float = 1e-8
    gammaP: float | None = None
    gammaXi: float | None = None
    c0: float | None = None
    c1: float | None = None
    c2: float | None = None
    c3: float | None = None
    constant_scale: float = 1.0
    max_outer_steps: int = 10_000
    max_halvings: int = 200
    epsilon_init: float | None = None
    seed: int = 0
    stall_window: int = 50
    max_restarts: int = 5
    margin: float = 1.1
    track_rho: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.constant_scale <= 1:
            raise ValueError("constant_scale must lie in (0, 1]")
        if self.gammaP is not None and not 0 <= self.gammaP < 1:
            raise ValueError("gammaP must lie in [0, 1)")
        if self.gammaP is not None and self.gammaXi is not None:
            if not (self.gammaXi > 0 and self.gammaP + self.gammaXi < 1):
                raise ValueError("need gammaXi > 0 and gammaP + gammaXi < 1")
        for name in ("c0", "c1", "c2", "c3", "epsilon_init"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_steps < 1 or self.max_halvings < 0:
            raise ValueError("iteration caps must be positive")

    @property
    def resolved(self):
        return None not in (self.gammaP, self.gammaXi, self.c0, self.c1, self.c2, self.c3)

    @property
    def gamma(self):
        """Contraction constant of a stepped outcome: gammaP + gammaXi."""
        return self.gammaP + self.gammaXi


def constants_for(consts, config):
    """Constants ``(c0, c1, c2, c3)`` of the step driver.

    ``c1`` bounds the Rayleigh quotient error, ``c2`` the residual error
    (both per unit ``eps``), ``c3`` is the accuracy-test threshold.
    ``config.constant_scale`` multiplies ``c1``, ``c2`` and divides ``c3``.
    """
    if consts.lambda2 is None:
        raise MissingSpectralDataError("an upper bound for lambda2 is required")
    s = config.constant_scale
    gp = consts.gammaP if config.gammaP is None else config.gammaP
    gx = (1.0 - gp) / 2.0 if config.gammaXi is None else config.gammaXi
    c0 = min(0.5, consts.sigma0)
    c1 = 2.0 * (1.0 + 1.0 / consts.sigma0) * consts.lambda2
    # mu(v) <= lambda2 and eps <= 1/2
    c2 = (1.0 + consts.alpha**2 * (consts.lambda2 + 1.5 * c1)) / consts.sigma0
    c3 = gx / ((1.0 + gp) * ((1.0 + gp) * c2 + gx * c2))
    return float(c0), float(s * c1), float(s * c2), float(c3 / s)


def kappa_floor(config):
    """Guaranteed lower bound on ``eps_exit / max(tau, rho(v))`` of the halving loop.

    With ``g = 1 - gammaP`` the step test must fire once
    ``eps <= a rho(v)`` with ``a = c3 g / (1 + c3 g c2)``, and when
    ``rho(v) <= tau g / (2 (2 - g))`` the stopping test fires once
    ``eps <= tau g / (4 c2)``. Halving loses at most a factor two. Exits at
    the initial ``eps`` are not covered (they may be smaller relative to a
    large ``rho``).
    """
    g = 1.0 - config.gammaP
    a = config.c3 * g / (1.0 + config.c3 * g * config.c2)
    return 0.5 * min(a * g / (2.0 * (2.0 - g)), g / (4.0 * config.c2))


def resolve_config(problem, config, consts=None):
    """Fill unset constants from (estimated) spectral constants."""
    if config.resolved:
        return config, consts
    if consts is None:
        consts = estimate_constants(problem, margin=config.margin, seed=config.seed)
    gp = consts.gammaP if config.gammaP is None else config.gammaP
    gx = (1.0 - gp) / 2.0 if config.gammaXi is None else config.gammaXi
    c = constants_for(consts, replace(config, gammaP=gp, gammaXi=gx))
    given = (config.c0, config.c1, config.c2, config.c3)
    c0, c1, c2, c3 = (g if g is not None else d for g, d in zip(given, c))
    if c0 > min(0.5, consts.sigma0):
        raise ValueError("c0 must not exceed min(1/2, sigma0)")
    return replace(config, gammaP=gp, gammaXi=gx, c0=c0, c1=c1, c2=c2, c3=c3), consts


# ---------------------------------------------------------------- step driver


@dataclass(frozen=True)
class StepOutcome:
    """Result of the halving loop at one iterand.

    ``vector`` is the input for ``converged`` and the normalised update for
    ``stepped``; ``xi`` is the realised perturbation ``P^{-1}(r - r_eps)``
    relative to the exact step (``None`` when converged).
    """

    status: str
    vector: np.ndarray
    epsilon_final: float
    rho_eps_final: float
    halvings: int
    mu_eps: float
    xi: np.ndarray | None = None


def ppinvit_step(problem, v, config, metrics=None):
    """One call of the adaptive step: halve ``eps`` until a test fires."""
    if not config.resolved:
        config, _ = resolve_config(problem, config)
    A, E, P = problem.A, problem.E, problem.P
    v = as_vector(v, problem.dim)
    if not np.any(v):
        raise ValueError("zero vector")
    metrics = metrics or metrics_for(problem)
    exact = (A.apply(v), E.apply(v))
    plans = approx_plans(A, E, v, metrics, problem.approx, exact)
    nP = metrics[0].norm(v)
    one_minus = 1.0 - config.gammaP
    eps = config.c0 if config.epsilon_init is None else config.epsilon_init
    for halvings in range(config.max_halvings + 1):
        ev = evaluate(A, E, v, eps, plans=plans)
        w = P.apply_inverse(ev.r_eps)
        rho_eps = math.sqrt(max(float(w @ ev.r_eps), 0.0)) / nP
        if rho_eps / one_minus + config.c2 * eps <= config.tau:
            return StepOutcome("converged", v, eps, rho_eps, halvings, ev.mu_eps)
        if accuracy_test(eps, rho_eps, config.c3):
            raw = v - w
            vn = math.sqrt(float(exact[1] @ v))
            size = math.sqrt(max(float(E.apply(raw) @ raw), 0.0))
            if not size >= BREAKDOWN_RTOL * vn:
                raise BreakdownError("the updated iterand vanished")
            nxt = raw / size
            if float(nxt @ v) < 0:
                nxt = -nxt
            mu = float(exact[0] @ v) / float(exact[1] @ v)
            r = exact[0] - mu * exact[1]
            xi = P.apply_inverse(r) - w
            return StepOutcome("stepped", nxt, eps, rho_eps, halvings, ev.mu_eps, xi)
        eps *= 0.5
    raise HalvingLimitError(
        f"no test fired after {config.max_halvings} halvings (eps={eps:.3g}); "
        "constants are inconsistent or the approximate apply violates its contract")


# ---------------------------------------------------------------- outer solve


@dataclass(frozen=True)
class ConvergenceRecord:
    """Log row of one outer step.

    ``mu`` is the exact Rayleigh quotient of the iterand after the step;
    ``mu_eps``, ``rho_eps`` and ``epsilon`` are the values at which the
    halving loop exited; ``bound_ok`` is ``"true"``, ``"false"`` or ``"n/a"``.
    ``rho`` and ``kappa`` (exit eps over max(tau, rho(v))) are only in JSON.
    """

    step: int
    mu: float
    mu_eps: float
    rho_eps: float
    epsilon: float
    halvings: int
    bound_ok: str
    rho: float = math.nan
    kappa: float = math.nan
    status: str = "stepped"


@dataclass
class SolveResult:
    mu: float
    v: np.ndarray
    log: list
    rho: float
    steps: int
    restarts: int
    converged: bool
    config: SolverConfig
    constants: object
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def kappa_min(self):
        k = [r.kappa for r in self.log if not math.isnan(r.kappa)]
        return min(k) if k else math.nan

    @property
    def kappa_max(self):
        k = [r.kappa for r in self.log if not math.isnan(r.kappa)]
        return max(k) if k else math.nan


def random_start(dim, seed):
    """Seeded start vector with entries uniform in [0, 1)."""
    return np.random.default_rng(seed).random(dim) + 1e-3


def _audit(problem, before, after, gamma, lam):
    from .oracle import audit_step

    if lam is None:
        return "n/a"
    row = audit_step(problem, before, after, gamma, spectrum=lam)
    return {"pass": "true", "fail": "false"}.get(row.status, "n/a")


def solve(problem, v0=None, config=None, consts=None, callback=None):
    """Iterate the adaptive step until the residual bound reaches ``tau``.

    Parameters
    ----------
    problem : EigenProblem
    v0 : array_like, optional
        Start vector; seeded random when omitted.
    config : SolverConfig
    consts : SpectralConstants, optional
        Skip estimation when given.
    callback : callable, optional
        Called with each :class:`ConvergenceRecord`.

    Returns
    -------
    SolveResult
    """
    t0 = time.perf_counter()
    config = config or SolverConfig()
    config, consts = resolve_config(problem, config, consts)
    meta = problem.meta or {}
    lam = None
    if meta.get("lambda1") is not None and meta.get("lambda2") is not None:
        lam = (meta["lambda1"], meta["lambda2"])
    metrics = metrics_for(problem)
    A, E = problem.A, problem.E
    gamma = config.gamma
    restarts = 0
    v = as_vector(v0, problem.dim) if v0 is not None else random_start(problem.dim, config.seed)
    v = v / math.sqrt(float(E.apply(v) @ v))
    log = []
    history = []
    for step in range(1, config.max_outer_steps + 1):
        rho_v = residual_measure(A, E, v) if config.track_rho else math.nan
        out = ppinvit_step(problem, v, config, metrics)
        kappa = out.epsilon_final / max(config.tau, rho_v) if config.track_rho else math.nan
        if out.status == "converged":
            mu = float(A.apply(v) @ v) / float(E.apply(v) @ v)
            rec = ConvergenceRecord(step, mu, out.mu_eps, out.rho_eps_final, out.epsilon_final,
                                    out.halvings, "n/a", rho_v, kappa, "converged")
            log.append(rec)
            if callback:
                callback(rec)
            rho_final = residual_measure(A, E, v)
            return SolveResult(mu, v, log, rho_final, step, restarts, True, config, consts,
                               time.perf_counter() - t0, dict(meta))
        nxt = out.vector
        mu = float(A.apply(nxt) @ nxt) / float(E.apply(nxt) @ nxt)
        ok = _audit(problem, v, nxt, gamma, lam)
        rec = ConvergenceRecord(step, mu, out.mu_eps, out.rho_eps_final, out.epsilon_final,
                                out.halvings, ok, rho_v, kappa)
        log.append(rec)
        if callback:
            callback(rec)
        v = nxt
        history.append(mu)
        w = config.stall_window
        if len(history) > w and history[-w - 1] - history[-1] <= 1e-13 * abs(history[-1]):
            if lam is None or history[-1] < lam[1]:
                # stagnated below lambda2: nothing a restart can fix
                continue
            if restarts >= config.max_restarts:
                raise BadStartError(f"iteration stagnated at mu={mu:.6g} after {restarts} restarts")
            restarts += 1
            v = random_start(problem.dim, config.seed + restarts)
            v = v / math.sqrt(float(E.apply(v) @ v))
            history = []
    raise IterationLimitError(f"no convergence within {config.max_outer_steps} steps")


# ---------------------------------------------------------------- logs


def _fmt(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_log_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in LOG_FIELDS])


def read_log_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != LOG_FIELDS:
        raise ValueError(f"{path}: unexpected header {tuple(rows[0].keys())}")
    return rows


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating,)):
        return _jsonable(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def log_payload(records, metadata):
    rows = []
    for r in records:
        d = {f: getattr(r, f) for f in LOG_FIELDS}
        d.update(rho=r.rho, kappa=r.kappa, status=r.status)
        rows.append(d)
    return _jsonable({"metadata": metadata, "records": rows})


def write_log_json(path, records, metadata):
    with open(path, "w") as fh:
        json.dump(log_payload(records, metadata), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_metadata(problem, result, problem_id=None):
    cfg = asdict(result.config)
    consts = asdict(result.constants) if result.constants is not None else None
    return {
        "problem": problem_id or problem.name,
        "dof": problem.dim,
        "config": cfg,
        "constants": consts,
        "seed": result.config.seed,
        "steps": result.steps,
        "restarts": result.restarts,
        "mu": result.mu,
        "rho": result.rho,
        "kappa_min": result.kappa_min,
        "kappa_max": result.kappa_max,
    }
