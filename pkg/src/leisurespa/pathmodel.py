"""Recursive path models over observed variables.

The model is a DAG whose exogenous variables keep their sample covariances
and whose endogenous variables each get one linear equation on their
parents.  Equations are estimated one at a time by weighted least squares
with heteroskedasticity-robust (HC1) standard errors; global fit compares
the covariance implied by the estimated system with the weighted sample
covariance.

Model files are plain text::

    # comment
    role Z hh_couple_kids active_mode
    role M car_main pt_sub
    role A log1p_A
    role B travel_time
    role H1 diversity
    exposure log1p_A
    outcome diversity
    weight weight
    Z -> M
    Z -> A
    M -> A
    A -> B
    ...

Either side of an edge may be a role name, which expands to all of its
variables.
"""
from __future__ import annotations

import itertools
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import CyclicGraph, MissingPath, ModelSyntaxError, SingularDesign
from .wstats import normalize_weights


# ---------------------------------------------------------------------------
# DAG
# ---------------------------------------------------------------------------


@dataclass
class PathDag:
    nodes: list
    parents: dict
    roles: dict = field(default_factory=dict)  # role -> [variables]
    exposure: str | None = None
    outcome: str | None = None
    weight: str | None = None

    def __post_init__(self):
        for v in self.nodes:
            self.parents.setdefault(v, [])
        for v, ps in self.parents.items():
            if v not in self.nodes:
                raise ModelSyntaxError(f"unknown variable {v!r}")
            for p in ps:
                if p not in self.nodes:
                    raise ModelSyntaxError(f"edge {p!r} -> {v!r} uses an unknown variable")

    @property
    def edges(self):
        return [(p, v) for v in self.nodes for p in self.parents[v]]

    def children(self, v):
        return [c for c in self.nodes if v in self.parents[c]]

    def topological_order(self):
        indeg = {v: len(self.parents[v]) for v in self.nodes}
        ready = [v for v in self.nodes if indeg[v] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in self.children(v):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            left = [v for v in self.nodes if v not in order]
            raise CyclicGraph(f"path model has a cycle among {left}")
        return order

    @property
    def exogenous(self):
        return [v for v in self.nodes if not self.parents[v]]

    @property
    def endogenous(self):
        return [v for v in self.topological_order() if self.parents[v]]

    def ancestors(self, targets):
        seen = set()
        stack = list(targets)
        while stack:
            v = stack.pop()
            for p in self.parents[v]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def role_of(self, v):
        for r, vs in self.roles.items():
            if v in vs:
                return r
        return None

    def to_text(self):
        lines = [f"role {r} {' '.join(vs)}" for r, vs in self.roles.items()]
        if self.exposure:
            lines.append(f"exposure {self.exposure}")
        if self.outcome:
            lines.append(f"outcome {self.outcome}")
        if self.weight:
            lines.append(f"weight {self.weight}")
        loose = [v for v in self.nodes if self.role_of(v) is None]
        if loose:
            lines.append(f"vars {' '.join(loose)}")
        lines += [f"{p} -> {v}" for p, v in self.edges]
        return "\n".join(lines) + "\n"

    def restricted_to(self, keep):
        """Copy of the model without the variables not in ``keep``."""
        keep = [v for v in self.nodes if v in set(keep)]
        return PathDag(
            keep,
            {v: [p for p in self.parents[v] if p in keep] for v in keep},
            {r: [v for v in vs if v in keep] for r, vs in self.roles.items()},
            self.exposure if self.exposure in keep else None,
            self.outcome if self.outcome in keep else None,
            self.weight,
        )


_NAME = r"[A-Za-z_][A-Za-z0-9_.]*"


def parse_model(text):
    """Parse the plain-text model format into a ``PathDag``."""
    roles, order, edges = {}, [], []
    exposure = outcome = weight = None

    def add(v):
        if v not in order:
            order.append(v)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(rf"({_NAME})\s*->\s*({_NAME})", line)
        if m:
            edges.append((m.group(1), m.group(2), lineno))
            continue
        head, *rest = line.split()
        if head == "role" and len(rest) >= 2:
            roles[rest[0]] = rest[1:]
            for v in rest[1:]:
                add(v)
        elif head == "vars" and rest:
            for v in rest:
                add(v)
        elif head in ("exposure", "outcome", "weight") and len(rest) == 1:
            if head == "exposure":
                exposure = rest[0]
            elif head == "outcome":
                outcome = rest[0]
            else:
                weight = rest[0]
        else:
            raise ModelSyntaxError(f"line {lineno}: cannot parse {raw!r}")

    def expand(name, lineno):
        if name in roles:
            return roles[name]
        if name in order:
            return [name]
        raise ModelSyntaxError(f"line {lineno}: unknown variable or role {name!r}")

    parents = {v: [] for v in order}
    for a, b, lineno in edges:
        for p in expand(a, lineno):
            for c in expand(b, lineno):
                if p == c:
                    raise CyclicGraph(f"line {lineno}: self-loop on {p!r}")
                if p not in parents[c]:
                    parents[c].append(p)
    dag = PathDag(order, parents, roles, exposure, outcome, weight)
    dag.topological_order()
    for name in (exposure, outcome):
        if name is not None and name not in order:
            raise ModelSyntaxError(f"exposure/outcome {name!r} is not a model variable")
    return dag


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def fig6_dag(z, m, a="A", b="B", h="H1"):
    """The attribute -> mode -> accessibility -> trip making -> participation model.

    Mode variables are regressed on the attributes only; accessibility on
    attributes and mode; trip making on accessibility, attributes and mode;
    participation on all of them.
    """
    z, m = list(z), list(m)
    parents = {v: [] for v in z}
    for v in m:
        parents[v] = list(z)
    parents[a] = z + m
    parents[b] = [a] + z + m
    parents[h] = [a, b] + m + z
    roles = {"Z": z, "M": m, "A": [a], "B": [b], "H1": [h]}
    return PathDag(z + m + [a, b, h], parents, roles, exposure=a, outcome=h)


# ---------------------------------------------------------------------------
# d-separation and implied independencies
# ---------------------------------------------------------------------------


def d_separated(dag, x, y, given):
    """True when ``x`` and ``y`` are d-separated by ``given``.

    Uses the moralised ancestral graph: restrict to ancestors of
    ``{x, y} | given``, marry co-parents, drop directions, delete ``given``
    and test connectivity.
    """
    given = set(given)
    keep = dag.ancestors({x, y} | given) | {x, y} | given
    adj = {v: set() for v in keep}
    for v in keep:
        ps = [p for p in dag.parents[v] if p in keep]
        for p in ps:
            adj[v].add(p)
            adj[p].add(v)
        for p, q in itertools.combinations(ps, 2):
            adj[p].add(q)
            adj[q].add(p)
    seen = {x}
    stack = [x]
    while stack:
        v = stack.pop()
        if v == y:
            return False
        for u in adj[v]:
            if u not in seen and u not in given:
                seen.add(u)
                stack.append(u)
    return True


@dataclass(frozen=True)
class ImpliedIndependence:
    x: str
    y: str
    given: tuple
    partial_r: float | None = None
    statistic: float | None = None
    df: int | None = None
    p_value: float | None = None


def implied_independencies(dag):
    """Basis set of conditional independencies implied by the DAG.

    For every non-adjacent pair the later variable (in topological order) is
    independent of the earlier one given its parents.  Pairs of exogenous
    variables are skipped because their covariances are left free.
    """
    order = dag.topological_order()
    pos = {v: i for i, v in enumerate(order)}
    exo = set(dag.exogenous)
    out = []
    for u, v in itertools.combinations(order, 2):
        if pos[u] > pos[v]:
            u, v = v, u
        if u in exo and v in exo:
            continue
        if u in dag.parents[v] or v in dag.parents[u]:
            continue
        given = tuple(p for p in order if p in dag.parents[v])
        if not d_separated(dag, u, v, given):
            raise AssertionError(f"basis element {u} _||_ {v} | {given} is not implied")
        out.append(ImpliedIndependence(u, v, given))
    return out


def _columns(data, names):
    cols = []
    for v in names:
        try:
            col = np.asarray(data[v], dtype=float)
        except KeyError:
            raise ModelSyntaxError(f"variable {v!r} missing from data") from None
        if col.ndim != 1:
            raise ModelSyntaxError(f"variable {v!r} is not a column")
        cols.append(col)
    X = np.column_stack(cols) if cols else np.zeros((0, 0))
    if X.size and not np.all(np.isfinite(X)):
        bad = [v for v, c in zip(names, cols) if not np.all(np.isfinite(c))]
        raise ModelSyntaxError(f"non-finite values in {bad}")
    return X


def _wls_residual(y, Z, w):
    X = np.column_stack([np.ones(len(y)), Z]) if Z.size else np.ones((len(y), 1))
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return y - X @ beta


def partial_correlation(x, y, Z, w):
    rx, ry = _wls_residual(x, Z, w), _wls_residual(y, Z, w)
    den = math.sqrt(np.sum(w * rx * rx) * np.sum(w * ry * ry))
    return float(np.sum(w * rx * ry) / den) if den > 0 else 0.0


def check_dag(dag, data, weights=None):
    """Test every implied independence with a weighted partial correlation.

    Returns one ``ImpliedIndependence`` per basis element, with a t-test
    p-value on ``n - |given| - 2`` degrees of freedom.  An empty list means
    the DAG has no testable implications.
    """
    tests = implied_independencies(dag)
    if not tests:
        return []
    n = len(np.asarray(data[dag.nodes[0]]))
    w = np.ones(n) if weights is None else normalize_weights(weights)
    out = []
    for t in tests:
        x = _columns(data, [t.x])[:, 0]
        y = _columns(data, [t.y])[:, 0]
        Z = _columns(data, list(t.given)) if t.given else np.zeros((n, 0))
        r = partial_correlation(x, y, Z, w)
        df = n - len(t.given) - 2
        r = max(min(r, 1 - 1e-15), -1 + 1e-15)
        stat = r * math.sqrt(df / (1 - r * r))
        p = float(2 * stats.t.sf(abs(stat), df))
        out.append(ImpliedIndependence(t.x, t.y, t.given, r, stat, df, p))
    return out


# ---------------------------------------------------------------------------
# collinearity screening
# ---------------------------------------------------------------------------


def _weighted_cov(X, w):
    mu = (w[:, None] * X).sum(axis=0) / w.sum()
    Xc = X - mu
    return (w[:, None] * Xc).T @ Xc / w.sum(), mu


def vif_values(X, w):
    """Variance inflation factor of each column (``inf`` for exact collinearity)."""
    p = X.shape[1]
    out = np.empty(p)
    for j in range(p):
        others = np.delete(X, j, axis=1)
        e = _wls_residual(X[:, j], others, w)
        mu = np.sum(w * X[:, j]) / w.sum()
        tss = np.sum(w * (X[:, j] - mu) ** 2)
        rss = np.sum(w * e * e)
        r2 = 1 - rss / tss if tss > 0 else 1.0
        out[j] = np.inf if r2 >= 1 - 1e-10 else 1.0 / (1.0 - r2)
    return out


@dataclass
class VifReport:
    retained: list
    dropped: list  # (variable, reason, value)


def vif_prune(candidates, data, weights=None, threshold=7.0, var_eps=0.005):
    """Drop near-constant columns, then the largest VIF above ``threshold`` until none remain.

    Ties between equal VIFs drop the later candidate.
    """
    names = list(candidates)
    if len(names) < 2:
        raise ValueError("vif_prune needs at least two candidates")
    X = _columns(data, names)
    w = np.ones(X.shape[0]) if weights is None else normalize_weights(weights)
    dropped = []
    cov, _ = _weighted_cov(X, w)
    keep = []
    for j, v in enumerate(names):
        if cov[j, j] < var_eps:
            dropped.append((v, "near-constant", float(cov[j, j])))
        else:
            keep.append(j)
    while len(keep) >= 2:
        vif = vif_values(X[:, keep], w)
        worst = max(range(len(keep)), key=lambda i: (vif[i], i))
        if not vif[worst] > threshold:
            break
        dropped.append((names[keep[worst]], "vif", float(vif[worst])))
        del keep[worst]
    return VifReport([names[j] for j in keep], dropped)


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------


@dataclass
class Coefficient:
    source: str
    target: str
    estimate: float  # on the analysis scale (continuous variables standardised)
    se: float
    std: float
    std_se: float
    z: float
    p_value: float


@dataclass
class EquationFit:
    target: str
    predictors: list
    intercept: float
    coefficients: list
    residual_variance: float
    r2: float
    std_vcov: np.ndarray


@dataclass
class FitResult:
    dag: PathDag
    n: int
    equations: dict
    fit: dict
    sample_cov: np.ndarray
    implied_cov: np.ndarray
    standardized: list  # variables standardised before estimation

    @property
    def std_coefficients(self):
        return {(c.source, c.target): c.std for eq in self.equations.values() for c in eq.coefficients}

    def coefficient(self, source, target):
        for c in self.equations[target].coefficients:
            if c.source == source:
                return c
        raise KeyError((source, target))

    def std_covariance(self):
        """Joint covariance of standardised coefficients (block diagonal by equation)."""
        keys, blocks = [], []
        for eq in self.equations.values():
            keys += [(p, eq.target) for p in eq.predictors]
            blocks.append(eq.std_vcov)
        V = np.zeros((len(keys), len(keys)))
        i = 0
        for b in blocks:
            k = b.shape[0]
            V[i:i + k, i:i + k] = b
            i += k
        return keys, V


def _is_binary(col):
    u = np.unique(col)
    return u.size <= 2 and set(np.round(u, 12)) <= {0.0, 1.0}


def fit_paths(dag, data, weights=None, standardize="continuous"):
    """Estimate a recursive path model by equation-wise weighted least squares.

    Parameters
    ----------
    dag : PathDag
    data : mapping
        Variable name -> 1-D array.
    weights : array-like, optional
        Survey weights, normalised to mean one internally.
    standardize : {"continuous", "none"}
        Standardise non-binary variables (weighted) before estimation.
        Standardised coefficients are unaffected by this choice.
    """
    order = dag.topological_order()
    X = _columns(data, order)
    n, p = X.shape
    w = np.ones(n) if weights is None else normalize_weights(weights)
    scaled = []
    if standardize == "continuous":
        for j, v in enumerate(order):
            if not _is_binary(X[:, j]):
                mu = np.sum(w * X[:, j]) / n
                sd = math.sqrt(np.sum(w * (X[:, j] - mu) ** 2) / n)
                if sd > 0:
                    X[:, j] = (X[:, j] - mu) / sd
                    scaled.append(v)
    S, _ = _weighted_cov(X, w)
    sd = np.sqrt(np.diag(S))
    col = {v: j for j, v in enumerate(order)}

    Bm = np.zeros((p, p))
    psi = np.zeros((p, p))
    exo = [col[v] for v in order if not dag.parents[v]]
    psi[np.ix_(exo, exo)] = S[np.ix_(exo, exo)]
    equations = {}
    for v in order:
        ps = [q for q in order if q in dag.parents[v]]
        if not ps:
            continue
        y = X[:, col[v]]
        D = np.column_stack([np.ones(n)] + [X[:, col[q]] for q in ps])
        k = D.shape[1]
        XtWX = (D * w[:, None]).T @ D
        if np.linalg.matrix_rank(XtWX) < k:
            raise SingularDesign(v, f"predictors {ps} are collinear or constant")
        inv = np.linalg.inv(XtWX)
        beta = inv @ ((D * w[:, None]).T @ y)
        e = y - D @ beta
        meat = (D * (w * e)[:, None]).T @ (D * (w * e)[:, None])
        vcov = inv @ meat @ inv * (n / (n - k))
        se = np.sqrt(np.diag(vcov))
        rv = float(np.sum(w * e * e) / n)
        scale = np.array([sd[col[q]] / sd[col[v]] for q in ps])
        std = beta[1:] * scale
        std_vcov = vcov[1:, 1:] * np.outer(scale, scale)
        std_se = se[1:] * scale
        coefs = []
        for i, q in enumerate(ps):
            z = beta[i + 1] / se[i + 1] if se[i + 1] > 0 else math.inf
            coefs.append(Coefficient(q, v, float(beta[i + 1]), float(se[i + 1]), float(std[i]), float(std_se[i]),
                                     float(z), float(2 * stats.norm.sf(abs(z)))))
            Bm[col[v], col[q]] = beta[i + 1]
        psi[col[v], col[v]] = rv
        equations[v] = EquationFit(v, ps, float(beta[0]), coefs, rv, float(1 - rv / S[col[v], col[v]]), std_vcov)

    inv_ib = np.linalg.inv(np.eye(p) - Bm)
    sigma = inv_ib @ psi @ inv_ib.T
    fit = fit_indices(S, sigma, n, dag)
    return FitResult(dag, n, equations, fit, S, sigma, scaled)


def _n_free_params(dag):
    k = len(dag.exogenous)
    return k * (k + 1) // 2 + len(dag.edges) + len(dag.endogenous)


def rmsea_ci(chi2, df, n, level=0.90):
    """Confidence interval for RMSEA from the noncentral chi-square."""
    if df <= 0:
        return (None, None)
    lo_q, hi_q = (1 + level) / 2, (1 - level) / 2

    def lam_for(q):
        f = lambda lam: stats.ncx2.cdf(chi2, df, lam) - q if lam > 0 else stats.chi2.cdf(chi2, df) - q
        if f(0.0) < 0:
            return 0.0
        hi = max(1.0, chi2)
        while f(hi) > 0:
            hi *= 2
        return optimize.brentq(f, 0.0, hi, xtol=1e-10)

    lo, hi = lam_for(lo_q), lam_for(hi_q)
    return (math.sqrt(lo / (df * n)), math.sqrt(hi / (df * n)))


def fit_indices(S, sigma, n, dag):
    """Chi-square, CFI, TLI, RMSEA (with 90% CI) and SRMR."""
    p = S.shape[0]
    _, logdet_s = np.linalg.slogdet(S)
    _, logdet_m = np.linalg.slogdet(sigma)
    fml = logdet_m + np.trace(S @ np.linalg.inv(sigma)) - logdet_s - p
    chi2 = max(float(n * fml), 0.0)
    df = p * (p + 1) // 2 - _n_free_params(dag)
    chi2_b = float(n * (np.sum(np.log(np.diag(S))) - logdet_s))
    df_b = p * (p - 1) // 2
    num = max(chi2 - df, 0.0)
    den = max(chi2_b - df_b, chi2 - df, 0.0)
    cfi = 1.0 - num / den if den > 0 else 1.0
    if df > 0 and df_b > 0 and chi2_b / df_b != 1:
        tli = ((chi2_b / df_b) - (chi2 / df)) / ((chi2_b / df_b) - 1)
    else:
        tli = 1.0
    rmsea = math.sqrt(num / (df * n)) if df > 0 else 0.0
    lo, hi = rmsea_ci(chi2, df, n)
    ds = np.sqrt(np.diag(S))
    dm = np.sqrt(np.diag(sigma))
    resid = S / np.outer(ds, ds) - sigma / np.outer(dm, dm)
    tri = resid[np.tril_indices(p)]
    srmr = float(np.sqrt(np.mean(tri ** 2)))
    return {
        "chi2": chi2, "df": df, "p_chi2": float(stats.chi2.sf(chi2, df)) if df > 0 else None,
        "chi2_baseline": chi2_b, "df_baseline": df_b,
        "cfi": cfi, "tli": tli, "rmsea": rmsea, "rmsea_ci90": [lo, hi], "srmr": srmr,
    }


# ---------------------------------------------------------------------------
# effect decomposition
# ---------------------------------------------------------------------------


@dataclass
class EffectTable:
    exposure: str
    outcome: str
    direct: float
    indirect: float
    total: float
    paths: list  # (tuple of nodes, product)
    se_direct: float | None = None
    se_indirect: float | None = None
    se_total: float | None = None

    def p_values(self):
        out = {}
        for name in ("direct", "indirect", "total"):
            se = getattr(self, f"se_{name}")
            est = getattr(self, name)
            out[name] = float(2 * stats.norm.sf(abs(est / se))) if se else None
        return out


def directed_paths(edges, source, target):
    """All directed paths from ``source`` to ``target`` as node tuples."""
    children = {}
    for a, b in edges:
        children.setdefault(a, []).append(b)
    out = []

    def walk(v, path):
        if v == target:
            out.append(tuple(path))
            return
        for c in children.get(v, ()):
            if c not in path:
                walk(c, path + [c])

    walk(source, [source])
    return out


def decompose_effects(fit, exposure=None, outcome=None, cov=None):
    """Direct, indirect and total effect of ``exposure`` on ``outcome``.

    ``fit`` is a ``FitResult`` or a mapping ``(source, target) -> coefficient``.
    Every directed path is enumerated; the indirect effect is the sum of
    coefficient products over paths of length two or more.  Delta-method
    standard errors are returned when a coefficient covariance is available
    (``cov`` as ``(keys, matrix)``, or taken from the fit).
    """
    if isinstance(fit, FitResult):
        coefs = fit.std_coefficients
        exposure = exposure or fit.dag.exposure
        outcome = outcome or fit.dag.outcome
        if cov is None:
            cov = fit.std_covariance()
    else:
        coefs = dict(fit)
    if exposure is None or outcome is None:
        raise MissingPath("exposure and outcome must be named")
    paths = directed_paths(list(coefs), exposure, outcome)
    if not paths:
        raise MissingPath(f"no directed path from {exposure!r} to {outcome!r}")
    direct = coefs.get((exposure, outcome), 0.0)
    listed = []
    indirect = 0.0
    for path in paths:
        prod = 1.0
        for a, b in zip(path, path[1:]):
            prod *= coefs[(a, b)]
        listed.append((path, prod))
        if len(path) > 2:
            indirect += prod
    table = EffectTable(exposure, outcome, direct, indirect, direct + indirect, listed)
    if cov is not None:
        keys, V = cov
        pos = {k: i for i, k in enumerate(keys)}
        g_ind = np.zeros(len(keys))
        for path, _ in listed:
            if len(path) < 3:
                continue
            es = list(zip(path, path[1:]))
            for i, e in enumerate(es):
                others = 1.0
                for j, f in enumerate(es):
                    if j != i:
                        others *= coefs[f]
                g_ind[pos[e]] += others
        g_dir = np.zeros(len(keys))
        if (exposure, outcome) in pos:
            g_dir[pos[(exposure, outcome)]] = 1.0
        table.se_direct = float(math.sqrt(g_dir @ V @ g_dir)) if g_dir.any() else None
        table.se_indirect = float(math.sqrt(g_ind @ V @ g_ind)) if g_ind.any() else None
        g_tot = g_dir + g_ind
        table.se_total = float(math.sqrt(g_tot @ V @ g_tot))
    return table


# ---------------------------------------------------------------------------
# auxiliary regression and reports
# ---------------------------------------------------------------------------


def weighted_regression(y, X, weights=None, names=None):
    """Weighted least squares with an intercept and HC1 standard errors.

    Returns a list of ``(name, estimate, se, p_value)`` starting with the
    intercept.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(y)
    w = np.ones(n) if weights is None else normalize_weights(weights)
    D = np.column_stack([np.ones(n), X])
    k = D.shape[1]
    XtWX = (D * w[:, None]).T @ D
    if np.linalg.matrix_rank(XtWX) < k:
        raise SingularDesign("regression", "design matrix is rank deficient")
    inv = np.linalg.inv(XtWX)
    beta = inv @ ((D * w[:, None]).T @ y)
    e = y - D @ beta
    meat = (D * (w * e)[:, None]).T @ (D * (w * e)[:, None])
    se = np.sqrt(np.diag(inv @ meat @ inv * (n / (n - k))))
    names = ["intercept"] + list(names or [f"x{i}" for i in range(1, k)])
    return [(nm, float(b), float(s), float(2 * stats.norm.sf(abs(b / s))) if s > 0 else None)
            for nm, b, s in zip(names, beta, se)]


def report_dict(fit, effects=()):
    """JSON-serialisable summary of a fit (read back by ``effects_from_report``)."""
    eqs = []
    for v, eq in fit.equations.items():
        eqs.append({
            "target": v,
            "r2": eq.r2,
            "residual_variance": eq.residual_variance,
            "coefficients": [c.__dict__.copy() for c in eq.coefficients],
            "std_vcov": eq.std_vcov.tolist(),
        })
    return {
        "model": fit.dag.to_text(),
        "n": fit.n,
        "standardized_variables": fit.standardized,
        "fit": fit.fit,
        "equations": eqs,
        "effects": [effect_dict(e) for e in effects],
    }


def effect_dict(e):
    return {
        "exposure": e.exposure, "outcome": e.outcome,
        "direct": e.direct, "indirect": e.indirect, "total": e.total,
        "se_direct": e.se_direct, "se_indirect": e.se_indirect, "se_total": e.se_total,
        "p_values": e.p_values(),
        "paths": [{"path": list(p), "product": v} for p, v in e.paths],
    }


def coefficients_from_report(report):
    """Rebuild ``(coefs, (keys, cov))`` from ``report_dict`` output."""
    coefs, keys, blocks = {}, [], []
    for eq in report["equations"]:
        for c in eq["coefficients"]:
            coefs[(c["source"], c["target"])] = c["std"]
            keys.append((c["source"], c["target"]))
        blocks.append(np.asarray(eq["std_vcov"], dtype=float))
    V = np.zeros((len(keys), len(keys)))
    i = 0
    for b in blocks:
        k = b.shape[0]
        V[i:i + k, i:i + k] = b
        i += k
    return coefs, (keys, V)


def format_report(fit, effects=()):
    """Human-readable text report."""
    lines = [f"Path model fit (n = {fit.n})", ""]
    f = fit.fit
    ci = f["rmsea_ci90"]
    ci_s = f"[{ci[0]:.3f}, {ci[1]:.3f}]" if ci[0] is not None else "[n/a]"
    lines.append(f"chi2 = {f['chi2']:.3f} (df = {f['df']}), CFI = {f['cfi']:.3f}, TLI = {f['tli']:.3f}, "
                 f"RMSEA = {f['rmsea']:.3f} {ci_s}, SRMR = {f['srmr']:.4f}")
    lines.append("")
    for v, eq in fit.equations.items():
        lines.append(f"{v}  (R2 = {eq.r2:.3f})")
        for c in eq.coefficients:
            lines.append(f"    {c.source:<32s} std = {c.std:+.4f}  se = {c.std_se:.4f}  p = {c.p_value:.4g}")
    for e in effects:
        lines.append("")
        pv = e.p_values()
        lines.append(f"Effects of {e.exposure} on {e.outcome}:")
        for name in ("direct", "indirect", "total"):
            se = getattr(e, f"se_{name}")
            se_s = f"  se = {se:.4f}  p = {pv[name]:.4g}" if se else ""
            lines.append(f"    {name:<9s} {getattr(e, name):+.6f}{se_s}")
    return "\n".join(lines) + "\n"


def dump_report(fit, path_json, path_txt=None, effects=()):
    with open(path_json, "w", encoding="utf-8") as fh:
        json.dump(report_dict(fit, effects), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if path_txt:
        with open(path_txt, "w", encoding="utf-8") as fh:
            fh.write(format_report(fit, effects))
