"""Design of zero-sum, unit-energy, mutually orthogonal discriminator filters.

Each filter maximises ``vec(f)^T Q vec(f)`` where ``Q`` is the accumulated
residual Gram matrix of one channel, subject to

* ``||vec(f)|| = 1``
* ``sum(f) = 0`` (no DC response)
* ``|vec(f)^T vec(f_i)| <= epsilon`` for every earlier filter ``f_i``.

Filters are designed one at a time. The solver enforces exact orthogonality,
which lies inside every epsilon band, so the sub-problem is a projected
eigenproblem: the dominant eigenvector of ``P Q P`` where ``P`` projects onto
the orthogonal complement of ``span(1, previous filters)``. It is solved by
power iteration with re-projection at each step.

:func:`homogenize` builds the equivalent lifted problem in dimension
``k^2 + 1`` (auxiliary variable ``t``, ``X = x x^T``). It is not solved here;
it exists so the lifting can be evaluated and checked against the direct form.
"""

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BankMismatchError,
    DegenerateGramWarning,
    FormatError,
    ShapeMismatchError,
    SubspaceExhaustedError,
    TooManyFiltersError,
)
from .gram import GramMatrix

DEFAULT_EPSILON = 0.05
POWER_TOL = 1e-8
POWER_MAX_ITER = 5000
# ||PQP||_F below this fraction of ||Q||_F counts as numerically zero.
DEGENERATE_RTOL = 1e-10
SIGN_THRESHOLD = 1e-8
FEASIBILITY_TOL = 1e-5
BANK_MAGIC = "DFBK1"


@dataclass
class FilterBank:
    """``filters`` has shape ``(channels, n_filters, k, k)``."""

    filters: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    objectives: np.ndarray = None

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        if self.filters.ndim != 4 or self.filters.shape[2] != self.filters.shape[3]:
            raise ShapeMismatchError(
                f"filters must have shape (C, M, k, k), got {self.filters.shape}"
            )

    @property
    def channels(self):
        return self.filters.shape[0]

    @property
    def n_filters(self):
        return self.filters.shape[1]

    @property
    def k(self):
        return self.filters.shape[2]

    def vectors(self, channel):
        """Filters of one channel as rows of an ``(M, k^2)`` matrix."""
        return self.filters[channel].reshape(self.n_filters, -1)


def _entries(Q):
    return Q.entries if isinstance(Q, GramMatrix) else np.asarray(Q, dtype=np.float64)


def filter_objective(Q, f):
    """``vec(f)^T Q vec(f)`` with row-major vectorisation of ``f``."""
    Q = _entries(Q)
    v = np.asarray(f, dtype=np.float64).ravel()
    if Q.shape != (v.size, v.size):
        raise ShapeMismatchError(f"Gram shape {Q.shape} incompatible with filter of size {v.size}")
    return float(v @ Q @ v)


def constraint_basis(n, previous=()):
    """Orthonormal basis (columns) of ``span(1, previous)`` in ``R^n``."""
    cols = [np.full(n, 1.0 / np.sqrt(n))]
    cols += [np.asarray(p, dtype=np.float64).ravel() for p in previous]
    A = np.stack(cols, axis=1)
    if A.shape[0] != n:
        raise ShapeMismatchError(f"previous filters must have {n} coefficients")
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return U[:, :rank]


def feasible_projector(n, previous=()):
    """Projector onto vectors that are zero-sum and orthogonal to ``previous``."""
    B = constraint_basis(n, previous)
    return np.eye(n) - B @ B.T


def _fix_sign(v):
    nz = np.flatnonzero(np.abs(v) > SIGN_THRESHOLD)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def power_iteration(A, x0, tol=POWER_TOL, max_iter=POWER_MAX_ITER, project=None):
    """Dominant eigenpair of a symmetric PSD matrix.

    Stops when the Rayleigh quotient changes by at most ``tol`` relative to
    its magnitude. ``project`` (a matrix) is re-applied to every iterate.
    Returns ``(rayleigh_quotient, unit_vector, iterations)``.
    """
    x = x0 / np.linalg.norm(x0)
    rho = float(x @ A @ x)
    for it in range(1, max_iter + 1):
        y = A @ x
        if project is not None:
            y = project @ y
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, x, it
        x = y / norm
        rho_new = float(x @ A @ x)
        if abs(rho_new - rho) <= tol * max(abs(rho_new), np.finfo(float).tiny):
            return rho_new, x, it
        rho = rho_new
    return rho, x, max_iter


def _seed_rng(seed, *path):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *path]))


def solve_next_filter(Q, previous=(), seed=0, *, tol=POWER_TOL, max_iter=POWER_MAX_ITER,
                      _rng_path=()):
    """Best zero-sum unit filter orthogonal to every filter in ``previous``.

    Parameters
    ----------
    Q : GramMatrix or (k^2, k^2) array
    previous : sequence of k x k filters already in the bank
    seed : int
        Seeds the power-iteration start vector and, for a degenerate ``Q``,
        the fallback filter.

    Returns
    -------
    ndarray of shape (k, k)
        The first coefficient with magnitude above 1e-8 is positive.
    """
    Q = _entries(Q)
    n = Q.shape[0]
    k = int(round(np.sqrt(n)))
    if k * k != n or Q.shape != (n, n):
        raise ShapeMismatchError(f"Gram matrix must be k^2 x k^2, got {Q.shape}")
    previous = list(previous)
    if n - 1 - len(previous) < 1:
        raise SubspaceExhaustedError(
            f"no feasible filter: k={k} leaves {n - 1} zero-sum dimensions, "
            f"{len(previous)} already used"
        )
    P = feasible_projector(n, previous)
    if np.trace(P) < 0.5:
        raise SubspaceExhaustedError("previous filters span the whole zero-sum subspace")
    A = P @ Q @ P
    A = 0.5 * (A + A.T)
    rng = _seed_rng(seed, *_rng_path)
    x0 = P @ rng.standard_normal(n)
    while np.linalg.norm(x0) < 1e-6:
        x0 = P @ rng.standard_normal(n)

    q_norm = np.linalg.norm(Q)
    if q_norm == 0.0 or np.linalg.norm(A) <= DEGENERATE_RTOL * q_norm:
        warnings.warn(
            "projected Gram matrix is numerically zero; using a seeded feasible filter",
            DegenerateGramWarning,
            stacklevel=2,
        )
        v = x0 / np.linalg.norm(x0)
    else:
        _, v, _ = power_iteration(A, x0, tol=tol, max_iter=max_iter, project=P)
    # one last projection keeps the constraints at machine precision
    v = P @ v
    v /= np.linalg.norm(v)
    return _fix_sign(v).reshape(k, k)


def design_filter_bank(Q_per_channel, M, epsilon=DEFAULT_EPSILON, seed=0):
    """Design ``M`` filters per channel by sequential deflation.

    Returns a :class:`FilterBank` whose ``objectives[c, m]`` holds the
    quadratic-form value of filter ``m`` in channel ``c``.
    """
    Q_per_channel = list(Q_per_channel)
    if not Q_per_channel:
        raise ShapeMismatchError("need at least one channel Gram matrix")
    mats = [_entries(Q) for Q in Q_per_channel]
    n = mats[0].shape[0]
    k = int(round(np.sqrt(n)))
    if k * k != n:
        raise ShapeMismatchError(f"Gram matrix size {n} is not a square of an integer")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if M > n - 1:
        raise TooManyFiltersError(f"M={M} exceeds k^2 - 1 = {n - 1} for k={k}")
    filters = np.zeros((len(mats), M, k, k))
    objectives = np.zeros((len(mats), M))
    for c, Q in enumerate(mats):
        if Q.shape != (n, n):
            raise ShapeMismatchError("all channel Gram matrices must share k")
        for m in range(M):
            f = solve_next_filter(Q, filters[c, :m], seed, _rng_path=(c, m))
            filters[c, m] = f
            objectives[c, m] = filter_objective(Q, f)
    return FilterBank(filters, float(epsilon), objectives)


# ---------------------------------------------------------------------------
# Lifted (homogeneous) form


@dataclass
class LiftedConstraint:
    """``trace(matrix @ X) <sense> bound``; ``sense`` is one of ``==``, ``<=``, ``>=``."""

    name: str
    matrix: np.ndarray
    sense: str
    bound: float

    def value(self, X):
        return float(np.sum(self.matrix * X))

    def violation(self, X):
        v = self.value(X)
        if self.sense == "==":
            return abs(v - self.bound)
        if self.sense == "<=":
            return max(0.0, v - self.bound)
        return max(0.0, self.bound - v)


@dataclass
class HomogenizedProblem:
    """Minimise ``sum_n trace(C_n X)`` over ``X = x x^T``, ``x = (vec(f); t)``."""

    dimension: int
    objective_matrices: list
    constraints: list = field(default_factory=list)

    @staticmethod
    def lift(f, t=1.0):
        """``X = x x^T`` for ``x = (vec(f); t)``."""
        x = np.append(np.asarray(f, dtype=np.float64).ravel(), t)
        return np.outer(x, x)

    def objective(self, X):
        return float(sum(np.sum(C * X) for C in self.objective_matrices))

    def constraint_values(self, X):
        return {c.name: c.value(X) for c in self.constraints}

    def max_violation(self, X):
        return max((c.violation(X) for c in self.constraints), default=0.0)


def homogenize(Q_per_sample, previous=(), epsilon=DEFAULT_EPSILON):
    """Build the lifted problem for the next filter.

    ``Q_per_sample`` holds one ``D_n^T D_n`` per design sample; each becomes an
    objective block ``[[-Q_n, 0], [0, 0]]``. Constraints, in order:
    ``trace`` (``trace(X) == 2``), ``t2`` (``X[-1, -1] == 1``), ``zero_sum``
    (``[[0, 1/2], [1/2^T, 0]]``, ``== 0``) and, for every earlier filter ``i``,
    ``orth_i_upper`` / ``orth_i_lower`` with ``[[0, f_i/2], [f_i^T/2, 0]]``
    bounded by ``+epsilon`` / ``-epsilon``.
    """
    mats = [_entries(Q) for Q in Q_per_sample]
    previous = [np.asarray(p, dtype=np.float64).ravel() for p in previous]
    if mats:
        n = mats[0].shape[0]
    elif previous:
        n = previous[0].size
    else:
        raise ShapeMismatchError("need at least one sample or previous filter to fix the size")
    for Q in mats:
        if Q.shape != (n, n):
            raise ShapeMismatchError(f"sample matrix shape {Q.shape}, expected {(n, n)}")
    for p in previous:
        if p.size != n:
            raise ShapeMismatchError(f"previous filter has {p.size} coefficients, expected {n}")
    d = n + 1

    objective = []
    for Q in mats:
        C = np.zeros((d, d))
        C[:n, :n] = -Q
        objective.append(C)

    def coupling(v):
        A = np.zeros((d, d))
        A[:n, n] = v / 2.0
        A[n, :n] = v / 2.0
        return A

    t_sel = np.zeros((d, d))
    t_sel[n, n] = 1.0
    constraints = [
        LiftedConstraint("trace", np.eye(d), "==", 2.0),
        LiftedConstraint("t2", t_sel, "==", 1.0),
        LiftedConstraint("zero_sum", coupling(np.ones(n)), "==", 0.0),
    ]
    for i, p in enumerate(previous):
        A = coupling(p)
        constraints.append(LiftedConstraint(f"orth_{i}_upper", A, "<=", float(epsilon)))
        constraints.append(LiftedConstraint(f"orth_{i}_lower", A, ">=", -float(epsilon)))
    return HomogenizedProblem(d, objective, constraints)


# ---------------------------------------------------------------------------
# Feasibility


@dataclass
class FeasibilityReport:
    norm_deviation: np.ndarray
    dc_sum: np.ndarray
    max_abs_dot: np.ndarray
    violations: list
    tol: float = FEASIBILITY_TOL

    @property
    def ok(self):
        return not self.violations


def check_feasibility(bank, tol=FEASIBILITY_TOL):
    """Report norm, DC and pairwise-orthogonality deviations of every filter.

    A violation is recorded as ``(kind, channel, index, magnitude)`` where
    ``index`` is a filter index, or a pair of indices for ``"orthogonality"``.
    """
    C, M = bank.channels, bank.n_filters
    norm_dev = np.zeros((C, M))
    dc = np.zeros((C, M))
    max_dot = np.zeros(C)
    violations = []
    for c in range(C):
        V = bank.vectors(c)
        norms = np.linalg.norm(V, axis=1)
        norm_dev[c] = norms - 1.0
        dc[c] = V.sum(axis=1)
        for m in range(M):
            if abs(norm_dev[c, m]) > tol:
                violations.append(("norm", c, m, float(abs(norm_dev[c, m]))))
            if abs(dc[c, m]) > tol:
                violations.append(("dc", c, m, float(abs(dc[c, m]))))
        G = V @ V.T
        for i in range(M):
            for j in range(i + 1, M):
                d = abs(G[i, j])
                max_dot[c] = max(max_dot[c], d)
                if d > bank.epsilon + tol:
                    violations.append(("orthogonality", c, (i, j), float(d)))
    return FeasibilityReport(norm_dev, dc, max_dot, violations, tol)


# ---------------------------------------------------------------------------
# DFBK1 text format


def format_bank(bank):
    lines = [f"{BANK_MAGIC} {bank.channels} {bank.n_filters} {bank.k} {bank.epsilon!r}"]
    for c in range(bank.channels):
        for m in range(bank.n_filters):
            lines.append(f"{c} {m}")
            for row in bank.filters[c, m]:
                lines.append(" ".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"


def parse_bank(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty bank file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != BANK_MAGIC:
        raise FormatError(f"bad header {lines[0]!r}; expected '{BANK_MAGIC} C M k epsilon'")
    try:
        C, M, k = int(head[1]), int(head[2]), int(head[3])
        eps = float(head[4])
    except ValueError as exc:
        raise FormatError(f"bad header {lines[0]!r}") from exc
    if C < 1 or M < 1 or k < 1:
        raise FormatError(f"non-positive sizes in header {lines[0]!r}")
    expected = 1 + C * M * (k + 1)
    if len(lines) != expected:
        raise FormatError(f"expected {expected} non-empty lines, found {len(lines)}")
    filters = np.zeros((C, M, k, k))
    pos = 1
    for c in range(C):
        for m in range(M):
            if lines[pos].split() != [str(c), str(m)]:
                raise FormatError(f"expected block header '{c} {m}', got {lines[pos]!r}")
            pos += 1
            for i in range(k):
                try:
                    row = [float(v) for v in lines[pos].split()]
                except ValueError as exc:
                    raise FormatError(f"bad coefficient row {lines[pos]!r}") from exc
                if len(row) != k:
                    raise FormatError(f"row has {len(row)} values, expected {k}")
                filters[c, m, i] = row
                pos += 1
    return FilterBank(filters, eps)


def save_bank(bank, path):
    Path(path).write_text(format_bank(bank))


def load_bank(path):
    return parse_bank(Path(path).read_text())


def check_bank_channels(bank, channels):
    if bank.channels != channels:
        raise BankMismatchError(f"bank has {bank.channels} channels, images have {channels}")
