"""Sparse identification of discrete-time dynamics from logged trajectories.

Given episode logs, a candidate library of basis functions over (state,
action) is evaluated row-wise into a design matrix Theta, the regression
targets are the one-step state differences (next - current), and sequentially
thresholded least squares (STLSQ) prunes the coefficient matrix to a sparse
model s_{t+1} = s_t + Theta(s_t, a_t) @ xi.

Discrete-difference targets are used instead of derivative estimates because
the built-in environments are natively discrete; no numerical differentiation
is involved. Known actuator mechanisms (the dollhouse thermostat latch, the
exogenous outdoor sinusoid) are NOT identified: restrict ``target_indices``
to the genuinely dynamic state entries and feed the known signals back in as
exogenous values when replaying.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Trajectory, fmt_float

__all__ = [
    "LibraryTerm",
    "CandidateLibrary",
    "default_library",
    "CoefficientMatrix",
    "build_design_matrix",
    "stlsq",
    "simulate_identified",
    "save_coefficients",
]

# above this condition number the normal equations lose too much precision;
# fall back to an SVD-based solve
CONDITION_LIMIT = 1e8


@dataclass(frozen=True)
class LibraryTerm:
    """A named basis function of (state, action) column vectors."""

    name: str
    state_pows: tuple[int, ...]
    action_pows: tuple[int, ...]

    def evaluate(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out = np.ones(states.shape[0])
        for j, p in enumerate(self.state_pows):
            if p:
                out = out * states[:, j] ** p
        for j, p in enumerate(self.action_pows):
            if p:
                out = out * actions[:, j] ** p
        return out


@dataclass(frozen=True)
class CandidateLibrary:
    """Ordered collection of uniquely named basis functions."""

    terms: tuple[LibraryTerm, ...]

    def __post_init__(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError("library term names must be unique")
        if not self.terms:
            raise ValueError("library must contain at least one term")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    def evaluate(self, states, actions) -> np.ndarray:
        """Evaluate all terms on row-aligned state/action matrices -> (N, p)."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if states.shape[0] != actions.shape[0]:
            raise ValueError("states and actions must have the same number of rows")
        theta = np.column_stack([t.evaluate(states, actions) for t in self.terms])
        if not np.all(np.isfinite(theta)):
            raise ValueError("library evaluation produced non-finite values")
        return theta


def _mono(n_state: int, d_action: int, s_pows=(), a_pows=()) -> LibraryTerm:
    sp = [0] * n_state
    ap = [0] * d_action
    for j, p in s_pows:
        sp[j] += p
    for j, p in a_pows:
        ap[j] += p
    return LibraryTerm("", tuple(sp), tuple(ap))


def default_library(n_state: int, d_action: int, state_names=None, action_names=None,
                    boolean_states: tuple[int, ...] = ()) -> CandidateLibrary:
    """Polynomial library: constant, linears, and all degree-2 products.

    Includes every state and action variable, all state*action products, and
    all state*state products up to degree 2. Squares of 0/1 indicator states
    (``boolean_states``) are skipped since x^2 == x would duplicate a column.
    """
    s_names = list(state_names) if state_names else [f"s{j}" for j in range(n_state)]
    a_names = list(action_names) if action_names else [f"u{j}" for j in range(d_action)]
    if len(s_names) != n_state or len(a_names) != d_action:
        raise ValueError("name lists must match state/action dimensions")

    terms: list[LibraryTerm] = []

    def add(name: str, s_pows=(), a_pows=()):
        t = _mono(n_state, d_action, s_pows, a_pows)
        terms.append(LibraryTerm(name, t.state_pows, t.action_pows))

    add("1")
    for j in range(n_state):
        add(s_names[j], s_pows=((j, 1),))
    for j in range(d_action):
        add(a_names[j], a_pows=((j, 1),))
    for i in range(n_state):
        for j in range(d_action):
            add(f"{s_names[i]}*{a_names[j]}", s_pows=((i, 1),), a_pows=((j, 1),))
    for i in range(n_state):
        for j in range(i, n_state):
            if i == j and i in boolean_states:
                continue
            add(f"{s_names[i]}*{s_names[j]}", s_pows=((i, 1), (j, 1)))
    return CandidateLibrary(tuple(terms))


def build_design_matrix(trajectories: list[Trajectory], library: CandidateLibrary,
                        target_indices=None):
    """Stack usable (state, action) samples into (Theta, targets).

    Row k of Theta is the library at (state_k, action_k); row k of targets is
    next_state_k - state_k restricted to ``target_indices`` (all state entries
    by default). The final transition of each trajectory has no successor and
    is dropped.
    """
    if not trajectories:
        raise ValueError("no trajectories given")
    env_ids = {t.env_id for t in trajectories}
    if len(env_ids) > 1:
        raise ValueError(f"trajectories come from different envs: {sorted(env_ids)}")

    theta_blocks = []
    target_blocks = []
    for traj in trajectories:
        states = traj.states
        actions = traj.actions
        if states.shape[0] < 2:
            continue
        cur = states[:-1]
        nxt = states[1:]
        theta_blocks.append(library.evaluate(cur, actions[:-1]))
        diff = nxt - cur
        target_blocks.append(diff if target_indices is None else diff[:, list(target_indices)])
    if not theta_blocks:
        raise ValueError("insufficient samples: every trajectory has fewer than 2 transitions")
    theta = np.vstack(theta_blocks)
    targets = np.vstack(target_blocks)
    if theta.shape[0] < len(library) + 1:
        raise ValueError(
            f"insufficient samples: need >= {len(library) + 1}, got {theta.shape[0]}"
        )
    return theta, targets


@dataclass(frozen=True)
class CoefficientMatrix:
    """Sparse STLSQ result: xi[p terms, n targets] with pruning metadata."""

    xi: np.ndarray
    threshold_used: float
    iterations: int
    converged: bool
    term_names: tuple[str, ...]
    target_names: tuple[str, ...]

    def coefficient(self, term: str, target: str) -> float:
        return float(self.xi[self.term_names.index(term), self.target_names.index(target)])

    def is_empty(self) -> bool:
        return not np.any(self.xi != 0.0)


def _solve_ls(theta_active: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares via normal equations; SVD fallback past the condition limit."""
    if np.linalg.cond(theta_active) > CONDITION_LIMIT:
        return np.linalg.lstsq(theta_active, y, rcond=None)[0]
    gram = theta_active.T @ theta_active
    return np.linalg.solve(gram, theta_active.T @ y)


def stlsq(theta: np.ndarray, targets: np.ndarray, threshold: float = 0.01,
          max_iters: int = 20, term_names=None, target_names=None) -> CoefficientMatrix:
    """Sequentially thresholded least squares.

    Iterates {solve least squares on the active set; zero coefficients below
    ``threshold``; shrink the active set} until a fixed point or ``max_iters``.
    A zero threshold degenerates to plain least squares. Rank deficiency on an
    active set raises with a hint to shrink the library or add data.
    """
    theta = np.asarray(theta, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if theta.shape[0] != targets.shape[0]:
        raise ValueError("Theta and targets must have the same number of rows")
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    p = theta.shape[1]
    n = targets.shape[1]
    term_names = tuple(term_names) if term_names else tuple(f"t{i}" for i in range(p))
    target_names = tuple(target_names) if target_names else tuple(f"x{i}" for i in range(n))

    def solve_on(support: np.ndarray, col: int) -> np.ndarray:
        coef = np.zeros(p)
        if not np.any(support):
            return coef
        active = theta[:, support]
        if np.linalg.matrix_rank(active) < active.shape[1]:
            raise np.linalg.LinAlgError(
                f"rank-deficient active set for target {target_names[col]!r}; "
                "use a smaller library or more data"
            )
        coef[support] = _solve_ls(active, targets[:, col])
        return coef

    xi = np.column_stack([solve_on(np.ones(p, dtype=bool), j) for j in range(n)])
    iterations = 0
    converged = threshold == 0.0
    for _ in range(max_iters):
        if converged:
            break
        iterations += 1
        small = np.abs(xi) < threshold
        xi[small] = 0.0
        new_xi = np.column_stack([solve_on(~small[:, j], j) for j in range(n)])
        changed = np.any((np.abs(new_xi) < threshold) & (new_xi != 0.0))
        xi = new_xi
        if not changed:
            converged = True
    if not converged:
        # out of iterations: enforce the sparsity invariant without re-solving
        xi[np.abs(xi) < threshold] = 0.0
    return CoefficientMatrix(
        xi=xi, threshold_used=threshold, iterations=iterations,
        converged=converged, term_names=term_names, target_names=target_names,
    )


def simulate_identified(coeffs: CoefficientMatrix, library: CandidateLibrary,
                        initial_state, actions, target_indices=None,
                        exogenous=None, sanity_bound: float = 1e6) -> np.ndarray:
    """Roll the identified model forward: s_{t+1} = s_t + Theta(s_t, a_t) @ xi.

    With ``target_indices`` only those state entries evolve by the model; the
    remaining entries are overwritten each step from ``exogenous`` (array of
    shape (T, n_state) giving the known values at each step, e.g. logged
    outdoor temperature and heater flags). Returns states of shape (T+1, n).
    """
    state = np.array(initial_state, dtype=np.float64).reshape(-1)
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    T = actions.shape[0]
    idx = list(range(state.shape[0])) if target_indices is None else list(target_indices)
    if len(idx) != coeffs.xi.shape[1]:
        raise ValueError(
            f"coefficient matrix has {coeffs.xi.shape[1]} targets but "
            f"{len(idx)} target indices given"
        )
    if target_indices is not None and exogenous is None:
        raise ValueError("exogenous values are required when target_indices is restricted")
    if exogenous is not None:
        exogenous = np.atleast_2d(np.asarray(exogenous, dtype=np.float64))
        if exogenous.shape[0] < T:
            raise ValueError(f"exogenous needs >= {T} rows, got {exogenous.shape[0]}")

    out = np.zeros((T + 1, state.shape[0]))
    out[0] = state
    exo_idx = [j for j in range(state.shape[0]) if j not in idx]
    for t in range(T):
        theta_row = library.evaluate(out[t][None, :], actions[t][None, :])
        nxt = out[t].copy()
        nxt[idx] += (theta_row @ coeffs.xi)[0]
        if exo_idx:
            nxt[exo_idx] = exogenous[t][exo_idx]
        if np.any(~np.isfinite(nxt)) or np.max(np.abs(nxt)) > sanity_bound:
            raise FloatingPointError(f"identified model diverged at step {t}: {nxt}")
        out[t + 1] = nxt
    return out


def save_coefficients(coeffs: CoefficientMatrix, path) -> None:
    """Export nonzero coefficients as (term, target, value) text triples."""
    lines = [
        "# sparse dynamics coefficients: term,target,value",
        f"# threshold={fmt_float(coeffs.threshold_used)} iterations={coeffs.iterations} "
        f"converged={int(coeffs.converged)}",
    ]
    for i, term in enumerate(coeffs.term_names):
        for j, target in enumerate(coeffs.target_names):
            v = coeffs.xi[i, j]
            if v != 0.0:
                lines.append(f"{term},{target},{fmt_float(v)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
