"""Single-agent lexicographic minimization over a trajectory window.

With opponents fixed, each preference level becomes one smooth NLP over the
stacked (state, control) window via direct transcription: dynamics and the
initial state are equality constraints, hard scenario constraints and control
bounds are inequalities, and every previously solved level j contributes an
inequality  cost_j(z) <= y_j* + delta  that preserves its recorded optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import sum_terms_grad, sum_terms_hess_diag, sum_terms_value
from .dynamics import CONTROL_DIM, STATE_DIM, AgentState, Trajectory
from .model import AgentSpec, RoadGeometry
from .nlp import SmoothProgram, SolveResult, minimize

VAR_DIM = STATE_DIM + CONTROL_DIM

# small clearance pad used only inside the solver's collision rows, so executed
# margins stay positive against the exact radii despite feasibility tolerances
COLLISION_PADDING = 1e-3


@dataclass
class SolverOptions:
    """NLP settings used by every level solve in a game."""

    tol: float = 1e-4
    feas_tol: float = 1e-5
    rho0: float = 100.0
    rho_factor: float = 10.0
    rho_max: float = 1e4
    max_outer: int = 25
    max_inner: int = 200


@dataclass(frozen=True)
class FixedOpponent:
    """An opponent's window held fixed during a best response: id, footprint, positions (T, 2)."""

    agent_id: int
    radius: float
    positions: np.ndarray


@dataclass
class BestResponseProblem:
    """One agent's window problem at stage time `window_start` with fixed opponents."""

    agent: AgentSpec
    window_start: int
    measured_state: AgentState
    opponents: list
    road: RoadGeometry
    t_window: int
    dt: float
    warm_start: Trajectory
    warm_duals: dict = field(default_factory=dict)

    def __post_init__(self):
        T = self.t_window
        if len(self.warm_start) != T:
            raise ValueError(f"warm start must have length {T}, got {len(self.warm_start)}")
        for opp in self.opponents:
            if opp.positions.shape != (T, 2):
                raise ValueError(
                    f"opponent {opp.agent_id} window must be ({T}, 2), got {opp.positions.shape}"
                )
        start = self.warm_start.states[0]
        measured = self.measured_state.as_array()
        if not np.allclose(start, measured, atol=1e-9):
            raise ValueError("warm start does not begin at the measured state")


class LevelInfeasibleError(RuntimeError):
    """A preference level's NLP could not be made feasible."""

    def __init__(self, agent_id: int, level: int, message: str = ""):
        super().__init__(f"agent {agent_id} level {level} infeasible{': ' + message if message else ''}")
        self.agent_id = agent_id
        self.level = level


@dataclass
class LexiSolution:
    """Result of one lexicographic solve: the level-K trajectory plus per-level records."""

    trajectory: Trajectory
    level_optima: np.ndarray
    statuses: list
    duals: dict

    @property
    def inner_iterations(self) -> int:
        return int(sum(r.inner_iterations for r in self.statuses))


def level_bound_slack(y_star: float) -> float:
    """Numerical slack added to each level-optimum bound."""
    return 1e-6 * (1.0 + abs(y_star))


class WindowTranscription:
    """Flattens one agent's window into z = [x_0, u_0, ..., x_{T-1}, u_{T-1}]
    and evaluates all constraint blocks with analytic adjoints.

    Control boxes and the forward-only speed constraint are expressed as
    variable bounds (enforced exactly by the inner solver); collision, road and
    pedestrian constraints are inequality rows. Split/trig evaluations are
    memoized per point since the solver queries several blocks at each iterate.
    """

    def __init__(self, problem: BestResponseProblem):
        self.problem = problem
        self.T = problem.t_window
        self.dt = problem.dt
        self.dim = self.T * VAR_DIM
        agent = problem.agent
        self.measured = problem.measured_state.as_array()

        self.opp_positions = (
            np.stack([o.positions for o in problem.opponents])
            if problem.opponents
            else np.zeros((0, self.T, 2))
        )
        self.opp_clearance_sq = np.array(
            [(agent.radius + o.radius + COLLISION_PADDING) ** 2 for o in problem.opponents]
        )

        cons = agent.constraints
        self.hard_road = cons.hard_road
        self.hard_pedestrians = cons.hard_pedestrians
        self.forward_only = cons.forward_only
        self.road_margin = problem.road.half_width - agent.radius
        peds = problem.road.pedestrian_array()
        self.ped_xy = peds[:, :2]
        self.ped_clearance_sq = (agent.radius + peds[:, 2]) ** 2

        lower = np.full((self.T, VAR_DIM), -np.inf)
        upper = np.full((self.T, VAR_DIM), np.inf)
        lower[:, STATE_DIM:] = agent.control_bounds.lower()
        upper[:, STATE_DIM:] = agent.control_bounds.upper()
        if self.forward_only:
            lower[:, 3] = 0.0
        self.bounds = (lower.reshape(-1), upper.reshape(-1))
        self._cache_z = None
        self._levels = problem.agent.preferences.levels
        self._init_jacobians()

    def _init_jacobians(self):
        """Preallocate dense Jacobian buffers; only state-dependent entries are
        rewritten per evaluation."""
        T, n, dt = self.T, self.dim, self.dt
        m = STATE_DIM * T
        Je = np.zeros((m, n))
        Je[np.arange(STATE_DIM), np.arange(STATE_DIM)] = 1.0
        t = np.arange(T - 1)
        for comp in range(STATE_DIM):
            rows = STATE_DIM + STATE_DIM * t + comp
            Je[rows, VAR_DIM * (t + 1) + comp] = 1.0
            Je[rows, VAR_DIM * t + comp] = -1.0
        Je[STATE_DIM + STATE_DIM * t + 2, VAR_DIM * t + STATE_DIM + 1] = -dt  # heading wrt yaw rate
        Je[STATE_DIM + STATE_DIM * t + 3, VAR_DIM * t + STATE_DIM] = -dt  # speed wrt accel
        self._eq_jac_buf = Je
        # flat indices of the four trig-dependent entries per dynamics step
        self._eq_flat_px_th = (STATE_DIM + STATE_DIM * t + 0) * n + VAR_DIM * t + 2
        self._eq_flat_px_v = (STATE_DIM + STATE_DIM * t + 0) * n + VAR_DIM * t + 3
        self._eq_flat_py_th = (STATE_DIM + STATE_DIM * t + 1) * n + VAR_DIM * t + 2
        self._eq_flat_py_v = (STATE_DIM + STATE_DIM * t + 1) * n + VAR_DIM * t + 3

        n_base = self.base_ineq_size()
        Ji = np.zeros((n_base, n))
        row = 0
        steps = np.arange(T)
        n_opp = self.opp_positions.shape[0]
        flat_x = []
        flat_y = []
        for _o in range(n_opp):
            flat_x.append((row + steps) * n + VAR_DIM * steps + 0)
            flat_y.append((row + steps) * n + VAR_DIM * steps + 1)
            row += T
        self._ineq_flat_opp_x = np.concatenate(flat_x) if flat_x else np.zeros(0, dtype=int)
        self._ineq_flat_opp_y = np.concatenate(flat_y) if flat_y else np.zeros(0, dtype=int)
        if self.hard_road:
            Ji[row + steps, VAR_DIM * steps + 1] = -1.0
            row += T
            Ji[row + steps, VAR_DIM * steps + 1] = 1.0
            row += T
        flat_x = []
        flat_y = []
        if self.hard_pedestrians and self.ped_xy.shape[0]:
            for t_step in range(T):
                P = self.ped_xy.shape[0]
                rows = row + np.arange(P)
                flat_x.append(rows * n + VAR_DIM * t_step + 0)
                flat_y.append(rows * n + VAR_DIM * t_step + 1)
                row += P
        self._ineq_flat_ped_x = np.concatenate(flat_x) if flat_x else np.zeros(0, dtype=int)
        self._ineq_flat_ped_y = np.concatenate(flat_y) if flat_y else np.zeros(0, dtype=int)
        self._ineq_jac_buf = Ji

    # -- packing ---------------------------------------------------------

    def pack(self, trajectory: Trajectory) -> np.ndarray:
        z = np.concatenate([trajectory.states, trajectory.controls], axis=1)
        # keep headings continuous inside the window so the dynamics equalities
        # are not broken by the simulator's angle wrapping
        z[:, 2] = np.unwrap(z[:, 2])
        # anchor the first heading at the measured value
        z[0, 2] = self.measured[2]
        return z.reshape(-1).copy()

    def _split(self, z: np.ndarray):
        """Split with per-point memoization of the views and heading trig."""
        if self._cache_z is None or not np.array_equal(z, self._cache_z):
            zz = z.reshape(self.T, VAR_DIM)
            X = zz[:, :STATE_DIM]
            U = zz[:, STATE_DIM:]
            theta = X[:-1, 2]
            self._cache_z = z.copy()
            self._cache = (X.copy(), U.copy(), np.cos(theta), np.sin(theta))
        return self._cache

    def split(self, z: np.ndarray):
        X, U, _, _ = self._split(z)
        return X, U

    def controls(self, z: np.ndarray) -> np.ndarray:
        return z.reshape(self.T, VAR_DIM)[:, STATE_DIM:].copy()

    # -- equality block: initial state + dynamics -------------------------

    def eq(self, z: np.ndarray) -> np.ndarray:
        X, U, cos_t, sin_t = self._split(z)
        dt = self.dt
        v = X[:-1, 3]
        out = np.empty(STATE_DIM * self.T)
        out[:STATE_DIM] = X[0] - self.measured
        res = out[STATE_DIM:].reshape(self.T - 1, STATE_DIM)
        res[:, 0] = X[1:, 0] - X[:-1, 0] - dt * v * cos_t
        res[:, 1] = X[1:, 1] - X[:-1, 1] - dt * v * sin_t
        res[:, 2] = X[1:, 2] - X[:-1, 2] - dt * U[:-1, 1]
        res[:, 3] = X[1:, 3] - v - dt * U[:-1, 0]
        return out

    def eq_vjp(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        X, _U, cos_t, sin_t = self._split(z)
        dt = self.dt
        out = np.zeros((self.T, VAR_DIM))
        dX = out[:, :STATE_DIM]
        dU = out[:, STATE_DIM:]
        dX[0] += w[:STATE_DIM]
        W = w[STATE_DIM:].reshape(self.T - 1, STATE_DIM)
        dX[1:] += W
        v = X[:-1, 3]
        dX[:-1, 0] -= W[:, 0]
        dX[:-1, 1] -= W[:, 1]
        dX[:-1, 2] -= dt * v * (W[:, 1] * cos_t - W[:, 0] * sin_t) + W[:, 2]
        dX[:-1, 3] -= dt * (W[:, 0] * cos_t + W[:, 1] * sin_t) + W[:, 3]
        dU[:-1, 0] -= dt * W[:, 3]
        dU[:-1, 1] -= dt * W[:, 2]
        return out.reshape(-1)

    # -- base inequality block --------------------------------------------

    def base_ineq(self, z: np.ndarray) -> np.ndarray:
        X, _U, _, _ = self._split(z)
        rows = []
        if self.opp_positions.shape[0]:
            diff = X[None, :, :2] - self.opp_positions  # (n_opp, T, 2)
            d2 = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
            rows.append((d2 - self.opp_clearance_sq[:, None]).reshape(-1))
        if self.hard_road:
            rows.append(self.road_margin - X[:, 1])
            rows.append(X[:, 1] + self.road_margin)
        if self.hard_pedestrians and self.ped_xy.shape[0]:
            diff = X[:, None, :2] - self.ped_xy[None, :, :]  # (T, P, 2)
            d2 = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
            rows.append((d2 - self.ped_clearance_sq[None, :]).reshape(-1))
        if not rows:
            return np.zeros(0)
        return np.concatenate(rows)

    def base_ineq_size(self) -> int:
        n = self.opp_positions.shape[0] * self.T
        if self.hard_road:
            n += 2 * self.T
        if self.hard_pedestrians:
            n += self.ped_xy.shape[0] * self.T
        return n

    def base_ineq_vjp(self, z: np.ndarray, w: np.ndarray) -> np.ndarray:
        X, _U, _, _ = self._split(z)
        T = self.T
        out = np.zeros((T, VAR_DIM))
        dX = out[:, :STATE_DIM]
        k = 0
        n_opp = self.opp_positions.shape[0]
        if n_opp:
            n = n_opp * T
            W = w[k : k + n].reshape(n_opp, T)
            diff = X[None, :, :2] - self.opp_positions
            dX[:, :2] += 2.0 * np.einsum("ot,otj->tj", W, diff)
            k += n
        if self.hard_road:
            dX[:, 1] -= w[k : k + T]
            k += T
            dX[:, 1] += w[k : k + T]
            k += T
        if self.hard_pedestrians and self.ped_xy.shape[0]:
            P = self.ped_xy.shape[0]
            n = T * P
            W = w[k : k + n].reshape(T, P)
            diff = X[:, None, :2] - self.ped_xy[None, :, :]
            dX[:, :2] += 2.0 * np.einsum("tp,tpj->tj", W, diff)
            k += n
        return out.reshape(-1)

    # -- dense Jacobians for the Newton inner solver -----------------------

    def eq_jac(self, z: np.ndarray) -> np.ndarray:
        X, _U, cos_t, sin_t = self._split(z)
        dt = self.dt
        v = X[:-1, 3]
        J = self._eq_jac_buf
        J.flat[self._eq_flat_px_th] = dt * v * sin_t
        J.flat[self._eq_flat_px_v] = -dt * cos_t
        J.flat[self._eq_flat_py_th] = -dt * v * cos_t
        J.flat[self._eq_flat_py_v] = -dt * sin_t
        return J

    def base_ineq_jac(self, z: np.ndarray) -> np.ndarray:
        X, _U, _, _ = self._split(z)
        J = self._ineq_jac_buf
        if self.opp_positions.shape[0]:
            diff = X[None, :, :2] - self.opp_positions
            J.flat[self._ineq_flat_opp_x] = (2.0 * diff[:, :, 0]).ravel()
            J.flat[self._ineq_flat_opp_y] = (2.0 * diff[:, :, 1]).ravel()
        if self.hard_pedestrians and self.ped_xy.shape[0]:
            diff = X[:, None, :2] - self.ped_xy[None, :, :]
            J.flat[self._ineq_flat_ped_x] = (2.0 * diff[:, :, 0]).ravel()
            J.flat[self._ineq_flat_ped_y] = (2.0 * diff[:, :, 1]).ravel()
        return J

    # -- level objectives ---------------------------------------------------

    def level_value(self, level_index: int, z: np.ndarray) -> float:
        X, U, _, _ = self._split(z)
        return sum_terms_value(self._levels[level_index - 1].terms, X, U)

    def level_hess_diag(self, level_index: int, z: np.ndarray) -> np.ndarray:
        X, U, _, _ = self._split(z)
        out = np.zeros((self.T, VAR_DIM))
        sum_terms_hess_diag(
            self._levels[level_index - 1].terms, X, U, (out[:, :STATE_DIM], out[:, STATE_DIM:])
        )
        return out.reshape(-1)

    def level_grad(self, level_index: int, z: np.ndarray) -> np.ndarray:
        X, U, _, _ = self._split(z)
        out = np.zeros((self.T, VAR_DIM))
        sum_terms_grad(
            self._levels[level_index - 1].terms, X, U, out=(out[:, :STATE_DIM], out[:, STATE_DIM:])
        )
        return out.reshape(-1)


def build_level_program(
    problem: BestResponseProblem, k: int, prior_optima, transcription: WindowTranscription | None = None
) -> SmoothProgram:
    """The level-k NLP: objective cost_k; dynamics/initial equalities; hard scenario
    inequalities plus one bound row  (y_j* + delta_j) - cost_j(z) >= 0  per j < k.

    When a prior optimum is numerically zero its cost-bound row would have a
    vanishing gradient on its own boundary (squared hinges are flat at their
    zero set), which destroys constraint qualification. Those bounds are
    replaced by the equivalent description of the level's zero set: tightened
    variable boxes and disc-clearance rows that imply cost_j <= y_j* + delta_j.
    Step 0 is pinned by the initial-state equality, so its (constant) cost
    contribution is exempt from the tightening.
    """
    K = len(problem.agent.preferences)
    if not 1 <= k <= K:
        raise ValueError(f"level {k} out of range 1..{K}")
    prior_optima = np.asarray(prior_optima, dtype=float)
    if prior_optima.shape != (k - 1,):
        raise ValueError(f"prior optima must have length {k - 1}, got {prior_optima.shape}")
    tr = transcription if transcription is not None else WindowTranscription(problem)
    T = tr.T

    lower = tr.bounds[0].reshape(T, VAR_DIM).copy()
    upper = tr.bounds[1].reshape(T, VAR_DIM).copy()
    disc_blocks = []  # (xy (P,2), rhs (P,)) rows d^2 - rhs >= 0 for steps 1..T-1
    row_js: list[int] = []
    row_rhs: list[float] = []
    levels = problem.agent.preferences.levels
    for j in range(1, k):
        y = float(prior_optima[j - 1])
        delta = level_bound_slack(y)
        terms = levels[j - 1].terms
        replacements = None
        if y <= delta:
            budget = (y + delta) / max(1, len(terms))
            replacements = []
            for term in terms:
                boxes = term.zero_set_boxes(budget, T)
                if boxes is not None:
                    replacements.append(("box", boxes))
                    continue
                disc = term.zero_set_disc_margin(budget, T)
                if disc is not None:
                    replacements.append(("disc", disc))
                    continue
                replacements = None
                break
        if replacements is None:
            row_js.append(j)
            row_rhs.append(y + delta)
            continue
        for kind, payload in replacements:
            if kind == "box":
                for col, lo, hi in payload:
                    if col == 2:
                        # headings are optimized on the unwrapped branch anchored
                        # at the measured state; recentre the box accordingly
                        center = 0.5 * (lo + hi)
                        shift = 2.0 * math.pi * round((tr.measured[2] - center) / (2.0 * math.pi))
                        lo, hi = lo + shift, hi + shift
                    rows = slice(0, T) if col >= STATE_DIM else slice(1, T)
                    lower[rows, col] = np.maximum(lower[rows, col], lo)
                    upper[rows, col] = np.minimum(upper[rows, col], hi)
            else:
                discs, slack = payload
                disc_blocks.append((discs[:, :2].copy(), discs[:, 2] ** 2 - slack))
    # aggressive tightening can only invert a box by tolerance-level amounts
    upper = np.maximum(upper, lower)

    rhs = np.array(row_rhs)
    n_base = tr.base_ineq_size()

    def ineq(z):
        parts = [tr.base_ineq(z)]
        if disc_blocks:
            X, _, _, _ = tr._split(z)
            for xy, block_rhs in disc_blocks:
                diff = X[1:, None, :2] - xy[None, :, :]
                d2 = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
                parts.append((d2 - block_rhs[None, :]).reshape(-1))
        if row_js:
            parts.append(rhs - np.array([tr.level_value(j, z) for j in row_js]))
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def ineq_vjp(z, w):
        out = tr.base_ineq_vjp(z, w[:n_base])
        pos = n_base
        if disc_blocks:
            X, _, _, _ = tr._split(z)
            view = out.reshape(T, VAR_DIM)
            for xy, _block_rhs in disc_blocks:
                P = xy.shape[0]
                n = (T - 1) * P
                W = w[pos : pos + n].reshape(T - 1, P)
                diff = X[1:, None, :2] - xy[None, :, :]
                view[1:, :2] += 2.0 * np.einsum("tp,tpj->tj", W, diff)
                pos += n
        for j in row_js:
            out -= w[pos] * tr.level_grad(j, z)
            pos += 1
        return out

    def ineq_curvature_diag(z, t):
        out = np.zeros(tr.dim)
        pos = n_base + sum((T - 1) * xy.shape[0] for xy, _ in disc_blocks)
        for j in row_js:
            if t[pos] > 0.0:
                out += t[pos] * tr.level_hess_diag(j, z)
            pos += 1
        return out

    def ineq_jac(z):
        parts = [tr.base_ineq_jac(z)]
        if disc_blocks:
            X, _, _, _ = tr._split(z)
            for xy, _block_rhs in disc_blocks:
                P = xy.shape[0]
                Jd = np.zeros(((T - 1) * P, tr.dim))
                diff = X[1:, None, :2] - xy[None, :, :]
                rows = np.arange((T - 1) * P).reshape(T - 1, P)
                cols = (VAR_DIM * np.arange(1, T))[:, None]
                for c in (0, 1):
                    Jd[rows, np.broadcast_to(cols + c, rows.shape)] = 2.0 * diff[:, :, c]
                parts.append(Jd)
        for j in row_js:
            parts.append(-tr.level_grad(j, z)[None, :])
        return np.vstack(parts) if len(parts) > 1 else parts[0]

    return SmoothProgram(
        dim=tr.dim,
        objective=lambda z: tr.level_value(k, z),
        objective_grad=lambda z: tr.level_grad(k, z),
        eq=tr.eq,
        eq_vjp=tr.eq_vjp,
        ineq=ineq,
        ineq_vjp=ineq_vjp,
        bounds=(lower.reshape(-1), upper.reshape(-1)),
        eq_jac=tr.eq_jac,
        ineq_jac=ineq_jac,
        objective_hess_diag=lambda z: tr.level_hess_diag(k, z),
        ineq_curvature_diag=ineq_curvature_diag,
    )


def solve_lexicographic(problem: BestResponseProblem, options: SolverOptions | None = None) -> LexiSolution:
    """Solve the agent's K levels in priority order, recording each optimum y_k*.

    Level k warm-starts from level k-1's solution; each accepted level point is
    projected onto exact dynamics by re-rolling the solved controls, so the
    recorded optima stay exactly attainable for the following level bounds.
    Raises LevelInfeasibleError carrying the failing level index.
    """
    options = options or SolverOptions()
    tr = WindowTranscription(problem)
    z = tr.pack(problem.warm_start)
    K = len(problem.agent.preferences)

    optima: list[float] = []
    statuses: list[SolveResult] = []
    duals: dict = {}
    trajectory = problem.warm_start
    for k in range(1, K + 1):
        program = build_level_program(problem, k, np.array(optima), tr)
        lam0 = mu0 = None
        warm = problem.warm_duals.get(k)
        if warm is not None:
            lam_w, mu_w = warm
            if lam_w.shape == program.eval_eq(z).shape and mu_w.shape == program.eval_ineq(z).shape:
                lam0, mu0 = lam_w, mu_w
        result = minimize(
            program,
            z,
            tol=options.tol,
            feas_tol=options.feas_tol,
            rho0=options.rho0,
            rho_factor=options.rho_factor,
            rho_max=options.rho_max,
            max_outer=options.max_outer,
            max_inner=options.max_inner,
            lam0=lam0,
            mu0=mu0,
        )
        if result.status == "infeasible":
            raise LevelInfeasibleError(problem.agent.id, k, f"kkt={result.kkt_residual:.2e}")
        trajectory = Trajectory.from_rollout(
            problem.measured_state, tr.controls(result.point), problem.dt
        )
        z = tr.pack(trajectory)
        y_k = tr.level_value(k, z)
        if not math.isfinite(y_k):
            raise ArithmeticError(f"non-finite level optimum at level {k}")
        result.point = z
        result.objective_value = y_k
        optima.append(y_k)
        statuses.append(result)
        duals[k] = result.multipliers

    return LexiSolution(
        trajectory=trajectory,
        level_optima=np.array(optima),
        statuses=statuses,
        duals=duals,
    )
