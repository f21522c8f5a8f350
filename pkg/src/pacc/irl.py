"""Recovering gap preferences from car-following demonstrations.

Maximum-entropy formulation on the discretized MDP: the reward is linear in
the RBF features, the demonstrator is modeled by the soft-optimal policy, and
the weights ascend the gradient

    expert feature expectations - policy feature expectations,

the latter taken against the discounted state visitation propagated through
the transition model.

The lead speed is exogenous, so demonstrations are split into runs by coarse
lead-speed level and each level gets its own conditioned transition model;
the gradient is the run-share-weighted sum over levels. Decision ticks are
subsampled from the 10 Hz logs to `decision_dt` so the discount horizon
matches driver planning rather than the control rate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dgpt import Dgpt, dgpt_from_reward
from .features import FeatureBasis, feature_matrix
from .mdp import (ActionSet, NoiseSpec, StateGrid, TransitionModel,
                  TransitionStack, build_transition_model)
from .solver import (SoftPolicy, soft_value_iteration, soft_value_iteration_batch,
                     state_visitation, state_visitation_batch)
from .trajectory import Trajectory

MIN_DEMO_TICKS = 50


@dataclass(frozen=True)
class Demonstration:
    """Manual-driving trajectory slice used as expert evidence."""

    traj: Trajectory
    driver_id: str = ""
    scenario_id: str = ""

    def __post_init__(self):
        if len(self.traj) < MIN_DEMO_TICKS:
            raise ValueError(f"demonstration too short: {len(self.traj)} ticks")
        if np.any(self.traj.mode != "manual"):
            raise ValueError("demonstration contains non-manual ticks")
        dts = np.diff(self.traj.t)
        if len(dts) and not np.allclose(dts, dts[0], atol=1e-9):
            raise ValueError("demonstration not contiguous in time")

    @staticmethod
    def from_trajectory(traj: Trajectory, driver_id: str = "", scenario_id: str = "") -> "Demonstration":
        keep = traj.mode == "manual"
        idx = np.flatnonzero(keep)
        if len(idx) and (idx[-1] - idx[0] + 1) != len(idx):
            raise ValueError("manual ticks are not contiguous")
        return Demonstration(traj.slice(idx[0], idx[-1] + 1) if len(idx) else traj.slice(0, 0),
                             driver_id, scenario_id)


@dataclass(frozen=True)
class TrainConfig:
    # rate sized so the soft policy actually concentrates within the budget;
    # far below this the policy stays near uniform and the weights freeze
    # into the first gradient direction
    learning_rate: float = 1.0
    max_iterations: int = 150
    tolerance: float = 1e-3
    l2_penalty: float = 0.02  # gaussian prior on alpha; stops the reward from
    # being carved unboundedly negative at states the expert rarely visits
    vi_sweeps: int = 400
    vi_warm_sweeps: int = 25  # per-iteration cap once values are warm
    vi_tol: float = 1e-5
    smoothing_window: int = 5
    warm_start: bool = True
    finetune_weight: float = 3.0
    gamma: float = 0.95
    decision_dt: float = 1.0
    horizon_cap: int = 60  # decision ticks; both gradient sides truncate here
    # conditioning levels extend one step past the demonstrated lead range on
    # both sides so edge dwell is not force-assigned to a biased level
    lead_levels: tuple = tuple(2.5 + 2.5 * k for k in range(13))
    # dispersion of the decision-scale transition model, not the 10 Hz sim
    train_sigma_v: float = 0.3
    train_sigma_g: float = 1.0

    def __post_init__(self):
        for name in ("learning_rate", "max_iterations", "tolerance", "vi_sweeps",
                     "vi_tol", "smoothing_window", "finetune_weight", "decision_dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")


@dataclass
class LevelStats:
    """Sufficient statistics of the expert runs assigned to one lead level.

    Kept on the model so fine-tuning can recombine old and new evidence
    without the raw demonstrations.
    """

    lead_bin: int
    n_runs: float
    fe_sum: np.ndarray  # sum over runs of sum_t gamma^t phi(s_t)
    start_counts: np.ndarray  # weighted run-start counts per cell
    length_counts: dict  # run length (decision ticks) -> weighted count

    def merged(self, other: "LevelStats", weight: float) -> "LevelStats":
        lengths = dict(self.length_counts)
        for n, c in other.length_counts.items():
            lengths[n] = lengths.get(n, 0.0) + weight * c
        return LevelStats(
            self.lead_bin,
            self.n_runs + weight * other.n_runs,
            self.fe_sum + weight * other.fe_sum,
            self.start_counts + weight * other.start_counts,
            lengths,
        )

    @property
    def horizon(self) -> int:
        return max(self.length_counts) if self.length_counts else 0

    def feature_expectation(self) -> np.ndarray:
        return self.fe_sum / self.n_runs

    def initial_distribution(self) -> np.ndarray:
        return self.start_counts / self.n_runs

    def survival(self) -> np.ndarray:
        """Fraction of runs still alive at each decision tick."""
        out = np.zeros(self.horizon)
        for n, c in self.length_counts.items():
            out[:n] += c
        return out / self.n_runs


@dataclass
class RewardModel:
    """Linear reward weights over the feature basis, plus what fine-tuning needs."""

    alpha: np.ndarray
    basis: FeatureBasis
    grid: StateGrid
    gamma: float
    actions: ActionSet
    train_config: TrainConfig
    stats: list
    version: int = 1
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("non-finite reward weights")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")

    def reward_values(self) -> np.ndarray:
        return feature_matrix(self.basis, self.grid) @ self.alpha


# ---------------------------------------------------------------------------
# demonstrations -> cell runs


def demo_cells(demo, grid: StateGrid, decision_dt: float | None = None):
    """Cell indices (and lead speeds) at the decision rate.

    Accepts anything carrying a `.traj` (demonstrations, takeover segments).
    """
    traj = demo.traj
    stride = 1
    if decision_dt is not None and traj.dt > 0:
        stride = max(1, int(round(decision_dt / traj.dt)))
    v = traj.v[::stride]
    g = traj.g[::stride]
    v_f = traj.v_f[::stride]
    cells = grid.cell(grid.v_bin(v), grid.g_bin(g))
    return np.atleast_1d(cells), np.atleast_1d(v_f)


def _split_runs(cells: np.ndarray, v_f: np.ndarray, levels: np.ndarray):
    """Maximal consecutive stretches sharing the nearest lead level."""
    assign = np.argmin(np.abs(v_f[:, None] - levels[None, :]), axis=1)
    runs = []
    start = 0
    for i in range(1, len(cells) + 1):
        if i == len(cells) or assign[i] != assign[start]:
            runs.append((int(assign[start]), cells[start:i]))
            start = i
    return runs


def _sequence_fe(cells: np.ndarray, phi: np.ndarray, gamma: float) -> np.ndarray:
    disc = gamma ** np.arange(len(cells))
    return disc @ phi[cells]


def expert_feature_expectations(demos, basis: FeatureBasis, gamma: float,
                                grid: StateGrid | None = None,
                                decision_dt: float | None = None) -> np.ndarray:
    """(1/|D|) sum over demos of sum_t gamma^t phi(s_t).

    Accepts Demonstration objects (grid required) or plain cell-index arrays.
    """
    if len(demos) == 0:
        raise ValueError("empty demonstration set")
    if grid is None:
        raise ValueError("grid required to featurize states")
    if hasattr(demos[0], "traj"):
        sequences = [demo_cells(d, grid, decision_dt)[0] for d in demos]
    else:
        sequences = [np.asarray(d, dtype=int) for d in demos]
    phi = feature_matrix(basis, grid)
    total = np.zeros(basis.n_features)
    for cells in sequences:
        total += _sequence_fe(cells, phi, gamma)
    return total / len(sequences)


def _collect_stats(demos, models: list, grid: StateGrid, phi: np.ndarray,
                   config: TrainConfig) -> list:
    levels = np.asarray([m.v_f for m in models])
    stats = [
        LevelStats(m.lead_speed_bin, 0.0, np.zeros(phi.shape[1]),
                   np.zeros(grid.n_cells), {})
        for m in models
    ]
    for demo in demos:
        if hasattr(demo, "traj"):
            cells, v_f = demo_cells(demo, grid, config.decision_dt)
        else:
            cells = np.asarray(demo, dtype=int)
            v_f = np.full(len(cells), levels[0])
        for level_idx, run in _split_runs(cells, v_f, levels):
            run = run[: config.horizon_cap]  # both sides share this window
            st = stats[level_idx]
            st.n_runs += 1.0
            st.fe_sum += _sequence_fe(run, phi, config.gamma)
            st.start_counts[run[0]] += 1.0
            n = len(run)
            st.length_counts[n] = st.length_counts.get(n, 0.0) + 1.0
    return stats


# ---------------------------------------------------------------------------
# objective and gradient


def maxent_objective(alpha: np.ndarray, fe_expert: np.ndarray, phi: np.ndarray,
                     transition: TransitionModel, gamma: float, rho0: np.ndarray,
                     sweeps: int = 3000, tol: float = 1e-12) -> float:
    """alpha . fe_expert - E_rho0[soft V_alpha], the per-run training objective.

    Its exact gradient is fe_expert minus the feature-weighted converged
    visitation (envelope theorem on the soft value), which is what
    maxent_gradient computes; the finite-difference suite checks the pair.
    """
    reward = phi @ alpha
    sp = soft_value_iteration(reward, transition, gamma, sweeps, tol)
    return float(alpha @ fe_expert - rho0 @ sp.values)


def maxent_gradient(alpha: np.ndarray, fe_expert: np.ndarray, phi: np.ndarray,
                    transition: TransitionModel, gamma: float, rho0: np.ndarray,
                    horizon: int, sweeps: int, vi_tol: float = 1e-6,
                    values_init: np.ndarray | None = None,
                    slice_weights: np.ndarray | None = None):
    """One-level MaxEnt gradient; returns (gradient, solved SoftPolicy)."""
    reward = phi @ alpha
    sp = soft_value_iteration(reward, transition, gamma, sweeps, vi_tol, values_init)
    d = state_visitation(sp.policy, transition, rho0, horizon, gamma, slice_weights)
    return fe_expert - phi.T @ d, sp


# ---------------------------------------------------------------------------
# training


def build_training_transitions(grid: StateGrid, actions: ActionSet,
                               config: TrainConfig) -> list:
    noise = NoiseSpec(config.train_sigma_v, config.train_sigma_g)
    return [
        build_transition_model(grid, actions, config.decision_dt, noise,
                               int(grid.v_bin(level)))
        for level in config.lead_levels
    ]


def _data_hash(stats: list, config: TrainConfig) -> str:
    h = hashlib.sha256()
    h.update(repr(config).encode())
    for st in stats:
        h.update(st.fe_sum.tobytes())
        h.update(st.start_counts.tobytes())
        h.update(repr(sorted(st.length_counts.items())).encode())
    return h.hexdigest()[:16]


def _ascend(alpha0: np.ndarray, stats: list, models: list, phi: np.ndarray,
            config: TrainConfig) -> tuple[np.ndarray, dict]:
    active = [(st, m) for st, m in zip(stats, models) if st.n_runs > 0]
    if not active:
        raise ValueError("no demonstration runs on any lead level")
    total_runs = sum(st.n_runs for st, _ in active)
    # float32 halves the bandwidth of the hot tensors; gradient noise from it
    # sits far below the demonstration sampling noise
    stack = TransitionStack([m for _, m in active], dtype=np.float32)
    weights = np.array([st.n_runs / total_runs for st, _ in active])
    fe = np.stack([st.feature_expectation() for st, _ in active])
    rho0 = np.stack([st.initial_distribution() for st, _ in active])
    horizon = max(st.horizon for st, _ in active)
    survival = np.zeros((len(active), horizon))
    for i, (st, _) in enumerate(active):
        s = st.survival()
        survival[i, : len(s)] = s
    expert_side = weights @ fe

    alpha = alpha0.copy()
    values = None
    grad_norm = np.inf
    iters = 0
    converged = False
    for it in range(1, config.max_iterations + 1):
        reward = phi @ alpha
        sweeps = config.vi_sweeps if values is None else config.vi_warm_sweeps
        policy, values, _, _ = soft_value_iteration_batch(
            reward, stack, config.gamma, sweeps, config.vi_tol, values_init=values)
        visits = state_visitation_batch(policy, stack, rho0, horizon,
                                        config.gamma, survival)
        grad = expert_side - weights @ (visits @ phi) - config.l2_penalty * alpha
        grad_norm = float(np.linalg.norm(grad))
        iters = it
        if grad_norm < config.tolerance:
            converged = True
            break
        alpha = alpha + (config.learning_rate / np.sqrt(it)) * grad
    meta = {
        "iterations": iters,
        "final_gradient_norm": grad_norm,
        "converged": converged,
        "data_hash": _data_hash(stats, config),
    }
    return alpha, meta


def train_irl(demos, basis: FeatureBasis, transition, config: TrainConfig) -> RewardModel:
    """Recover the reward weights from demonstrations.

    `transition` is one TransitionModel (toy/self-contained MDPs) or a list of
    lead-level conditioned models as built by build_training_transitions.
    Deterministic given identical inputs and data order.
    """
    models = [transition] if isinstance(transition, TransitionModel) else list(transition)
    grid = models[0].grid
    phi = feature_matrix(basis, grid)
    stats = _collect_stats(demos, models, grid, phi, config)
    alpha, meta = _ascend(np.zeros(basis.n_features), stats, models, phi, config)
    driver_ids = {d.driver_id for d in demos if isinstance(d, Demonstration)}
    meta["driver_id"] = driver_ids.pop() if len(driver_ids) == 1 else ""
    return RewardModel(alpha=alpha, basis=basis, grid=grid, gamma=config.gamma,
                       actions=models[0].actions, train_config=config,
                       stats=stats, version=1, metadata=meta)


def extract_dgpt(model: RewardModel, grid: StateGrid | None = None,
                 window: int | None = None) -> Dgpt:
    """DGPT(v) = argmax over g of r(v, g), then the centered moving average."""
    grid = grid or model.grid
    window = window or model.train_config.smoothing_window
    table = dgpt_from_reward(model.reward_values(), grid, window,
                             driver_id=model.metadata.get("driver_id", ""))
    return Dgpt(table.speeds, table.gaps, version=model.version,
                driver_id=table.driver_id)


def finetune(model: RewardModel, takeovers, weight: float | None = None,
             config: TrainConfig | None = None) -> RewardModel:
    """Incremental retraining from takeover segments.

    Expert statistics are recombined with the takeover runs multiplied by
    `weight`, then the ascent warm-starts from the current alpha. An empty
    segment list (or zero weight) returns the input model untouched.
    """
    config = config or model.train_config
    if weight is None:
        weight = config.finetune_weight
    if not takeovers or weight == 0.0:
        return model
    total_ticks = sum(len(seg.traj) for seg in takeovers)
    if total_ticks < MIN_DEMO_TICKS:
        raise ValueError(
            f"takeover data too short after pooling: {total_ticks} ticks"
        )
    models = build_training_transitions(model.grid, model.actions, config)
    phi = feature_matrix(model.basis, model.grid)
    new_stats = _collect_stats(list(takeovers), models, model.grid, phi, config)
    merged = [old.merged(new, weight) for old, new in zip(model.stats, new_stats)]
    alpha0 = model.alpha if config.warm_start else np.zeros_like(model.alpha)
    alpha, meta = _ascend(alpha0, merged, models, phi, config)
    meta["driver_id"] = model.metadata.get("driver_id", "")
    meta["finetuned_from_version"] = model.version
    return replace(model, alpha=alpha, stats=merged, metadata=meta,
                   version=model.version + 1, train_config=config)
