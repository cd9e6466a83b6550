"""Low-storage distributed solver.

Rewrites the full-state iteration into two running per-edge accumulators
(alpha, beta) so a node keeps only ``4 * dim * degree + degree + 3`` scalars
between iterations, yet produces the same (p, u, lam) trajectory as
:mod:`locadmm.solver_full` from a matched start (duals at zero, replicas
built from positions). Communication swaps the accumulators instead of the
replica rows, with identical volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import IterationEvent, NodeScheduler, RunResult
from .errors import InvalidInit, InvalidParameter, MissingMessage, NonFiniteValue
from .network import MeasurementSet, NetworkGraph
from .solver_full import (
    FullNodeState,
    InitSpec,
    _initial_u,
    consensus_blocks,
    require_solvable,
)
from .structured_ops import NodeBlockVector, PenaltyParams, project_ball


@dataclass(frozen=True)
class LiteNodeState:
    """Per-node state of the low-storage recursion.

    ``alpha`` accumulates the dual plus the scaled own-replica sum, ``beta``
    the measurement-adjusted plus-replica sum; ``p`` is the current estimate
    (recomputed every iteration, not part of the persistent storage claim).
    """

    p: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    d: np.ndarray


def serialize_state(state: LiteNodeState, c: float, rho: float) -> np.ndarray:
    """Flatten exactly the scalars a node must keep between iterations:
    the four per-edge fields, the ranges, and ``(c, rho, degree)``."""
    k = state.d.shape[0]
    return np.concatenate(
        [
            state.u.ravel(),
            state.lam.ravel(),
            state.alpha.ravel(),
            state.beta.ravel(),
            state.d,
            np.array([c, rho, float(k)]),
        ]
    )


def init_lite(
    graph: NetworkGraph,
    positions: np.ndarray,
    u_init,
    c: float,
    measurements: MeasurementSet,
) -> list[LiteNodeState]:
    """Build iteration-zero accumulators from a position map.

    With duals at zero and replicas built from positions, the accumulators
    start as ``alpha0 = c (x_i + x_i)`` and ``beta0 = -d u0 + x_i + x_j``.
    ``u_init`` is an init-spec keyword (``"zeros"``/``"half"``/
    ``"directions"``) or an explicit per-node list of ``(degree, dim)``
    arrays.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.shape != (graph.num_nodes, graph.dim):
        raise InvalidInit(f"positions shape {pos.shape} does not match the graph")
    if isinstance(u_init, str):
        u0 = _initial_u(
            InitSpec(kind="from_positions", positions=pos, u_init=u_init), graph
        )
    else:
        u0 = [np.asarray(u, dtype=float) for u in u_init]
        if len(u0) != graph.num_nodes:
            raise InvalidInit("u_init must cover every node")
    d_node = measurements.node_ranges(graph)

    states = []
    for i in range(graph.num_nodes):
        nbrs = graph.neighbors[i]
        x_i = pos[i]
        x_nbr = (
            np.stack([pos[j] for j in nbrs]) if nbrs else np.zeros((0, graph.dim))
        )
        du = d_node[i][:, None] * u0[i]
        states.append(
            LiteNodeState(
                p=x_i.copy(),
                u=u0[i].copy(),
                lam=np.zeros((len(nbrs), graph.dim)),
                alpha=c * (x_i[None, :] + np.tile(x_i, (len(nbrs), 1))),
                beta=-du + x_i[None, :] + x_nbr,
                d=d_node[i].copy(),
            )
        )
    return states


def _check_finite_lite(state: LiteNodeState, t: int, i: int) -> None:
    # A single chained sum: any inf/NaN coordinate poisons it.
    total = (
        float(state.p.sum())
        + float(state.u.sum())
        + float(state.lam.sum())
        + float(state.alpha.sum())
        + float(state.beta.sum())
    )
    if not math.isfinite(total):
        raise NonFiniteValue(f"non-finite state at node {i}, iteration {t}")


def step_lite(
    states: list[LiteNodeState],
    graph: NetworkGraph,
    c: float,
    rho: float,
) -> list[LiteNodeState]:
    """One exchange-then-update round over all nodes.

    Every update reads the iteration-t snapshot only (in particular the dual
    step reads the pre-update dual and the accumulators as exchanged), which
    the functional update below guarantees without explicit copies.
    """
    if len(states) != graph.num_nodes:
        raise MissingMessage(
            f"expected {graph.num_nodes} node states, got {len(states)}"
        )
    out: list[Optional[LiteNodeState]] = [None] * graph.num_nodes
    for i in range(graph.num_nodes):
        out[i] = _advance_node(states, graph, c, rho, i)
    return out


def _advance_node(
    states: list[LiteNodeState],
    graph: NetworkGraph,
    c: float,
    rho: float,
    i: int,
) -> LiteNodeState:
    st = states[i]
    nbrs = graph.neighbors[i]
    k = len(nbrs)
    dim = graph.dim
    if k:
        alpha_in = np.stack([states[j].alpha[r] for j, r in zip(nbrs, graph.rev_pos[i])])
        beta_in = np.stack([states[j].beta[r] for j, r in zip(nbrs, graph.rev_pos[i])])
    else:
        alpha_in = np.zeros((0, dim))
        beta_in = np.zeros((0, dim))

    du = st.d[:, None] * st.u
    anchor = graph.anchors.get(i)
    if anchor is not None:
        p_new = anchor.copy()
    else:
        p_new = (2.0 * du - 2.0 * st.lam + st.alpha + st.beta).sum(axis=0) / (
            2.0 * (c + 1.0) * k
        )

    scale = 2.0 * (c + 1.0)
    u_tilde = st.u + (st.d / rho)[:, None] * p_new[None, :] - (
        st.d / (rho * scale)
    )[:, None] * (st.beta + alpha_in)
    u_new = project_ball(u_tilde)

    beta_new = -st.d[:, None] * u_new + p_new[None, :] + (st.beta + alpha_in) / scale
    alpha_new = st.lam + 2.0 * c * p_new[None, :]
    lam_new = st.lam + c * p_new[None, :] - (c / scale) * (st.alpha + beta_in)

    return LiteNodeState(
        p=p_new, u=u_new, lam=lam_new, alpha=alpha_new, beta=beta_new, d=st.d
    )


def reconstruct_blocks(
    states: list[LiteNodeState],
    states_prev: Optional[list[LiteNodeState]],
    graph: NetworkGraph,
    c: float,
) -> list[NodeBlockVector]:
    """Recover the replica blocks the full solver would carry.

    At iteration zero (``states_prev is None``) the replicas follow from the
    positional start; afterwards they are linear in the previous iteration's
    exchanged accumulators:
    ``z^-_{i,j} = (alpha_{i,j} + beta_{j,i}) / (2 (c+1))`` and
    ``z^+_{i,j} = (beta_{i,j} + alpha_{j,i}) / (2 (c+1))``.
    """
    if states_prev is None:
        return consensus_blocks(np.stack([s.p for s in states]), graph)
    scale = 2.0 * (c + 1.0)
    blocks = []
    for i in range(graph.num_nodes):
        nbrs = graph.neighbors[i]
        prev = states_prev[i]
        if nbrs:
            alpha_in = np.stack(
                [states_prev[j].alpha[r] for j, r in zip(nbrs, graph.rev_pos[i])]
            )
            beta_in = np.stack(
                [states_prev[j].beta[r] for j, r in zip(nbrs, graph.rev_pos[i])]
            )
        else:
            alpha_in = np.zeros((0, graph.dim))
            beta_in = np.zeros((0, graph.dim))
        blocks.append(
            NodeBlockVector(
                states[i].p.copy(),
                (prev.alpha + beta_in) / scale,
                (prev.beta + alpha_in) / scale,
            )
        )
    return blocks


def full_view(
    states: list[LiteNodeState],
    states_prev: Optional[list[LiteNodeState]],
    graph: NetworkGraph,
    c: float,
) -> list[FullNodeState]:
    """Present lite states through the full-state interface for diagnostics."""
    blocks = reconstruct_blocks(states, states_prev, graph, c)
    return [
        FullNodeState(blocks[i], states[i].u, states[i].lam)
        for i in range(graph.num_nodes)
    ]


def run_lite(
    graph: NetworkGraph,
    measurements: MeasurementSet,
    params: PenaltyParams,
    init: InitSpec | list,
    iters: int,
    *,
    seed: int = 0,
    hook=None,
    threads: int = 1,
) -> RunResult:
    """Run the low-storage solver for a fixed number of barrier rounds.

    The recursion needs consensus-feasible replicas at start, so positional
    initialization is mandatory: ``from_positions`` uses the given map,
    ``zeros`` starts every position at the origin, and ``uniform`` draws one
    position per node (unlike the full solver's per-coordinate block draw).
    Hooks receive reconstructed full-state views; the half-step scratch is
    not reconstructed, so potential-function recording is unavailable here.
    """
    require_solvable(graph)
    if iters < 1:
        raise InvalidParameter(f"iters must be >= 1, got {iters}")
    c, rho = params.c, params.rho

    if isinstance(init, list):
        states = init
    else:
        if init.kind == "from_positions":
            if init.positions is None:
                raise InvalidInit("from_positions needs a positions array")
            pos = np.asarray(init.positions, dtype=float)
        elif init.kind == "zeros":
            pos = np.zeros((graph.num_nodes, graph.dim))
        elif init.kind == "uniform":
            if not (init.lo < init.hi):
                raise InvalidInit(f"uniform bounds [{init.lo}, {init.hi}) are empty")
            rng = np.random.default_rng(seed)
            pos = rng.uniform(init.lo, init.hi, (graph.num_nodes, graph.dim))
        else:
            raise InvalidInit(f"unknown init kind {init.kind!r}")
        u_init = init.u_init
        if u_init == "directions" and init.kind != "from_positions":
            u_init = _initial_u(
                InitSpec(kind="from_positions", positions=pos, u_init="directions"),
                graph,
            )
        states = init_lite(graph, pos, u_init, c, measurements)

    comm_per_iter = 2 * graph.dim * graph.sum_degree

    with NodeScheduler(graph.num_nodes, threads) as sched:
        view = full_view(states, None, graph, c) if hook is not None else None
        if hook is not None:
            hook(IterationEvent(0, view, None, None, 0))
        for t in range(1, iters + 1):
            def advance(i: int) -> LiteNodeState:
                new = _advance_node(states, graph, c, rho, i)
                _check_finite_lite(new, t, i)
                return new

            new_states = sched.map(advance)
            states_prev, states = states, new_states
            if hook is not None:
                view_prev = view
                view = full_view(states, states_prev, graph, c)
                hook(IterationEvent(t, view, view_prev, None, comm_per_iter))

    estimates = np.stack([s.p for s in states])
    return RunResult(states=states, estimates=estimates)
