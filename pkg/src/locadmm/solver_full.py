"""Full-state distributed solver.

One iteration per node: a diagonal half-step on the stacked block
``(p, z^-, z^+)``, a broadcast of the two replica rows per neighbor, the
closed-form combine that lands the replicas back on the consensus set, the
ball-projected direction update, and the dual ascent step. States are
immutable per iteration; see :mod:`locadmm.engine` for the execution
contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import IterationEvent, NodeScheduler, RunResult
from .errors import (
    DisconnectedGraph,
    InvalidInitSpec,
    InvalidParameter,
    MissingMessage,
    NonFiniteValue,
)
from .network import NetworkGraph, MeasurementSet
from .structured_ops import NodeBlockVector, PenaltyParams, project_ball


@dataclass(frozen=True)
class FullNodeState:
    """Per-node state between iterations: block ``(p, z^-, z^+)``, ball-
    feasible direction rows ``u``, and dual rows ``lam``. The half-step
    scratch block lives outside the state, produced and consumed within one
    iteration."""

    block: NodeBlockVector
    u: np.ndarray
    lam: np.ndarray


@dataclass(frozen=True)
class EdgeMessage:
    """Replica payload sent from ``src`` to ``dst`` along one graph edge."""

    src: int
    dst: int
    payload_minus: np.ndarray
    payload_plus: np.ndarray


@dataclass(frozen=True)
class InitSpec:
    """How to build iteration-zero state.

    kind
        ``"zeros"``, ``"uniform"`` (every block coordinate i.i.d. on
        ``[lo, hi]``), or ``"from_positions"`` (consensus-feasible blocks
        built from ``positions``: own replicas at own position, plus-replicas
        at the neighbor's).
    u_init
        ``"zeros"``, ``"half"`` (all coordinates 0.5), or ``"directions"``
        (unit vectors along ``x_i - x_j``; needs positions).

    Duals always start at zero.
    """

    kind: str = "zeros"
    lo: float = -1.0
    hi: float = 1.0
    positions: Optional[np.ndarray] = None
    u_init: str = "zeros"

    KINDS = ("zeros", "uniform", "from_positions")
    U_KINDS = ("zeros", "half", "directions")


def consensus_blocks(positions: np.ndarray, graph: NetworkGraph) -> list[NodeBlockVector]:
    """Consensus-feasible blocks from a position map: ``p_i = x_i``,
    ``z^-_{i,j} = x_i``, ``z^+_{i,j} = x_j``."""
    blocks = []
    for i in range(graph.num_nodes):
        nbrs = graph.neighbors[i]
        x_i = np.asarray(positions[i], dtype=float)
        blocks.append(
            NodeBlockVector(
                x_i.copy(),
                np.tile(x_i, (len(nbrs), 1)),
                np.stack([np.asarray(positions[j], dtype=float) for j in nbrs])
                if nbrs
                else np.zeros((0, graph.dim)),
            )
        )
    return blocks


def initial_directions(positions: np.ndarray, graph: NetworkGraph) -> list[np.ndarray]:
    """Unit direction rows ``(x_i - x_j)/||x_i - x_j||`` per node; zero rows
    where the two positions coincide."""
    fields = []
    for i in range(graph.num_nodes):
        rows = np.zeros((len(graph.neighbors[i]), graph.dim))
        for k, j in enumerate(graph.neighbors[i]):
            diff = np.asarray(positions[i], dtype=float) - np.asarray(positions[j], dtype=float)
            norm = float(np.linalg.norm(diff))
            if norm > 0.0:
                rows[k] = diff / norm
        fields.append(rows)
    return fields


def _initial_u(spec: InitSpec, graph: NetworkGraph) -> list[np.ndarray]:
    if spec.u_init == "zeros":
        return [np.zeros((len(n), graph.dim)) for n in graph.neighbors]
    if spec.u_init == "half":
        return [np.full((len(n), graph.dim), 0.5) for n in graph.neighbors]
    if spec.u_init == "directions":
        if spec.positions is None:
            raise InvalidInitSpec("u_init 'directions' needs positions")
        return initial_directions(spec.positions, graph)
    raise InvalidInitSpec(f"unknown u_init {spec.u_init!r}")


def init_full(graph: NetworkGraph, config: InitSpec, seed: int = 0) -> list[FullNodeState]:
    """Build iteration-zero states for :func:`run_full`.

    Uniform draws walk the nodes in order (p, then z^- rows, then z^+ rows)
    from one seeded generator, so identical arguments give identical state.
    """
    if config.kind not in InitSpec.KINDS:
        raise InvalidInitSpec(f"unknown init kind {config.kind!r}")
    if config.u_init not in InitSpec.U_KINDS:
        raise InvalidInitSpec(f"unknown u_init {config.u_init!r}")

    if config.kind == "from_positions":
        if config.positions is None:
            raise InvalidInitSpec("from_positions needs a positions array")
        pos = np.asarray(config.positions, dtype=float)
        if pos.shape != (graph.num_nodes, graph.dim):
            raise InvalidInitSpec(f"positions shape {pos.shape} does not match the graph")
        blocks = consensus_blocks(pos, graph)
    elif config.kind == "zeros":
        blocks = [
            NodeBlockVector.zeros(len(nbrs), graph.dim) for nbrs in graph.neighbors
        ]
    else:
        if not (config.lo < config.hi):
            raise InvalidInitSpec(f"uniform bounds [{config.lo}, {config.hi}) are empty")
        rng = np.random.default_rng(seed)
        blocks = []
        for nbrs in graph.neighbors:
            k = len(nbrs)
            blocks.append(
                NodeBlockVector(
                    rng.uniform(config.lo, config.hi, graph.dim),
                    rng.uniform(config.lo, config.hi, (k, graph.dim)),
                    rng.uniform(config.lo, config.hi, (k, graph.dim)),
                )
            )

    u0 = _initial_u(config, graph)
    return [
        FullNodeState(blocks[i], u0[i], np.zeros((len(graph.neighbors[i]), graph.dim)))
        for i in range(graph.num_nodes)
    ]


def local_halfstep(
    state: FullNodeState,
    d_i: np.ndarray,
    c: float,
    anchor: Optional[np.ndarray] = None,
) -> NodeBlockVector:
    """Diagonal half-step producing the pre-projection block.

    Closed form, per neighbor j with range d and degree k:

    * ``p~   = sum_j [d u_j - lam_j + c (p + z^-_j) + p + z^+_j] / (2 (c+1) k)``
      (overridden to the anchor position for anchor nodes),
    * ``z~^-_j = lam_j / (2 c) + (p + z^-_j) / 2``,
    * ``z~^+_j = -d u_j / 2 + (p + z^+_j) / 2``.
    """
    blk = state.block
    base_minus = blk.p[None, :] + blk.z_minus
    base_plus = blk.p[None, :] + blk.z_plus
    du = np.asarray(d_i, dtype=float)[:, None] * state.u
    k = blk.degree
    p_t = (du - state.lam + c * base_minus + base_plus).sum(axis=0) / (2.0 * (c + 1.0) * k)
    if anchor is not None:
        p_t = np.asarray(anchor, dtype=float).copy()
    zm_t = state.lam / (2.0 * c) + base_minus / 2.0
    zp_t = -du / 2.0 + base_plus / 2.0
    return NodeBlockVector(p_t, zm_t, zp_t)


def gather_inbox(ztilde: Sequence[NodeBlockVector], graph: NetworkGraph, i: int) -> list[EdgeMessage]:
    """Collect the replica rows every neighbor of ``i`` broadcast this round."""
    inbox = []
    for k, j in enumerate(graph.neighbors[i]):
        r = graph.rev_pos[i][k]
        inbox.append(
            EdgeMessage(
                src=j,
                dst=i,
                payload_minus=ztilde[j].z_minus[r],
                payload_plus=ztilde[j].z_plus[r],
            )
        )
    return inbox


def combine_z(
    ztilde_i: NodeBlockVector,
    incoming: Sequence[EdgeMessage],
    c: float,
    node: Optional[int] = None,
    neighbors: Optional[Sequence[int]] = None,
    anchor: Optional[np.ndarray] = None,
) -> NodeBlockVector:
    """Closed-form combine of own and received half-step replicas.

    ``z^-_j = (c z~^-_j + z~^+ received) / (c+1)`` and symmetrically for
    ``z^+``; both endpoints of an edge evaluate the same expression in the
    same operand order, so the consensus constraint holds bitwise. The
    p-block passes through (anchors were pinned in the half-step).

    When ``node``/``neighbors`` are given, each message's addressing is
    checked and a wrong or missing payload raises :class:`MissingMessage`.
    """
    k = ztilde_i.degree
    if len(incoming) != k:
        raise MissingMessage(f"expected {k} messages, got {len(incoming)}")
    if neighbors is not None:
        for pos, msg in enumerate(incoming):
            if msg.src != neighbors[pos] or (node is not None and msg.dst != node):
                raise MissingMessage(
                    f"message {pos} addressed ({msg.src}->{msg.dst}), "
                    f"expected ({neighbors[pos]}->{node})"
                )
    recv_minus = np.stack([m.payload_minus for m in incoming]) if k else np.zeros((0, ztilde_i.dim))
    recv_plus = np.stack([m.payload_plus for m in incoming]) if k else np.zeros((0, ztilde_i.dim))
    p_new = np.asarray(anchor, dtype=float).copy() if anchor is not None else ztilde_i.p.copy()
    zm_new = (c * ztilde_i.z_minus + recv_plus) / (c + 1.0)
    zp_new = (ztilde_i.z_plus + c * recv_minus) / (c + 1.0)
    return NodeBlockVector(p_new, zm_new, zp_new)


def update_u(
    state: FullNodeState, z_new: NodeBlockVector, d_i: np.ndarray, rho: float
) -> np.ndarray:
    """Proximal direction step followed by the unit-ball projection:
    ``u_j <- proj( u_j + (d_j / rho) (p - z^+_j) )``."""
    step = (np.asarray(d_i, dtype=float) / rho)[:, None] * (z_new.p[None, :] - z_new.z_plus)
    return project_ball(state.u + step)


def update_lambda(state: FullNodeState, z_new: NodeBlockVector, c: float) -> np.ndarray:
    """Dual ascent on the self-replica constraint:
    ``lam_j <- lam_j + c (p - z^-_j)``."""
    return state.lam + c * (z_new.p[None, :] - z_new.z_minus)


def _check_finite(state: FullNodeState, t: int, i: int) -> None:
    # A single chained sum: any inf/NaN coordinate poisons it.
    total = (
        float(state.block.p.sum())
        + float(state.block.z_minus.sum())
        + float(state.block.z_plus.sum())
        + float(state.u.sum())
        + float(state.lam.sum())
    )
    if not math.isfinite(total):
        raise NonFiniteValue(f"non-finite state at node {i}, iteration {t}")


def require_solvable(graph: NetworkGraph) -> None:
    if not graph.connected:
        raise DisconnectedGraph("solver requires a connected graph")
    if not graph.anchors:
        raise DisconnectedGraph("solver requires at least one anchor")


def run_full(
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
    """Run the full-state solver for a fixed number of barrier rounds.

    ``init`` is an :class:`InitSpec` or an explicit state list. ``hook`` is
    invoked single-threaded at every barrier with an
    :class:`~locadmm.engine.IterationEvent`; iteration 0 fires before any
    update. Deterministic for fixed inputs, independent of ``threads``.

    Raises
    ------
    NonFiniteValue
        As soon as any state coordinate diverges to NaN/inf.
    """
    require_solvable(graph)
    if iters < 1:
        raise InvalidParameter(f"iters must be >= 1, got {iters}")
    states = init if isinstance(init, list) else init_full(graph, init, seed)
    d_node = measurements.node_ranges(graph)
    c, rho = params.c, params.rho
    anchors = graph.anchors
    comm_per_iter = 2 * graph.dim * graph.sum_degree

    with NodeScheduler(graph.num_nodes, threads) as sched:
        if hook is not None:
            hook(IterationEvent(0, states, None, None, 0))
        for t in range(1, iters + 1):
            ztilde = sched.map(
                lambda i: local_halfstep(states[i], d_node[i], c, anchors.get(i))
            )

            def advance(i: int) -> FullNodeState:
                inbox = gather_inbox(ztilde, graph, i)
                z_new = combine_z(
                    ztilde[i], inbox, c, node=i, neighbors=graph.neighbors[i]
                )
                new = FullNodeState(
                    z_new,
                    update_u(states[i], z_new, d_node[i], rho),
                    update_lambda(states[i], z_new, c),
                )
                _check_finite(new, t, i)
                return new

            new_states = sched.map(advance)
            states_prev, states = states, new_states
            if hook is not None:
                hook(IterationEvent(t, states, states_prev, ztilde, comm_per_iter))

    estimates = np.stack([s.block.p for s in states])
    return RunResult(states=states, estimates=estimates)
