"""Synchronous round simulator with an explicit per-edge mailbox.

Agents share nothing but the vectors placed in the mailbox. Compute phases
run over a fixed partition of the agents into contiguous blocks; the
partition does not depend on the thread count, so any number of worker
threads yields bit-identical results.
"""

from __future__ import annotations

import json
import threading
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np
import scipy.sparse as sp

from .topology import NetworkGraph

BLOCK_SIZE = 64


@dataclass(frozen=True)
class StopCriteria:
    max_rounds: int = 100_000
    feasibility_tol: float = 1e-8
    step_tol: float = 1e-8

    def __post_init__(self):
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be nonnegative")


@dataclass(frozen=True, eq=False)
class RoundMailbox:
    """Copies of the vectors sent along each directed edge in one round.

    ``messages[e]`` travelled from ``src[e]`` to ``dst[e]``. ``field`` names
    the agent variable that was sent.
    """

    round: int
    field: str
    src: np.ndarray
    dst: np.ndarray
    messages: np.ndarray

    @property
    def count(self) -> int:
        return int(self.messages.shape[0])

    @property
    def volume(self) -> int:
        """Number of reals carried this round."""
        return int(self.messages.size)

    def inbox(self, i: int) -> dict[int, np.ndarray]:
        sel = np.flatnonzero(self.dst == i)
        return {int(self.src[e]): self.messages[e] for e in sel}


class _Router:
    """Precomputed edge bookkeeping for one graph."""

    def __init__(self, g: NetworkGraph):
        self.src, self.dst, self.weight = g.directed_edges
        n_dir = self.src.size
        # receive[i, e] = p_e when edge e points into i
        self.receive = sp.csr_matrix(
            (self.weight, (self.dst, np.arange(n_dir))), shape=(g.n, n_dir)
        )


_ROUTERS: "weakref.WeakKeyDictionary[NetworkGraph, _Router]" = weakref.WeakKeyDictionary()
_ROUTERS_LOCK = threading.Lock()


def _router(g: NetworkGraph) -> _Router:
    with _ROUTERS_LOCK:
        r = _ROUTERS.get(g)
        if r is None:
            r = _ROUTERS[g] = _Router(g)
    return r


def exchange(g: NetworkGraph, y, round: int = 0, field: str = "y") -> tuple[RoundMailbox, np.ndarray]:
    """Deliver every ``y_i`` to the neighbors of ``i`` and aggregate.

    Returns the mailbox and ``t`` with ``t_i = sum_{j in N_i} p_ij (y_i - y_j)``
    where each ``y_j`` is read from the message ``j -> i``.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] != g.n:
        raise ValueError(f"expected shape ({g.n}, m), got {y.shape}")
    r = _router(g)
    messages = y[r.src]
    messages.setflags(write=False)
    box = RoundMailbox(round, field, r.src, r.dst, messages)
    t = r.receive @ (y[r.dst] - messages)
    return box, t


class Harness:
    """Round driver: block scheduling, message exchange and accounting.

    Parameters
    ----------
    graph : NetworkGraph
        Communication graph.
    threads : int, optional
        Worker threads for compute phases; 1 runs them inline.
    order : {"forward", "reverse"}, optional
        Order in which blocks are dispatched within a phase.
    payload : str, optional
        Agent variable placed in the mailbox. Anything other than ``"y"``
        breaks the algorithm's communication contract and exists so the
        locality audit can be tested against a leaking run.
    message_log : file-like, optional
        Receives one JSON line ``{round, from, to, y}`` per message.
    keep_mailboxes : bool, optional
        Retain every round's mailbox for auditing.
    """

    def __init__(self, graph: NetworkGraph, threads: int = 1, order: str = "forward",
                 payload: str = "y", message_log: TextIO | None = None,
                 keep_mailboxes: bool = False, block_size: int = BLOCK_SIZE):
        if threads < 1:
            raise ValueError("threads must be >= 1")
        if order not in ("forward", "reverse"):
            raise ValueError(f"unknown block order {order!r}")
        self.graph = graph
        self.threads = threads
        self.payload = payload
        self.message_log = message_log
        self.keep_mailboxes = keep_mailboxes
        self.mailboxes: list[RoundMailbox] = []
        self.messages_sent = 0
        self.reals_sent = 0
        self.rounds_exchanged = 0
        starts = range(0, graph.n, block_size)
        self.blocks = [slice(s, min(s + block_size, graph.n)) for s in starts]
        if order == "reverse":
            self.blocks.reverse()
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def run_phase(self, fn: Callable[[slice], None]) -> None:
        """Run ``fn(block)`` for every agent block, then wait (barrier)."""
        if self._pool is None or len(self.blocks) == 1:
            for block in self.blocks:
                fn(block)
            return
        for fut in [self._pool.submit(fn, block) for block in self.blocks]:
            fut.result()

    def exchange(self, state_vars: dict[str, np.ndarray], round: int) -> np.ndarray:
        """Send the payload variable along every edge; return the aggregates ``t``."""
        box, t = exchange(self.graph, state_vars[self.payload], round=round, field=self.payload)
        self.messages_sent += box.count
        self.reals_sent += box.volume
        self.rounds_exchanged += 1
        if self.keep_mailboxes:
            self.mailboxes.append(box)
        if self.message_log is not None:
            for s, d, msg in zip(box.src, box.dst, box.messages):
                self.message_log.write(
                    json.dumps({"round": round, "from": int(s), "to": int(d), "y": msg.tolist()}) + "\n"
                )
        return t


# -- locality audit -----------------------------------------------------------------


@dataclass(frozen=True)
class LocalityViolation:
    round: int
    agent: int
    reason: str

    def __str__(self) -> str:
        return f"round {self.round}, agent {self.agent}: {self.reason}"


@dataclass
class LocalityReport:
    rounds: int
    expected_messages: int
    expected_reals: int
    replayed_steps: int = 0
    violations: list[LocalityViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.passed:
            return (f"locality audit passed: {self.rounds} rounds, {self.replayed_steps} replayed agent steps, "
                    f"{self.expected_messages} messages of {self.expected_reals // max(self.expected_messages, 1)} "
                    "reals per round")
        return "locality audit FAILED\n" + "\n".join(str(v) for v in self.violations)


def _row_bytes(state, i: int) -> bytes:
    return b"".join(np.ascontiguousarray(arr[i]).tobytes() for arr in (state.x, state.y, state.lam, state.t))


def audit_locality(problem, hp, rounds: int = 100, seed: int = 0, payload: str = "y",
                   replay: bool = True, variant: str = "dga", max_violations: int = 20) -> LocalityReport:
    """Instrumented run plus non-neighbor replay.

    1. Run ``rounds`` rounds keeping every mailbox; each message must carry
       the sender's ``y`` bit for bit, and every round must carry exactly
       ``2|E|`` vectors of ``m`` reals.
    2. For every recorded round ``k`` and agent ``i``, overwrite the full
       state of every agent outside ``N_i`` and ``i`` with random values,
       advance one round and require agent ``i``'s new state to be
       bit-identical to the recorded round ``k+1``.
    """
    from .dga import exact_mm_step, run, step  # deferred: dga builds on this module

    g = problem.graph
    expected = len(g.edges) * 2
    report = LocalityReport(rounds, expected, expected * problem.m)

    def flag(k: int, i: int, reason: str) -> bool:
        report.violations.append(LocalityViolation(k, i, reason))
        return len(report.violations) >= max_violations

    with Harness(g, payload=payload, keep_mailboxes=True) as h:
        trace = run(problem, hp, StopCriteria(rounds, 0.0, 0.0), variant=variant, harness=h, keep_history=True)
    hist = trace.history
    for box in h.mailboxes:
        state = hist[box.round]
        if box.field != "y":
            if flag(box.round, int(box.src[0]), f"mailbox carries {box.field!r} instead of y"):
                return report
            continue
        if box.count != expected or box.volume != expected * problem.m:
            if flag(box.round, -1, f"{box.count} messages / {box.volume} reals, expected {expected} / "
                                   f"{expected * problem.m}"):
                return report
        sent = state.y[box.src]
        bad = np.flatnonzero(np.any(sent != box.messages, axis=1))
        for e in bad:
            if flag(box.round, int(box.src[e]), f"message to {int(box.dst[e])} differs from the sender's y"):
                return report
    if not replay or not report.passed:
        return report

    rng = np.random.default_rng(seed)
    advance = exact_mm_step if variant == "exact_mm" else step
    extra = {} if variant == "exact_mm" else {"literal": variant == "dga_algorithm1_literal"}
    neighborhoods = [np.array(sorted({i, *g.neighbors[i]})) for i in range(g.n)]
    with Harness(g) as scratch:
        for k in range(len(hist) - 1):
            target = hist[k + 1]
            for i in range(g.n):
                probe = hist[k].copy()
                outside = np.ones(g.n, dtype=bool)
                outside[neighborhoods[i]] = False
                for arr in (probe.x, probe.y, probe.lam, probe.t):
                    arr[outside] = rng.standard_normal((int(outside.sum()),) + arr.shape[1:]) * 1e3
                nxt = advance(probe, problem, hp, scratch, **extra)
                report.replayed_steps += 1
                if _row_bytes(nxt, i) != _row_bytes(target, i):
                    if flag(k, i, "state changed when non-neighbor states were randomized"):
                        return report
    return report
