"""Metropolis-Hastings chains over change-point configurations ``(k, v)``.

The local-move chain mixes five proposal actions:

1. add a uniform split, or delete a random one (fair coin);
2. redraw one random split uniformly;
3. shift one random split by Normal(0, ``shift_sd_single``), holding if it
   leaves [0, 1];
4. redraw every split uniformly;
5. shift every split by Normal(0, ``shift_sd_all``), each coordinate
   holding individually if it would leave [0, 1].

Every proposal is accepted with probability ``min(1, phi(y) / phi(x))``.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from pathlib import Path

import numpy as np

from .core import (
    ChangePointState,
    HierarchyPrior,
    LabeledDataset,
    SplitMove,
    UsageError,
    compute_counts,
    shift_counts,
)
from .marginal import log_phi, log_rho

N_ACTIONS = 5
# Table ratios 3:3:5:1:10 renormalised so they sum to one.
DEFAULT_MIXTURE = tuple(w / 22.0 for w in (3, 3, 5, 1, 10))


def make_rng(seed: int, chain: int = 0) -> np.random.Generator:
    """PCG64 stream for chain ``chain`` of an experiment seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chain,))))


class RandomStream:
    """Block-buffered scalar draws from a numpy generator.

    Pulling one float at a time from ``Generator`` costs about a
    microsecond; the chains need several per step, so draws are taken in
    blocks.  The sequence is a deterministic function of the generator.
    """

    __slots__ = ("rng", "_u", "_ui", "_z", "_zi", "block")

    def __init__(self, rng: np.random.Generator, block: int = 8192):
        self.rng = rng
        self.block = block
        self._u: list[float] = []
        self._ui = 0
        self._z: list[float] = []
        self._zi = 0

    def uniform(self) -> float:
        if self._ui >= len(self._u):
            self._u = self.rng.random(self.block).tolist()
            self._ui = 0
        u = self._u[self._ui]
        self._ui += 1
        return u

    def normal(self) -> float:
        if self._zi >= len(self._z):
            self._z = self.rng.standard_normal(self.block).tolist()
            self._zi = 0
        z = self._z[self._zi]
        self._zi += 1
        return z

    def index(self, n: int) -> int:
        """Uniform integer in ``0 .. n-1``."""
        return min(int(self.uniform() * n), n - 1)


def as_stream(rng) -> RandomStream:
    if isinstance(rng, RandomStream):
        return rng
    if isinstance(rng, np.random.Generator):
        return RandomStream(rng)
    return RandomStream(np.random.default_rng(rng))


@dataclass
class KernelConfig:
    mixture_probs: tuple[float, ...] = DEFAULT_MIXTURE
    shift_sd_single: float = 0.1
    shift_sd_all: float = 0.01
    iterations: int = 200_000
    burn_in: int | None = None
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        p = tuple(float(q) for q in self.mixture_probs)
        if len(p) != N_ACTIONS or any(q <= 0 for q in p) or abs(sum(p) - 1.0) > 1e-12:
            raise UsageError("mixture_probs must be 5 positive numbers summing to 1")
        self.mixture_probs = p
        if self.burn_in is None:
            self.burn_in = self.iterations // 10
        if self.shift_sd_single <= 0 or self.shift_sd_all <= 0:
            raise UsageError("proposal standard deviations must be positive")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise UsageError("need 0 <= burn_in < iterations")
        if self.record_every < 1:
            raise UsageError("record_every must be >= 1")

    @property
    def cumulative(self) -> list[float]:
        return list(accumulate(self.mixture_probs))


@dataclass
class ChainTrace:
    """Post burn-in snapshots ``(k, ordered splits)`` and per-action tallies.

    Index ``a - 1`` of the tally arrays refers to action ``a``.
    """

    states: list[tuple[int, tuple[float, ...]]] = field(default_factory=list)
    proposals: list[int] = field(default_factory=lambda: [0] * N_ACTIONS)
    accepted: list[int] = field(default_factory=lambda: [0] * N_ACTIONS)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def ks(self) -> np.ndarray:
        return np.array([k for k, _ in self.states], dtype=np.int64)

    def acceptance_rates(self) -> dict[int, float]:
        return {
            a + 1: (self.accepted[a] / self.proposals[a] if self.proposals[a] else math.nan)
            for a in range(N_ACTIONS)
        }

    def runs(self):
        """Yield ``(snapshot, multiplicity)`` for maximal runs of equal snapshots."""
        prev = None
        count = 0
        for s in self.states:
            if s == prev:
                count += 1
                continue
            if prev is not None:
                yield prev, count
            prev, count = s, 1
        if prev is not None:
            yield prev, count

    @classmethod
    def merge(cls, traces: list["ChainTrace"]) -> "ChainTrace":
        out = cls()
        for t in traces:
            out.states.extend(t.states)
            out.proposals = [a + b for a, b in zip(out.proposals, t.proposals)]
            out.accepted = [a + b for a, b in zip(out.accepted, t.accepted)]
        return out

    def to_csv(self, path: str | Path, start_iter: int = 1, stride: int = 1) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "k", "splits"])
            for i, (k, splits) in enumerate(self.states):
                w.writerow([start_iter + i * stride, k, " ".join(repr(v) for v in splits)])


def _with_move(state: ChangePointState, dataset: LabeledDataset, splits: list[float], move: SplitMove):
    counts, ordered = shift_counts(state.counts, dataset, state.ordered_splits, move)
    return ChangePointState(splits, ordered, counts)


def propose(
    action: int,
    state: ChangePointState,
    dataset: LabeledDataset,
    config: KernelConfig,
    rng,
) -> ChangePointState:
    """Build the proposal of ``action`` (1..5).

    Hold proposals return ``state`` itself.  "Permute, then act on the last
    coordinate" is realised as acting on a uniformly chosen coordinate,
    which is the same thing for the permutation-invariant target.
    """
    rs = as_stream(rng)
    splits = state.splits
    m = len(splits)
    if action == 1:
        if rs.uniform() < 0.5:
            u = rs.uniform()
            return _with_move(state, dataset, splits + [u], SplitMove(None, u))
        if m == 0:
            return state
        i = rs.index(m)
        new = splits[:i] + splits[i + 1 :]
        return _with_move(state, dataset, new, SplitMove(splits[i], None))
    if action == 2:
        if m == 0:
            return state
        i = rs.index(m)
        u = rs.uniform()
        new = list(splits)
        new[i] = u
        return _with_move(state, dataset, new, SplitMove(splits[i], u))
    if action == 3:
        if m == 0:
            return state
        i = rs.index(m)
        u2 = splits[i] + config.shift_sd_single * rs.normal()
        if not 0.0 <= u2 <= 1.0:
            return state
        new = list(splits)
        new[i] = u2
        return _with_move(state, dataset, new, SplitMove(splits[i], u2))
    if action == 4:
        if m == 0:
            return state
        new = [rs.uniform() for _ in range(m)]
        ordered = sorted(new)
        return ChangePointState(new, ordered, compute_counts(dataset, ordered))
    if action == 5:
        if m == 0:
            return state
        sd = config.shift_sd_all
        new = []
        for v in splits:
            u2 = v + sd * rs.normal()
            new.append(u2 if 0.0 <= u2 <= 1.0 else v)
        ordered = sorted(new)
        return ChangePointState(new, ordered, compute_counts(dataset, ordered))
    raise UsageError(f"unknown action {action}")


def _ensure_log_phi(state: ChangePointState, prior: HierarchyPrior) -> float:
    if math.isnan(state.log_phi):
        state.log_phi = log_phi(state, prior)
    return state.log_phi


def mh_step(
    state: ChangePointState,
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    config: KernelConfig,
    rng,
    action: int | None = None,
) -> tuple[ChangePointState, bool, int]:
    """One Metropolis-Hastings transition.

    The action is drawn from ``config.mixture_probs`` unless forced through
    ``action``.  Returns ``(next_state, accepted, action)``.
    """
    rs = as_stream(rng)
    if action is None:
        action = min(bisect_right(config.cumulative, rs.uniform()) + 1, N_ACTIONS)
    current = _ensure_log_phi(state, prior)
    proposal = propose(action, state, dataset, config, rs)
    if proposal is state:
        return state, True, action
    lp = _ensure_log_phi(proposal, prior)
    diff = lp - current
    if diff >= 0.0 or rs.uniform() < math.exp(diff):
        return proposal, True, action
    return state, False, action


def run_chain(
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    config: KernelConfig,
    chain: int = 0,
    initial: ChangePointState | None = None,
) -> ChainTrace:
    """Run the local-move chain from the no-split state and record it."""
    rs = RandomStream(make_rng(config.seed, chain))
    state = initial if initial is not None else ChangePointState.from_splits(dataset)
    trace = ChainTrace()
    cum = config.cumulative
    proposals = trace.proposals
    accepted = trace.accepted
    record = trace.states
    burn, every = config.burn_in, config.record_every
    snap = state.snapshot()
    for it in range(1, config.iterations + 1):
        action = min(bisect_right(cum, rs.uniform()) + 1, N_ACTIONS)
        new, ok, _ = mh_step(state, dataset, prior, config, rs, action=action)
        proposals[action - 1] += 1
        if ok:
            accepted[action - 1] += 1
            if new is not state:
                state = new
                snap = state.snapshot()
        if it > burn and (it - burn) % every == 0:
            record.append(snap)
    return trace


def run_chains(
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    config: KernelConfig,
    chains: int = 1,
    workers: int | None = None,
) -> list[ChainTrace]:
    """Run ``chains`` independent chains (in worker processes when > 1)."""
    if chains <= 1:
        return [run_chain(dataset, prior, config, 0)]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers or min(chains, 8)) as pool:
        futures = [pool.submit(run_chain, dataset, prior, config, c) for c in range(chains)]
        return [f.result() for f in futures]


def sample_prior_state(dataset: LabeledDataset, prior: HierarchyPrior, rng) -> ChangePointState:
    rs = as_stream(rng)
    k = prior.sample(rs.rng)
    return ChangePointState.from_splits(dataset, [rs.uniform() for _ in range(k - 1)])


def independence_step(
    state: ChangePointState,
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    rng,
) -> tuple[ChangePointState, bool]:
    """Propose a fresh prior draw; accept with ``min(1, rho(y) / rho(x))``."""
    rs = as_stream(rng)
    proposal = sample_prior_state(dataset, prior, rs)
    diff = log_rho(proposal.counts) - log_rho(state.counts)
    if diff >= 0.0 or rs.uniform() < math.exp(diff):
        return proposal, True
    return state, False


def run_independence_chain(
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    iterations: int,
    burn_in: int = 0,
    seed: int = 0,
) -> ChainTrace:
    rs = RandomStream(make_rng(seed))
    state = ChangePointState.from_splits(dataset)
    trace = ChainTrace(proposals=[0] * N_ACTIONS, accepted=[0] * N_ACTIONS)
    for it in range(1, iterations + 1):
        state, ok = independence_step(state, dataset, prior, rs)
        trace.proposals[0] += 1
        trace.accepted[0] += ok
        if it > burn_in:
            trace.states.append(state.snapshot())
    return trace
