"""Proof-of-stake role selection and stake accounting.

Miners are chosen by stake (ties to the lowest id), the training set Δc uniformly at random
per (seed, round), and validators from the enterprises left over.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from ledgerfl.core.defense import Decision, StrikeBook, Verdict
from ledgerfl.core.errors import DomainError, RegistryError

logger = logging.getLogger(__name__)


class Role(Enum):
    """Role of an enterprise in one round."""

    LOCAL = "local"
    VALIDATOR = "validator"
    SIMPLE_MINER = "simple_miner"
    LEADER_MINER = "leader_miner"


@dataclass(frozen=True)
class EnterpriseState:
    """Consortium member; ``delay`` is the enterprise's global-iteration offset ℵ."""

    id: int
    role: Role = Role.LOCAL
    stake: float = 0.0
    strikes: int = 0
    removed: bool = False
    delay: int = 0

    def __post_init__(self) -> None:
        if self.stake < 0:
            raise DomainError(f"stake of enterprise {self.id} is negative")
        if self.delay < 0:
            raise DomainError(f"delay of enterprise {self.id} is negative")

    def global_iteration(self, round_index: int) -> int:
        return self.delay + round_index

    def to_dict(self) -> dict[str, object]:
        """Serialize to dictionary."""
        return {
            "id": self.id,
            "role": self.role.value,
            "stake": self.stake,
            "strikes": self.strikes,
            "removed": self.removed,
            "delay": self.delay,
        }


States = Mapping[int, EnterpriseState]


def initial_states(count: int, delays: Sequence[int] | None = None) -> dict[int, EnterpriseState]:
    if count < 1:
        raise DomainError("the consortium needs at least one enterprise")
    delays = list(delays or [])
    return {
        i: EnterpriseState(i, delay=delays[i] if i < len(delays) else 0) for i in range(count)
    }


def _active(states: Iterable[EnterpriseState]) -> list[EnterpriseState]:
    return [s for s in states if not s.removed]


def _by_stake(states: Iterable[EnterpriseState]) -> list[EnterpriseState]:
    return sorted(states, key=lambda s: (-s.stake, s.id))


def select_simple_miner(states: States | Iterable[EnterpriseState]) -> int:
    """Highest-stake active enterprise; ties go to the lowest id.

    Raises:
        DomainError: If every enterprise has been removed.
    """
    pool = _active(states.values() if isinstance(states, Mapping) else states)
    if not pool:
        raise DomainError("no active enterprise can mine")
    return _by_stake(pool)[0].id


def select_miner_committee(states: States, size: int) -> list[int]:
    """The ``size`` highest-stake active enterprises, in selection order."""
    pool = _by_stake(_active(states.values()))
    if not pool:
        raise DomainError("no active enterprise can mine")
    return [s.id for s in pool[: max(1, size)]]


def select_leader(simple_miners: Iterable[EnterpriseState]) -> int:
    """Leader among the simple miners, by the same stake rule."""
    return select_simple_miner(simple_miners)


def select_enterprises(
    states: States,
    count: int,
    seed: int,
    round_index: int,
    exclude: Iterable[int] = (),
) -> list[int]:
    """Uniform sample of ``count`` active enterprises outside ``exclude``, sorted by id.

    Raises:
        DomainError: If fewer than ``count`` enterprises are eligible.
    """
    excluded = set(exclude)
    eligible = sorted(s.id for s in _active(states.values()) if s.id not in excluded)
    if count < 0 or count > len(eligible):
        raise DomainError(f"cannot select {count} of {len(eligible)} eligible enterprises")
    rng = np.random.default_rng([seed, round_index])
    chosen = rng.choice(len(eligible), size=count, replace=False)
    return sorted(eligible[i] for i in chosen)


def validator_count(n: int, ratio: float = 0.1) -> int:
    return max(1, math.ceil(n * ratio))


@dataclass(frozen=True)
class RoundRoles:
    """Who does what in one round."""

    leader: int
    miners: tuple[int, ...]
    selected: tuple[int, ...]
    validators: tuple[int, ...]

    def to_dict(self) -> dict[str, object]:
        """Serialize to dictionary."""
        return {
            "leader": self.leader,
            "miners": list(self.miners),
            "selected": list(self.selected),
            "validators": list(self.validators),
        }


def assign_roles(
    states: States,
    selected: int,
    seed: int,
    round_index: int,
    miners: int = 2,
    validator_ratio: float = 0.1,
) -> RoundRoles:
    """Pick the miner committee and its leader, then Δc, then validators.

    Δc is drawn from active non-miners; when there are none (a consortium of one or two)
    the miners train too. Validators come from the active enterprises outside Δc and the
    committee; failing that, from committee members outside Δc.
    """
    committee = select_miner_committee(states, miners)
    leader = select_leader(states[i] for i in committee)
    non_miners = [s.id for s in _active(states.values()) if s.id not in committee]
    exclude = committee if non_miners else []
    pool_size = len(non_miners) if non_miners else len(_active(states.values()))
    chosen = select_enterprises(states, min(selected, pool_size), seed, round_index, exclude)

    rest = [i for i in non_miners if i not in chosen]
    if not rest:
        rest = [i for i in committee if i not in chosen]
    wanted = min(len(rest), validator_count(len(states), validator_ratio))
    rng = np.random.default_rng([seed, round_index, 1])
    validators = sorted(rest[i] for i in rng.choice(len(rest), size=wanted, replace=False))
    return RoundRoles(leader, tuple(committee), tuple(chosen), tuple(validators))


def with_roles(states: States, roles: RoundRoles) -> dict[int, EnterpriseState]:
    """States with this round's roles set; everyone else is a local enterprise."""
    updated = {}
    for i, state in states.items():
        if i == roles.leader:
            role = Role.LEADER_MINER
        elif i in roles.miners:
            role = Role.SIMPLE_MINER
        elif i in roles.validators:
            role = Role.VALIDATOR
        else:
            role = Role.LOCAL
        updated[i] = replace(state, role=role)
    return updated


def apply_reward(
    states: States,
    verdicts: Sequence[Verdict],
    reward: float = 1.0,
    penalty: float = -1.0,
) -> dict[int, EnterpriseState]:
    """Reward accepted updates and penalize the rest; stakes are floored at zero.

    Enterprises already removed keep their stake.

    Raises:
        RegistryError: If a verdict names an unknown enterprise.
    """
    updated = dict(states)
    for verdict in verdicts:
        state = updated.get(verdict.enterprise_id)
        if state is None:
            raise RegistryError(f"unknown enterprise {verdict.enterprise_id}")
        if state.removed:
            continue
        delta = reward if verdict.decision is Decision.ACCEPT else penalty
        updated[verdict.enterprise_id] = replace(state, stake=max(0.0, state.stake + delta))
    return updated


def sync_strikes(states: States, book: StrikeBook) -> dict[int, EnterpriseState]:
    """Copy strike counts and removals from the strike book into the states."""
    updated = {}
    for i, state in states.items():
        strikes = book.strikes.get(i, state.strikes)
        removed = state.removed or book.is_removed(i)
        if removed and not state.removed:
            logger.info("enterprise %d leaves the consortium", i)
        updated[i] = replace(state, strikes=strikes, removed=removed)
    return updated
