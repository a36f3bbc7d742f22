"""Deterministic simulation of Replicant clusters, with safety oracles."""

from replicant.sim.harness import FOLLOWER, LEADER, SimParams, SimReport, Simulation, run
from replicant.sim.linearizability import (BudgetExceeded, HistoryEvent, Verdict,
                                           check_linearizable)
from replicant.sim.network import Crash, Partition
from replicant.sim.oracles import PeerView, check_agreement, check_prefixes, check_trim_safety

__all__ = ["FOLLOWER", "LEADER", "SimParams", "SimReport", "Simulation", "run", "BudgetExceeded",
           "HistoryEvent", "Verdict", "check_linearizable", "Crash", "Partition", "PeerView",
           "check_agreement", "check_prefixes", "check_trim_safety"]
