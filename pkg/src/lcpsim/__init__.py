"""Deterministic simulator and analysis toolkit for ledger consensus with overlapping UNLs."""

from .ledger import GENESIS, Ledger, LedgerStore, genesis, phi
from .protocol import Node, Proposal, ThresholdSchedule, Validation
from .sim import AdversaryPolicy, RunReport, Scenario, Simulation, run
from .trust import Condition, QuorumPolicy, TrustGraph, audit, check_pair, quorum

__version__ = "0.1.0"

__all__ = [
    "AdversaryPolicy",
    "Condition",
    "GENESIS",
    "Ledger",
    "LedgerStore",
    "Node",
    "Proposal",
    "QuorumPolicy",
    "RunReport",
    "Scenario",
    "Simulation",
    "ThresholdSchedule",
    "TrustGraph",
    "Validation",
    "audit",
    "check_pair",
    "genesis",
    "phi",
    "quorum",
    "run",
]
