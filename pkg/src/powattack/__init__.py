"""Simulation and analysis of BDoS and selfish-mining attacks on proof-of-work
chains, with and without the dummy-block defense."""

from .chain import SYSTEM, Block, BlockTree, Dummy, Full, HeaderOnly
from .engine import SimTrace, Simulation, run, sample_interblock
from .scenario import InvalidScenario, MinerSpec, Scenario, make_scenario

__version__ = "0.1.0"

__all__ = [
    "SYSTEM", "Block", "BlockTree", "Dummy", "Full", "HeaderOnly",
    "SimTrace", "Simulation", "run", "sample_interblock",
    "InvalidScenario", "MinerSpec", "Scenario", "make_scenario",
]
