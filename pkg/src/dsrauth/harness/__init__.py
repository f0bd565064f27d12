"""Scenario runner, synthetic populations and the brute-force matching oracle."""

from .oracle import ScaleExceeded, oracle_match, oracle_match_chunked
from .population import BuiltStore, Person, PopulationSpec, StoreSpec, build_store, generate_population
from .runner import AssertionFailure, RunReport, report_from_transcript, run_scenario
from .scenario import AdversarySpec, FixtureMissing, Scenario, ScenarioError, bundled, bundled_dir

__all__ = [
    "AdversarySpec", "AssertionFailure", "BuiltStore", "FixtureMissing", "Person", "PopulationSpec", "RunReport",
    "ScaleExceeded", "Scenario", "ScenarioError", "StoreSpec", "build_store", "bundled", "bundled_dir",
    "generate_population", "oracle_match", "oracle_match_chunked", "report_from_transcript", "run_scenario",
]
