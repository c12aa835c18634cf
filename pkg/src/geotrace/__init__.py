"""Deterministic simulator of a K-anonymous geolocation contact-tracing
protocol between a health authority, a location provider, an identity
provider, and an independent supervising authority.

The package splits into the protocol data model and wire codec, the
geospatial contact engine with its brute-force oracle, the four actors, a
signed message bus with a replayable transcript, the offline auditor, an
adversary harness, and a synthetic world generator, all driven end to end
by the runner and CLI.
"""

from .model import (
    ContactPolicy,
    ContactTracingReply,
    ContactTracingRequest,
    Group,
    GroupingParams,
    GroupResultPlain,
    HA,
    IDP,
    ITPA,
    LP,
    PARTIES,
    RiskContactReport,
)
from .runner import run_simulation
from .synthgen import ScenarioConfig, ScenarioError, build_world, load_scenario

__version__ = "1.0.0"

__all__ = [
    "ContactPolicy",
    "ContactTracingReply",
    "ContactTracingRequest",
    "Group",
    "GroupingParams",
    "GroupResultPlain",
    "HA",
    "IDP",
    "ITPA",
    "LP",
    "PARTIES",
    "RiskContactReport",
    "ScenarioConfig",
    "ScenarioError",
    "build_world",
    "load_scenario",
    "run_simulation",
    "__version__",
]
