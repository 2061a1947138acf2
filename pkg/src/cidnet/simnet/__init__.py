from .clock import (AllOf, AnyOf, Event, Process, SimClock, Timeout,
                    unwrap)
from .network import (
    DialResult,
    RegionLatencyModel,
    SimNetwork,
    SimPeer,
    TransportProfile,
    DEFAULT_REGIONS,
)
from .churn import ChurnModel, SessionObservation, churn_cdf_create_based
from .crawler import crawl, revisit_schedule

# scenario and experiment import the node engine, which itself uses the
# clock from this package; import them directly as submodules:
#   from cidnet.simnet.scenario import Scenario, run

__all__ = [
    "AllOf", "AnyOf", "Event", "Process", "SimClock", "Timeout", "unwrap",
    "DialResult", "RegionLatencyModel", "SimNetwork", "SimPeer", "TransportProfile",
    "DEFAULT_REGIONS",
    "ChurnModel", "SessionObservation", "churn_cdf_create_based",
    "crawl", "revisit_schedule",
]
