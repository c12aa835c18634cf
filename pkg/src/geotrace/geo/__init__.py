from .store import BinnedTrace, LocationSample, Poi, TraceStore, bin_range
from .contacts import ContactEngine, ContactHit, find_direct_contacts, find_indirect_contacts
from .poi import PoiVisit, poi_distribution, poi_visits, visit_category_counts
from .oracle import OracleGuardError, oracle_contacts

__all__ = [
    "BinnedTrace",
    "ContactEngine",
    "ContactHit",
    "LocationSample",
    "OracleGuardError",
    "Poi",
    "PoiVisit",
    "TraceStore",
    "bin_range",
    "find_direct_contacts",
    "find_indirect_contacts",
    "oracle_contacts",
    "poi_distribution",
    "poi_visits",
    "visit_category_counts",
]
