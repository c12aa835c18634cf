from .ha import HealthAuthority, RoundAborted, RoundOutcome
from .intermediaries import (
    IdentityProvider,
    IndependentAuthority,
    ItpaRecord,
    RangeRegistry,
)
from .lp import LocationProvider, RetainedRequest

__all__ = [
    "HealthAuthority",
    "IdentityProvider",
    "IndependentAuthority",
    "ItpaRecord",
    "LocationProvider",
    "RangeRegistry",
    "RetainedRequest",
    "RoundAborted",
    "RoundOutcome",
]
