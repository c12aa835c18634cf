"""Contact engine behavior: radii, durations, lag windows, pair exclusion."""

from geotrace.geo.contacts import (
    ContactEngine,
    find_direct_contacts,
    find_indirect_contacts,
)
from geotrace.geo.store import LocationSample, TraceStore
from geotrace.model import ContactPolicy

A = "+34600000001"
B = "+34600000002"
C = "+34600000003"

# 60 s bins, 2-bin direct minimum, 3-bin lag window. The tight max_gap_s
# stops resampling from extending a sample beyond its own bin, so each
# put() below controls exactly one bin.
POLICY = ContactPolicy(direct_min_duration_s=120, indirect_lag_s=180, max_gap_s=30)
W = POLICY.bin_width_s
WINDOW = (0.0, 1800.0)


def put(store, user, b, x, y, acc=0.0):
    store.add(LocationSample(user, (b + 0.5) * W, x, y, accuracy_m=acc))


def engine(store, policy=POLICY):
    return ContactEngine(store, WINDOW[0], WINDOW[1], policy)


def test_direct_radius_boundary_is_inclusive():
    store = TraceStore.for_policy(POLICY)
    for b in (0, 1):
        put(store, A, b, 0.0, 0.0)
        put(store, B, b, 2.0, 0.0)
    hits = engine(store).direct_contacts(A)
    assert [h.contact for h in hits] == [B]
    assert hits[0].kind == "direct"

    store = TraceStore.for_policy(POLICY)
    for b in (0, 1):
        put(store, A, b, 0.0, 0.0)
        put(store, B, b, 2.0001, 0.0)
    assert engine(store).direct_contacts(A) == []


def test_direct_needs_minimum_duration():
    store = TraceStore.for_policy(POLICY)
    put(store, A, 0, 0.0, 0.0)
    put(store, B, 0, 1.0, 0.0)
    put(store, A, 1, 0.0, 0.0)
    put(store, B, 1, 50.0, 0.0)
    assert engine(store).direct_contacts(A) == []

    put(store, A, 2, 0.0, 0.0)
    put(store, B, 2, 1.0, 0.0)
    hits = engine(store).direct_contacts(A)
    assert len(hits) == 1
    assert hits[0].overlap_s == 2 * W


def test_direct_bins_accumulate_without_contiguity():
    store = TraceStore.for_policy(POLICY)
    for b in (0, 5):
        put(store, A, b, 0.0, 0.0)
        put(store, B, b, 1.0, 0.0)
    hits = engine(store).direct_contacts(A)
    assert len(hits) == 1
    assert hits[0].overlap_s == 2 * W
    assert hits[0].first_t == 0.0
    assert hits[0].last_t == 6 * W


def test_direct_is_symmetric():
    store = TraceStore.for_policy(POLICY)
    for b in (3, 4, 5):
        put(store, A, b, 10.0, 10.0)
        put(store, B, b, 11.5, 10.0)
    eng = engine(store)
    ab = eng.direct_contacts(A)
    ba = eng.direct_contacts(B)
    assert [h.contact for h in ab] == [B]
    assert [h.contact for h in ba] == [A]
    assert ab[0].overlap_s == ba[0].overlap_s
    assert ab[0].first_t == ba[0].first_t
    assert ab[0].last_t == ba[0].last_t


def test_indirect_lag_window_edges():
    # Subject present at bin 10 only; the later visitor is 3 m away,
    # inside the 5 m indirect radius but outside the direct radius.
    def visitor_at(b):
        store = TraceStore.for_policy(POLICY)
        put(store, A, 10, 0.0, 0.0)
        put(store, B, b, 3.0, 0.0)
        return engine(store).indirect_contacts(A)

    lag = POLICY.indirect_lag_bins
    assert lag == 3
    same_bin = visitor_at(10)
    assert [h.contact for h in same_bin] == [B]
    at_edge = visitor_at(10 + lag)
    assert [h.contact for h in at_edge] == [B]
    assert visitor_at(10 + lag + 1) == []
    # Exposure is directional: someone there before the subject is not
    # exposed by the subject.
    assert visitor_at(9) == []


def test_indirect_counts_exposure_bins_of_the_visitor():
    store = TraceStore.for_policy(POLICY)
    put(store, A, 10, 0.0, 0.0)
    put(store, A, 11, 0.0, 0.0)
    put(store, B, 12, 3.0, 0.0)
    put(store, B, 13, 3.0, 0.0)
    hits = engine(store).indirect_contacts(A)
    assert len(hits) == 1
    hit = hits[0]
    assert hit.kind == "indirect"
    assert hit.overlap_s == 2.0
    assert hit.first_t == 12 * W
    assert hit.last_t == 14 * W


def test_direct_pair_is_excluded_from_indirect():
    store = TraceStore.for_policy(POLICY)
    for b in (0, 1, 2):
        put(store, A, b, 0.0, 0.0)
        put(store, B, b, 1.0, 0.0)
    eng = engine(store)
    assert [h.contact for h in eng.direct_contacts(A)] == [B]
    assert eng.indirect_contacts(A) == []


def test_short_close_encounter_still_counts_as_indirect():
    # One co-located bin is below the direct minimum, so the pair falls
    # back to indirect exposure rather than disappearing.
    store = TraceStore.for_policy(POLICY)
    put(store, A, 4, 0.0, 0.0)
    put(store, B, 4, 1.0, 0.0)
    eng = engine(store)
    assert eng.direct_contacts(A) == []
    hits = eng.indirect_contacts(A)
    assert [h.contact for h in hits] == [B]
    assert hits[0].overlap_s == 1.0


def test_error_aware_inflates_pair_threshold():
    def build():
        s = TraceStore(cell_size_m=5.0)
        for b in (0, 1):
            put(s, A, b, 0.0, 0.0, acc=0.3)
            put(s, B, b, 2.5, 0.0, acc=0.3)
        return s

    plain = ContactEngine(build(), *WINDOW, POLICY)
    assert plain.direct_contacts(A) == []

    aware_policy = ContactPolicy(
        direct_min_duration_s=120, indirect_lag_s=180, max_gap_s=30, error_aware=True
    )
    aware = ContactEngine(build(), *WINDOW, aware_policy)
    hits = aware.direct_contacts(A)
    assert [h.contact for h in hits] == [B]


def test_distant_third_party_never_appears():
    store = TraceStore.for_policy(POLICY)
    for b in range(4):
        put(store, A, b, 0.0, 0.0)
        put(store, B, b, 1.0, 0.0)
        put(store, C, b, 500.0, 500.0)
    eng = engine(store)
    contacts = {h.contact for h in eng.contacts(A)}
    assert contacts == {B}


def test_wrapper_functions_match_engine_methods():
    store = TraceStore.for_policy(POLICY)
    for b in range(3):
        put(store, A, b, 0.0, 0.0)
        put(store, B, b, 1.0, 0.0)
    put(store, C, 5, 4.0, 0.0)
    put(store, A, 5, 0.0, 0.0)
    eng = engine(store)
    assert find_direct_contacts(store, A, *WINDOW, POLICY) == eng.direct_contacts(A)
    assert find_indirect_contacts(store, A, *WINDOW, POLICY) == eng.indirect_contacts(A)


def test_contacts_sorted_and_repeatable():
    store = TraceStore.for_policy(POLICY)
    for b in range(3):
        put(store, A, b, 0.0, 0.0)
        put(store, C, b, 1.0, 0.0)
        put(store, B, b, 1.5, 0.0)
    put(store, A, 6, 20.0, 0.0)
    put(store, "+34600000004", 7, 22.0, 0.0)
    eng = engine(store)
    first = eng.contacts(A)
    keys = [(h.contact, h.kind) for h in first]
    assert keys == sorted(keys)
    assert eng.contacts(A) == first


def test_out_of_window_samples_are_invisible():
    store = TraceStore.for_policy(POLICY)
    for b in (40, 41):
        put(store, A, b, 0.0, 0.0)
        put(store, B, b, 1.0, 0.0)
    assert engine(store).contacts(A) == []
