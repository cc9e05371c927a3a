"""Measurement inventory, noise, thinning, bad data, observability."""

import numpy as np
import pytest

from dsse.errors import InvalidFadError, MeasurementNotFoundError
from dsse.measurement_model import (
    I_LINE_IM,
    I_LINE_RE,
    P_INJ,
    Q_INJ,
    REF_VOLT_IM,
    REF_VOLT_RE,
    VMAG,
    MeasurementKind,
)
from dsse.measurements import (
    SIGMA_FLOOR,
    MeasurementSet,
    add_noise,
    critical_measurements,
    full_measurement_set,
    inject_bad_random,
    inject_bad_scaled,
    measurements_from_json,
    measurements_to_json,
    numerical_rank,
    observability,
    round_half_up,
    sample_fad,
)


def test_round_half_up():
    assert round_half_up(82.5) == 83
    assert round_half_up(115.5) == 116
    assert round_half_up(0.49) == 0
    assert round_half_up(2.0) == 2
    # binary representation of decimal products must not break ties down
    assert round_half_up(0.7 * 165) == 116


def test_full_set_inventory(net, full_set):
    # refs, then per-bus magnitudes and injections, then branch currents
    assert len(full_set) == 2 + 3 * 33 + 2 * 32
    tags = [k.tag for k in full_set.kinds]
    assert tags[0] == REF_VOLT_RE
    assert tags[1] == REF_VOLT_IM
    assert tags[2:35] == [VMAG] * 33
    assert tags[35:68] == [P_INJ] * 33
    assert tags[68:101] == [Q_INJ] * 33
    assert tags[101:133] == [I_LINE_RE] * 32
    assert tags[133:165] == [I_LINE_IM] * 32
    assert all(m.sigma == 0.0 for m in full_set)
    assert all(m.value == m.truth for m in full_set)


def test_full_set_values_match_state(net, truth, full_set):
    assert full_set.find(MeasurementKind(REF_VOLT_RE, 0)) == 0
    assert full_set.measurements[0].value == truth.v[0].real
    assert full_set.measurements[1].value == truth.v[0].imag
    pos = full_set.find(MeasurementKind(VMAG, 17))
    assert abs(full_set.measurements[pos].value - 0.913090) < 5e-7


def test_duplicate_kinds_rejected(full_set):
    with pytest.raises(ValueError):
        MeasurementSet(measurements=full_set.measurements + (full_set.measurements[5],))


def test_find_missing_kind(full_set):
    with pytest.raises(MeasurementNotFoundError):
        full_set.find(MeasurementKind(VMAG, 99))


def test_add_noise_noiseless(full_set, rng):
    clean = add_noise(full_set, 0.0, rng)
    assert np.array_equal(clean.values(), clean.truths())
    assert np.all(clean.sigmas() == SIGMA_FLOOR)


def test_add_noise_scales_with_truth(full_set, rng):
    noisy = add_noise(full_set, 0.01, rng)
    sigmas = noisy.sigmas()
    expected = np.maximum(0.01 * np.abs(full_set.truths()), SIGMA_FLOOR)
    assert np.array_equal(sigmas, expected)
    assert not np.array_equal(noisy.values(), noisy.truths())
    # errors are on the sigma scale
    z = (noisy.values() - noisy.truths()) / sigmas
    assert np.max(np.abs(z)) < 6.0


def test_add_noise_is_seeded(full_set):
    a = add_noise(full_set, 0.01, np.random.default_rng(3))
    b = add_noise(full_set, 0.01, np.random.default_rng(3))
    assert np.array_equal(a.values(), b.values())


def test_add_noise_negative_frac(full_set, rng):
    with pytest.raises(ValueError):
        add_noise(full_set, -0.1, rng)


def test_sample_fad_counts(full_set, rng):
    half = sample_fad(full_set, 0.5, rng)
    assert len(half) == 83
    everything = sample_fad(full_set, 1.0, rng)
    assert len(everything) == 165
    assert everything.kinds == full_set.kinds


def test_sample_fad_keeps_refs_and_order(full_set, rng):
    sub = sample_fad(full_set, 0.3, rng)
    tags = [k.tag for k in sub.kinds]
    assert tags[0] == REF_VOLT_RE
    assert tags[1] == REF_VOLT_IM
    # order follows the full inventory
    positions = [full_set.find(k) for k in sub.kinds]
    assert positions == sorted(positions)


def test_sample_fad_explicit_count(full_set, rng):
    sub = sample_fad(full_set, 0.5, rng, count=10)
    assert len(sub) == 10


def test_sample_fad_rejects_bad_fractions(full_set, rng):
    with pytest.raises(InvalidFadError):
        sample_fad(full_set, 0.0, rng)
    with pytest.raises(InvalidFadError):
        sample_fad(full_set, 1.2, rng)
    with pytest.raises(InvalidFadError):
        sample_fad(full_set, 0.5, rng, count=1)
    with pytest.raises(InvalidFadError):
        sample_fad(full_set, 0.5, rng, count=166)


def test_inject_bad_scaled(full_set, rng):
    noisy = add_noise(full_set, 0.01, rng)
    kind = MeasurementKind(P_INJ, 17)
    bad = inject_bad_scaled(noisy, kind, 2.0)
    pos = bad.find(kind)
    m = bad.measurements[pos]
    assert m.value == 2.0 * m.truth
    assert m.is_bad
    assert m.sigma == noisy.measurements[pos].sigma
    # everything else untouched
    others = [i for i in range(len(bad)) if i != pos]
    assert all(bad.measurements[i] == noisy.measurements[i] for i in others)


def test_inject_bad_random_count_and_flags(full_set, rng):
    noisy = add_noise(full_set, 0.01, np.random.default_rng(1))
    bad = inject_bad_random(noisy, 0.1, rng)
    flagged = [m for m in bad if m.is_bad]
    assert len(flagged) == round_half_up(0.1 * 165)
    assert all(m.kind.tag not in (REF_VOLT_RE, REF_VOLT_IM) for m in flagged)
    # sigmas are never updated to reflect the corruption
    assert np.array_equal(bad.sigmas(), noisy.sigmas())


def test_inject_bad_random_zero_pct(full_set, rng):
    assert inject_bad_random(full_set, 0.0, rng) is full_set


def test_inject_bad_random_rejects_out_of_range(full_set, rng):
    with pytest.raises(ValueError):
        inject_bad_random(full_set, -0.1, rng)
    with pytest.raises(ValueError):
        inject_bad_random(full_set, 1.1, rng)


def test_full_set_observability(net, truth, full_set):
    report = observability(full_set, net, truth.v)
    assert report.rank == 66
    assert report.unobservable == 0
    # 165 measurements over 2n = 66 states
    assert report.redundancy == 2.5


def test_refs_only_rank(net, truth, full_set, rng):
    refs = sample_fad(full_set, 0.5, rng, count=2)
    report = observability(refs, net, truth.v)
    assert report.rank == 2
    assert report.unobservable == 64


def test_numerical_rank_edge_cases():
    assert numerical_rank(np.zeros((0, 4))) == 0
    assert numerical_rank(np.zeros((3, 4))) == 0
    assert numerical_rank(np.eye(3)) == 3


def test_full_set_has_no_critical_measurements(net, truth, full_set):
    assert critical_measurements(full_set, net, truth.v) == []


def test_critical_set_stable_after_one_drop(net, truth, full_set):
    kinds = [k for k in full_set.kinds if k != MeasurementKind(VMAG, 5)]
    sub = MeasurementSet(
        measurements=tuple(m for m in full_set if m.kind in set(kinds)),
        network_name=full_set.network_name,
    )
    assert critical_measurements(sub, net, truth.v) == []


def test_minimal_set_criticality(net, truth, full_set):
    # refs + all injections is exactly observable: every member is critical
    keep = {MeasurementKind(REF_VOLT_RE, 0), MeasurementKind(REF_VOLT_IM, 0)}
    keep |= {MeasurementKind(P_INJ, i) for i in range(1, 33)}
    keep |= {MeasurementKind(Q_INJ, i) for i in range(1, 33)}
    sub = MeasurementSet(
        measurements=tuple(m for m in full_set if m.kind in keep),
        network_name=full_set.network_name,
    )
    report = observability(sub, net, truth.v)
    assert report.rank == 66
    criticals = critical_measurements(sub, net, truth.v)
    assert len(criticals) == 66


def test_json_round_trip(full_set, rng):
    noisy = add_noise(full_set, 0.01, rng)
    bad = inject_bad_scaled(noisy, MeasurementKind(P_INJ, 17), 2.0)
    text = measurements_to_json(bad, audit=True)
    again = measurements_from_json(text, network_name=bad.network_name)
    assert again.kinds == bad.kinds
    assert np.array_equal(again.values(), bad.values())
    assert np.array_equal(again.sigmas(), bad.sigmas())
    assert np.array_equal(again.truths(), bad.truths())
    assert [m.is_bad for m in again] == [m.is_bad for m in bad]


def test_json_without_audit_hides_truth(full_set, rng):
    noisy = add_noise(full_set, 0.01, rng)
    text = measurements_to_json(noisy)
    assert "truth" not in text
    again = measurements_from_json(text)
    # truth defaults to the reported value when not serialized
    assert np.array_equal(again.truths(), noisy.values())
