"""Measurement lab: build, corrupt, thin, and analyze measurement sets.

The full inventory for an n-bus, m-branch feeder holds 2 + n + 2n + 2m
measurements in a fixed order: the two reference-phasor components,
then Vmag per bus, Pinj per bus, Qinj per bus, IlineRe per branch and
IlineIm per branch. Every randomized operation here is a pure function
of its inputs and the supplied generator, so a seed pins the result
bitwise.
"""

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidFadError, MeasurementNotFoundError
from .measurement_model import (
    I_LINE_IM,
    I_LINE_RE,
    P_INJ,
    Q_INJ,
    REF_VOLT_IM,
    REF_VOLT_RE,
    VMAG,
    MeasurementKind,
    measurement_jacobian,
    state_from_voltage,
)
from .network import build_ybus
from .powerflow import branch_currents, injected_power

# weights for near-zero truth values must stay finite, so claimed sigmas
# are floored at this per-unit value
SIGMA_FLOOR = 1e-4

# singular values below this fraction of the largest count as zero
RANK_RTOL = 1e-8


def round_half_up(x):
    """Round with ties away from the floor: 82.5 -> 83.

    Ties are decided on the decimal value, so products like 0.7 * 165
    land on the intended half point (115.5 -> 116) even though the
    binary double sits a hair below it.
    """
    return int(math.floor(round(x, 9) + 0.5))


@dataclass(frozen=True)
class Measurement:
    """One meter reading.

    ``truth`` and ``is_bad`` are evaluation-side bookkeeping; the
    estimators only ever see ``kind``, ``value`` and ``sigma``.
    """

    kind: MeasurementKind
    value: float
    sigma: float
    truth: float
    is_bad: bool = False


@dataclass(frozen=True)
class MeasurementSet:
    """Ordered collection of measurements over one network."""

    measurements: tuple
    network_name: str = ""

    def __post_init__(self):
        kinds = [m.kind for m in self.measurements]
        if len(set(kinds)) != len(kinds):
            seen, dup = set(), None
            for kind in kinds:
                if kind in seen:
                    dup = kind
                    break
                seen.add(kind)
            raise ValueError(f"duplicate measurement kind {dup}")

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    @property
    def kinds(self):
        return [m.kind for m in self.measurements]

    def values(self):
        return np.array([m.value for m in self.measurements])

    def sigmas(self):
        return np.array([m.sigma for m in self.measurements])

    def truths(self):
        return np.array([m.truth for m in self.measurements])

    def find(self, kind):
        for pos, m in enumerate(self.measurements):
            if m.kind == kind:
                return pos
        raise MeasurementNotFoundError(f"measurement {kind.tag}({kind.index}) not in set")


def _ref_positions(mset):
    return [
        pos
        for pos, m in enumerate(mset.measurements)
        if m.kind.tag in (REF_VOLT_RE, REF_VOLT_IM)
    ]


def full_measurement_set(v, network):
    """Noiseless full inventory for a solved voltage profile ``v``.

    Values equal truth and sigma is a 0 placeholder until
    :func:`add_noise` assigns claimed accuracies.
    """
    ybus = build_ybus(network)
    v = np.asarray(v, dtype=complex)
    s = injected_power(ybus, v)
    i_line = branch_currents(network, v)
    slack = network.slack

    entries = [
        (MeasurementKind(REF_VOLT_RE, slack), v[slack].real),
        (MeasurementKind(REF_VOLT_IM, slack), v[slack].imag),
    ]
    entries += [(MeasurementKind(VMAG, i), abs(v[i])) for i in range(network.n_bus)]
    entries += [(MeasurementKind(P_INJ, i), s[i].real) for i in range(network.n_bus)]
    entries += [(MeasurementKind(Q_INJ, i), s[i].imag) for i in range(network.n_bus)]
    entries += [(MeasurementKind(I_LINE_RE, k), i_line[k].real) for k in range(network.n_branch)]
    entries += [(MeasurementKind(I_LINE_IM, k), i_line[k].imag) for k in range(network.n_branch)]

    return MeasurementSet(
        measurements=tuple(
            Measurement(kind=kind, value=float(val), sigma=0.0, truth=float(val))
            for kind, val in entries
        ),
        network_name=network.name,
    )


def add_noise(mset, sigma_frac, rng):
    """Perturb values with zero-mean Gaussian noise.

    Each measurement gets sigma = max(sigma_frac * |truth|, SIGMA_FLOOR)
    as both its noise scale and its claimed accuracy. sigma_frac = 0
    yields exact truth values with floor sigmas, which is the noiseless
    configuration used by exactness checks.
    """
    if sigma_frac < 0:
        raise ValueError(f"sigma_frac must be >= 0, got {sigma_frac}")
    truths = mset.truths()
    sigmas = np.maximum(sigma_frac * np.abs(truths), SIGMA_FLOOR)
    if sigma_frac == 0:
        values = truths
    else:
        values = truths + sigmas * rng.standard_normal(len(mset))
    return MeasurementSet(
        measurements=tuple(
            replace(m, value=float(val), sigma=float(sig))
            for m, val, sig in zip(mset.measurements, values, sigmas)
        ),
        network_name=mset.network_name,
    )


def sample_fad(mset, fad, rng, count=None):
    """Thin a full set to a fraction of the available data.

    Keeps the two reference-phasor measurements unconditionally, then a
    uniform random subset of the rest so the total is round_half_up(
    fad * len(mset)), or exactly ``count`` when given. Inventory order
    is preserved.

    Raises:
        InvalidFadError: fad outside (0, 1] or a target below 2 / above
            the set size.
    """
    total = len(mset)
    if not 0.0 < fad <= 1.0:
        raise InvalidFadError(f"fad must be in (0, 1], got {fad}")
    target = round_half_up(fad * total) if count is None else count
    if target < 2:
        raise InvalidFadError(f"target count {target} cannot cover the reference phasor")
    if target > total:
        raise InvalidFadError(f"target count {target} exceeds set size {total}")

    keep = set(_ref_positions(mset))
    pool = [pos for pos in range(total) if pos not in keep]
    extra = target - len(keep)
    if extra < 0:
        raise InvalidFadError(f"target count {target} cannot cover the reference phasor")
    if extra:
        chosen = rng.choice(len(pool), size=extra, replace=False)
        keep.update(pool[c] for c in chosen)
    return MeasurementSet(
        measurements=tuple(mset.measurements[pos] for pos in sorted(keep)),
        network_name=mset.network_name,
    )


def inject_bad_scaled(mset, kind, factor):
    """Replace one measurement's value by ``factor * truth`` and flag it.

    The claimed sigma is left untouched: the estimator is not told.

    Raises:
        MeasurementNotFoundError: ``kind`` absent from the set.
    """
    pos = mset.find(kind)
    out = list(mset.measurements)
    m = out[pos]
    out[pos] = replace(m, value=float(factor * m.truth), is_bad=True)
    return MeasurementSet(measurements=tuple(out), network_name=mset.network_name)


def inject_bad_random(mset, pct, rng, include_ref=False):
    """Corrupt a random fraction of the set with gross errors.

    round_half_up(pct * len(mset)) distinct measurements are redrawn as
    truth + N(0, |truth|), i.e. noise with a standard deviation of 100%
    of the actual value, and flagged bad. Claimed sigmas are unchanged.
    Reference-phasor measurements are spared unless ``include_ref``.
    """
    if not 0.0 <= pct <= 1.0:
        raise ValueError(f"pct must be in [0, 1], got {pct}")
    count = round_half_up(pct * len(mset))
    if count == 0:
        return mset
    refs = set(_ref_positions(mset))
    eligible = [
        pos for pos in range(len(mset)) if include_ref or pos not in refs
    ]
    if count > len(eligible):
        raise ValueError(
            f"cannot corrupt {count} of {len(eligible)} eligible measurements"
        )
    chosen = sorted(rng.choice(len(eligible), size=count, replace=False).tolist())
    noise = rng.standard_normal(count)
    out = list(mset.measurements)
    for draw, c in zip(noise, chosen):
        pos = eligible[c]
        m = out[pos]
        out[pos] = replace(m, value=float(m.truth + draw * abs(m.truth)), is_bad=True)
    return MeasurementSet(measurements=tuple(out), network_name=mset.network_name)


# ---------------------------------------------------------------------------
# observability analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservabilityReport:
    """Numerical observability of a measurement set.

    Attributes:
        rank: numerical rank of the measurement Jacobian.
        unobservable: 2n - rank, the dimension of the unseen state space.
        redundancy: measurement count over state count, |set| / 2n.
    """

    rank: int
    unobservable: int
    redundancy: float


def numerical_rank(matrix):
    """SVD rank with singular values below RANK_RTOL * sigma_max as zero."""
    if matrix.size == 0:
        return 0
    svals = np.linalg.svd(matrix, compute_uv=False)
    if svals[0] == 0.0:
        return 0
    return int(np.count_nonzero(svals > RANK_RTOL * svals[0]))


def observability(mset, network, v):
    """Rank analysis of the measurement Jacobian at voltage profile ``v``."""
    jac = measurement_jacobian(network, mset.kinds, state_from_voltage(v))
    rank = numerical_rank(jac)
    n_states = 2 * network.n_bus
    return ObservabilityReport(
        rank=rank,
        unobservable=n_states - rank,
        redundancy=len(mset) / n_states,
    )


def critical_measurements(mset, network, v):
    """Kinds whose removal lowers the Jacobian's numerical rank."""
    jac = measurement_jacobian(network, mset.kinds, state_from_voltage(v))
    base = numerical_rank(jac)
    rows = np.arange(jac.shape[0])
    critical = []
    for pos, m in enumerate(mset.measurements):
        if numerical_rank(jac[rows != pos]) < base:
            critical.append(m.kind)
    return critical


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def measurements_to_json(mset, audit=False, indent=2):
    """Serialize to JSON; ground truth and bad flags only under audit."""
    rows = []
    for m in mset.measurements:
        row = {
            "kind": m.kind.tag,
            "branch" if m.kind.on_branch else "bus": m.kind.index,
            "value": m.value,
            "sigma": m.sigma,
        }
        if audit:
            row["truth"] = m.truth
            row["is_bad"] = m.is_bad
        rows.append(row)
    return json.dumps(rows, indent=indent)


def measurements_from_json(text, network_name=""):
    """Parse the serialization produced by :func:`measurements_to_json`."""
    rows = json.loads(text)
    measurements = []
    for row in rows:
        index = row["branch"] if "branch" in row else row["bus"]
        measurements.append(
            Measurement(
                kind=MeasurementKind(row["kind"], int(index)),
                value=float(row["value"]),
                sigma=float(row["sigma"]),
                truth=float(row.get("truth", row["value"])),
                is_bad=bool(row.get("is_bad", False)),
            )
        )
    return MeasurementSet(measurements=tuple(measurements), network_name=network_name)
