"""Monte Carlo experiment harness: metrics, sweeps, and reports.

Every experiment is a pure function of (config, master seed). Per-trial
generators are seeded with a splitmix64-based derivation

    seed(stream, grid, trial) = mix(mix(mix(mix(master) ^ stream) ^ grid) ^ trial)

where ``mix`` is the splitmix64 finalizer and the streams separate
measurement noise, FAD subset choice, and bad-data placement. The
bad-data sweep derives its noise/subset seeds with grid index 0, so a
trial keeps one measurement draw across all bad-data percentages and
only the corruption varies.

Reports carry raw per-trial rows plus summary rows recomputable from
them; CSV columns are fixed (see ``SWEEP_COLUMNS``) and numbers are
written with 9 significant digits, making repeated runs byte-identical.
"""

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import MeasurementNotFoundError, NonConvergenceError, UnobservableError
from .estimators import RmcseWeights, mcse, rmcse, wls, wls_lnr
from .measurement_model import P_INJ, REF_VOLT_IM, REF_VOLT_RE, MeasurementKind
from .measurements import (
    MeasurementSet,
    add_noise,
    full_measurement_set,
    inject_bad_random,
    inject_bad_scaled,
    observability,
    sample_fad,
)
from .powerflow import build_linear_model, solve_ac

STREAM_NOISE = 1
STREAM_FAD = 2
STREAM_BAD = 3

METHODS = ("wls", "wls_lnr", "mcse", "rmcse")

# true angles smaller than this (degrees) are excluded from angle MAPE:
# the percentage error of a zero is undefined
ANGLE_FLOOR_DEG = 1e-9

_MASK64 = (1 << 64) - 1


def _splitmix64(z):
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(master, stream, grid, trial):
    """64-bit seed for one (stream, grid point, trial) cell."""
    h = _splitmix64(master & _MASK64)
    for part in (stream, grid, trial):
        h = _splitmix64(h ^ (part & _MASK64))
    return h


@dataclass(frozen=True)
class MapeReport:
    """Voltage estimation error metrics.

    ``ang_excluded`` counts non-slack buses whose true angle is below
    ``ANGLE_FLOOR_DEG`` and therefore dropped from the angle mean.
    """

    mag_pct: float
    ang_pct: float
    ang_excluded: int


def mape(result, v_truth, slack):
    """Mean absolute percentage error of magnitudes and angles.

    Magnitudes average over all buses using the estimator's reported
    magnitude. Angles average over non-slack buses, in degrees,
    excluding buses whose true angle is numerically zero.
    """
    v_truth = np.asarray(v_truth, dtype=complex)
    mag_true = np.abs(v_truth)
    mag_pct = 100.0 * float(np.mean(np.abs((result.vmag - mag_true) / mag_true)))

    ang_true = np.degrees(np.angle(v_truth))
    keep = np.ones(v_truth.size, dtype=bool)
    keep[slack] = False
    tiny = np.abs(ang_true) < ANGLE_FLOOR_DEG
    excluded = int(np.count_nonzero(keep & tiny))
    keep &= ~tiny
    if np.any(keep):
        ang_pct = 100.0 * float(
            np.mean(np.abs((result.angle_deg[keep] - ang_true[keep]) / ang_true[keep]))
        )
    else:
        ang_pct = float("nan")
    return MapeReport(mag_pct=mag_pct, ang_pct=ang_pct, ang_excluded=excluded)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs; a (config, network) pair pins the output."""

    fad_grid: tuple = (0.7,)
    bad_pct_grid: tuple = (0.0,)
    trials: int = 30
    seed: int = 42
    methods: tuple = ("rmcse",)
    weights: RmcseWeights = field(default_factory=RmcseWeights)
    sigma_frac: float = 0.01
    measurement_count: int = None
    lnr_threshold: float = 3.0
    delta: float = None
    bad_bus: int = 17
    bad_factor: float = 2.0
    case_label: str = ""

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        for fad in self.fad_grid:
            if not 0.0 < fad <= 1.0:
                raise ValueError(f"fad grid values must be in (0, 1], got {fad}")
        for pct in self.bad_pct_grid:
            if not 0.0 <= pct <= 1.0:
                raise ValueError(f"bad-pct grid values must be in [0, 1], got {pct}")
        for method in self.methods:
            if method not in METHODS:
                raise ValueError(f"unknown method '{method}' (choose from {METHODS})")
        if self.sigma_frac < 0:
            raise ValueError("sigma_frac must be >= 0")

    def to_dict(self):
        return {
            "case": self.case_label,
            "fad_grid": list(self.fad_grid),
            "bad_pct_grid": list(self.bad_pct_grid),
            "trials": self.trials,
            "seed": self.seed,
            "methods": list(self.methods),
            "weights": [self.weights.w1, self.weights.w2, self.weights.w3, self.weights.w4],
            "sigma_frac": self.sigma_frac,
            "measurement_count": self.measurement_count,
            "lnr_threshold": self.lnr_threshold,
            "delta": self.delta,
            "bad_bus": self.bad_bus,
            "bad_factor": self.bad_factor,
        }


# ---------------------------------------------------------------------------
# report rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    sweep: str
    grid: float
    method: str
    trial: int
    status: str  # ok | numerical_limit | unobservable | non_convergence | infeasible | unbounded
    mag_mape_pct: float
    ang_mape_pct: float
    ang_excluded: int
    rank: int
    unobservable: int
    removed: int
    iterations: int

    @property
    def has_metrics(self):
        return self.status in ("ok", "numerical_limit")


@dataclass(frozen=True)
class SummaryRecord:
    sweep: str
    grid: float
    method: str
    n_trials: int
    n_ok: int
    n_unobservable: int
    n_infeasible: int
    n_non_convergence: int
    n_numerical_limit: int
    mean_mag_mape_pct: float
    min_mag_mape_pct: float
    max_mag_mape_pct: float
    mean_ang_mape_pct: float
    min_ang_mape_pct: float
    max_ang_mape_pct: float
    mean_rank: float
    mean_unobservable: float


def summarize(records):
    """Aggregate trial records into one SummaryRecord per (grid, method).

    Mean/min/max MAPE run over rows that carry metrics; failure rows
    contribute only to the failure counters. Rank statistics cover all
    rows (they describe the sampled set, not the estimator).
    """
    cells = {}
    for rec in records:
        cells.setdefault((rec.sweep, rec.grid, rec.method), []).append(rec)
    out = []
    for (sweep, grid, method), rows in sorted(cells.items()):
        metric = [r for r in rows if r.has_metrics]
        mags = [r.mag_mape_pct for r in metric]
        angs = [r.ang_mape_pct for r in metric]
        out.append(
            SummaryRecord(
                sweep=sweep,
                grid=grid,
                method=method,
                n_trials=len(rows),
                n_ok=sum(1 for r in rows if r.status == "ok"),
                n_unobservable=sum(1 for r in rows if r.status == "unobservable"),
                n_infeasible=sum(1 for r in rows if r.status == "infeasible"),
                n_non_convergence=sum(1 for r in rows if r.status == "non_convergence"),
                n_numerical_limit=sum(1 for r in rows if r.status == "numerical_limit"),
                mean_mag_mape_pct=float(np.mean(mags)) if mags else float("nan"),
                min_mag_mape_pct=float(np.min(mags)) if mags else float("nan"),
                max_mag_mape_pct=float(np.max(mags)) if mags else float("nan"),
                mean_ang_mape_pct=float(np.mean(angs)) if angs else float("nan"),
                min_ang_mape_pct=float(np.min(angs)) if angs else float("nan"),
                max_ang_mape_pct=float(np.max(angs)) if angs else float("nan"),
                mean_rank=float(np.mean([r.rank for r in rows])),
                mean_unobservable=float(np.mean([r.unobservable for r in rows])),
            )
        )
    return out


SWEEP_COLUMNS = (
    "row_type,sweep,grid,method,trial,status,"
    "mag_mape_pct,ang_mape_pct,ang_excluded,rank,unobservable,removed,iterations,"
    "n_trials,n_ok,n_unobservable,n_infeasible,n_non_convergence,n_numerical_limit,"
    "mean_mag_mape_pct,min_mag_mape_pct,max_mag_mape_pct,"
    "mean_ang_mape_pct,min_ang_mape_pct,max_ang_mape_pct,mean_rank,mean_unobservable"
)


def fmt_num(x):
    """9-significant-digit text form; NaN/None become empty."""
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def round_sig(x):
    """Float at the reporting resolution (9 significant digits)."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return float(f"{float(x):.9g}")


@dataclass(frozen=True)
class SweepReport:
    """Raw trial rows plus per-cell summaries and the config echo."""

    sweep: str
    config: ExperimentConfig
    records: tuple

    @property
    def summaries(self):
        return summarize(self.records)

    def to_csv(self):
        out = io.StringIO()
        out.write(SWEEP_COLUMNS + "\n")
        n_pad = SWEEP_COLUMNS.count(",") + 1
        for r in sorted(self.records, key=lambda r: (r.grid, r.method, r.trial)):
            cols = [
                "trial", r.sweep, fmt_num(float(r.grid)), r.method, str(r.trial),
                r.status, fmt_num(r.mag_mape_pct), fmt_num(r.ang_mape_pct),
                str(r.ang_excluded), str(r.rank), str(r.unobservable),
                str(r.removed), str(r.iterations),
            ]
            out.write(",".join(cols + [""] * (n_pad - len(cols))) + "\n")
        for s in self.summaries:
            cols = [
                "summary", s.sweep, fmt_num(float(s.grid)), s.method,
                "", "", "", "", "", "", "", "", "",
                str(s.n_trials), str(s.n_ok), str(s.n_unobservable),
                str(s.n_infeasible), str(s.n_non_convergence), str(s.n_numerical_limit),
                fmt_num(s.mean_mag_mape_pct), fmt_num(s.min_mag_mape_pct),
                fmt_num(s.max_mag_mape_pct), fmt_num(s.mean_ang_mape_pct),
                fmt_num(s.min_ang_mape_pct), fmt_num(s.max_ang_mape_pct),
                fmt_num(s.mean_rank), fmt_num(s.mean_unobservable),
            ]
            out.write(",".join(cols) + "\n")
        return out.getvalue()

    def to_json(self):
        doc = {
            "version": __version__,
            "sweep": self.sweep,
            "config": self.config.to_dict(),
            "trials": [
                {
                    "sweep": r.sweep,
                    "grid": round_sig(float(r.grid)),
                    "method": r.method,
                    "trial": r.trial,
                    "status": r.status,
                    "mag_mape_pct": round_sig(r.mag_mape_pct),
                    "ang_mape_pct": round_sig(r.ang_mape_pct),
                    "ang_excluded": r.ang_excluded,
                    "rank": r.rank,
                    "unobservable": r.unobservable,
                    "removed": r.removed,
                    "iterations": r.iterations,
                }
                for r in sorted(self.records, key=lambda r: (r.grid, r.method, r.trial))
            ],
            "summaries": [
                {
                    "sweep": s.sweep,
                    "grid": round_sig(float(s.grid)),
                    "method": s.method,
                    "n_trials": s.n_trials,
                    "n_ok": s.n_ok,
                    "n_unobservable": s.n_unobservable,
                    "n_infeasible": s.n_infeasible,
                    "n_non_convergence": s.n_non_convergence,
                    "n_numerical_limit": s.n_numerical_limit,
                    "mean_mag_mape_pct": round_sig(s.mean_mag_mape_pct),
                    "min_mag_mape_pct": round_sig(s.min_mag_mape_pct),
                    "max_mag_mape_pct": round_sig(s.max_mag_mape_pct),
                    "mean_ang_mape_pct": round_sig(s.mean_ang_mape_pct),
                    "min_ang_mape_pct": round_sig(s.min_ang_mape_pct),
                    "max_ang_mape_pct": round_sig(s.max_ang_mape_pct),
                    "mean_rank": round_sig(s.mean_rank),
                    "mean_unobservable": round_sig(s.mean_unobservable),
                }
                for s in self.summaries
            ],
        }
        return json.dumps(doc, indent=2)


# ---------------------------------------------------------------------------
# sweep drivers
# ---------------------------------------------------------------------------

def run_method(method, mset, network, config, linmodel):
    if method == "wls":
        return wls(mset, network)
    if method == "wls_lnr":
        return wls_lnr(mset, network, threshold=config.lnr_threshold)
    if method == "mcse":
        return mcse(
            mset, network, delta=config.delta, weights=config.weights, linmodel=linmodel
        )
    return rmcse(mset, network, weights=config.weights, linmodel=linmodel)


def _trial_record(sweep, grid, method, trial, mset, network, config, linmodel,
                  v_truth, obs):
    try:
        result = run_method(method, mset, network, config, linmodel)
    except UnobservableError:
        return TrialRecord(
            sweep=sweep, grid=grid, method=method, trial=trial,
            status="unobservable", mag_mape_pct=float("nan"),
            ang_mape_pct=float("nan"), ang_excluded=0,
            rank=obs.rank, unobservable=obs.unobservable, removed=0, iterations=0,
        )
    except NonConvergenceError:
        return TrialRecord(
            sweep=sweep, grid=grid, method=method, trial=trial,
            status="non_convergence", mag_mape_pct=float("nan"),
            ang_mape_pct=float("nan"), ang_excluded=0,
            rank=obs.rank, unobservable=obs.unobservable, removed=0, iterations=0,
        )
    if result.solver_status in ("infeasible", "unbounded"):
        return TrialRecord(
            sweep=sweep, grid=grid, method=method, trial=trial,
            status=result.solver_status, mag_mape_pct=float("nan"),
            ang_mape_pct=float("nan"), ang_excluded=0,
            rank=obs.rank, unobservable=obs.unobservable, removed=0,
            iterations=result.iterations,
        )
    err = mape(result, v_truth, network.slack)
    status = "numerical_limit" if result.solver_status == "numerical_limit" else "ok"
    return TrialRecord(
        sweep=sweep, grid=grid, method=method, trial=trial, status=status,
        mag_mape_pct=err.mag_pct, ang_mape_pct=err.ang_pct,
        ang_excluded=err.ang_excluded, rank=obs.rank,
        unobservable=obs.unobservable,
        removed=len(result.removed_measurements), iterations=result.iterations,
    )


def draw_measurements(network, v_truth, config, fad, noise_seed, fad_seed):
    full = full_measurement_set(v_truth, network)
    noisy = add_noise(full, config.sigma_frac, np.random.default_rng(noise_seed))
    return sample_fad(
        noisy, fad, np.random.default_rng(fad_seed), count=config.measurement_count
    )


def run_fad_sweep(config, network):
    """MAPE of each method across the FAD grid, config.trials trials each."""
    truth = solve_ac(network)
    linmodel = build_linear_model(network)
    records = []
    for g, fad in enumerate(config.fad_grid):
        for trial in range(config.trials):
            sampled = draw_measurements(
                network, truth.v, config, fad,
                derive_seed(config.seed, STREAM_NOISE, g, trial),
                derive_seed(config.seed, STREAM_FAD, g, trial),
            )
            obs = observability(sampled, network, truth.v)
            for method in config.methods:
                records.append(
                    _trial_record(
                        "fad", fad, method, trial, sampled, network, config,
                        linmodel, truth.v, obs,
                    )
                )
    return SweepReport(sweep="fad", config=config, records=tuple(records))


def run_bad_sweep(config, network):
    """MAPE across the bad-data percentage grid at one FAD level.

    Within a trial the measurement draw (noise and FAD subset) is fixed
    across percentages; only the corruption placement varies with the
    grid. Uses the first entry of ``config.fad_grid``.
    """
    fad = config.fad_grid[0]
    truth = solve_ac(network)
    linmodel = build_linear_model(network)
    records = []
    for trial in range(config.trials):
        sampled = draw_measurements(
            network, truth.v, config, fad,
            derive_seed(config.seed, STREAM_NOISE, 0, trial),
            derive_seed(config.seed, STREAM_FAD, 0, trial),
        )
        obs = observability(sampled, network, truth.v)
        for g, pct in enumerate(config.bad_pct_grid):
            corrupted = inject_bad_random(
                sampled, pct, np.random.default_rng(derive_seed(config.seed, STREAM_BAD, g, trial))
            )
            for method in config.methods:
                records.append(
                    _trial_record(
                        "baddata", pct, method, trial, corrupted, network, config,
                        linmodel, truth.v, obs,
                    )
                )
    return SweepReport(sweep="baddata", config=config, records=tuple(records))


# ---------------------------------------------------------------------------
# single bad datum study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodPair:
    """One method's clean-vs-corrupted outcome in the single-bad study."""

    method: str
    status_clean: str
    status_bad: str
    mape_clean: MapeReport
    mape_bad: MapeReport
    vmag_clean: np.ndarray
    vmag_bad: np.ndarray
    angle_clean: np.ndarray
    angle_bad: np.ndarray


@dataclass(frozen=True)
class SingleBadReport:
    config: ExperimentConfig
    fad: float
    bad_kind_tag: str
    bad_index: int
    factor: float
    pairs: tuple

    def to_csv(self):
        out = io.StringIO()
        out.write(
            "row_type,method,bus,clean_vmag,bad_vmag,delta_vmag,"
            "clean_angle_deg,bad_angle_deg,delta_angle_deg,"
            "status_clean,status_bad,"
            "clean_mag_mape_pct,bad_mag_mape_pct,clean_ang_mape_pct,bad_ang_mape_pct\n"
        )
        for pair in self.pairs:
            out.write(
                ",".join(
                    [
                        "mape", pair.method, "", "", "", "", "", "", "",
                        pair.status_clean, pair.status_bad,
                        fmt_num(pair.mape_clean.mag_pct if pair.mape_clean else None),
                        fmt_num(pair.mape_bad.mag_pct if pair.mape_bad else None),
                        fmt_num(pair.mape_clean.ang_pct if pair.mape_clean else None),
                        fmt_num(pair.mape_bad.ang_pct if pair.mape_bad else None),
                    ]
                )
                + "\n"
            )
            if pair.vmag_clean is None or pair.vmag_bad is None:
                continue
            for bus in range(pair.vmag_clean.size):
                out.write(
                    ",".join(
                        [
                            "bus", pair.method, str(bus),
                            fmt_num(float(pair.vmag_clean[bus])),
                            fmt_num(float(pair.vmag_bad[bus])),
                            fmt_num(float(pair.vmag_bad[bus] - pair.vmag_clean[bus])),
                            fmt_num(float(pair.angle_clean[bus])),
                            fmt_num(float(pair.angle_bad[bus])),
                            fmt_num(float(pair.angle_bad[bus] - pair.angle_clean[bus])),
                            "", "", "", "", "", "",
                        ]
                    )
                    + "\n"
                )
        return out.getvalue()

    def to_json(self):
        doc = {
            "version": __version__,
            "sweep": "single-bad",
            "config": self.config.to_dict(),
            "fad": round_sig(self.fad),
            "bad_measurement": {"kind": self.bad_kind_tag, "bus": self.bad_index},
            "factor": round_sig(self.factor),
            "methods": [],
        }
        for pair in self.pairs:
            entry = {
                "method": pair.method,
                "status_clean": pair.status_clean,
                "status_bad": pair.status_bad,
                "mape_clean": None,
                "mape_bad": None,
                "buses": [],
            }
            if pair.mape_clean is not None:
                entry["mape_clean"] = {
                    "mag_pct": round_sig(pair.mape_clean.mag_pct),
                    "ang_pct": round_sig(pair.mape_clean.ang_pct),
                }
            if pair.mape_bad is not None:
                entry["mape_bad"] = {
                    "mag_pct": round_sig(pair.mape_bad.mag_pct),
                    "ang_pct": round_sig(pair.mape_bad.ang_pct),
                }
            if pair.vmag_clean is not None and pair.vmag_bad is not None:
                entry["buses"] = [
                    {
                        "bus": bus,
                        "delta_vmag": round_sig(float(pair.vmag_bad[bus] - pair.vmag_clean[bus])),
                        "delta_angle_deg": round_sig(
                            float(pair.angle_bad[bus] - pair.angle_clean[bus])
                        ),
                    }
                    for bus in range(pair.vmag_clean.size)
                ]
            doc["methods"].append(entry)
        return json.dumps(doc, indent=2)


def _force_include(sampled, full, kind):
    """Ensure ``kind`` is in the sampled set, swapping out the last
    non-reference measurement if needed (count preserved)."""
    try:
        sampled.find(kind)
        return sampled
    except MeasurementNotFoundError:
        pass
    target = full.measurements[full.find(kind)]
    keep = list(sampled.measurements)
    for pos in range(len(keep) - 1, -1, -1):
        if keep[pos].kind.tag not in (REF_VOLT_RE, REF_VOLT_IM):
            keep.pop(pos)
            break
    keep.append(target)
    keep.sort(key=lambda m: full.find(m.kind))
    return MeasurementSet(tuple(keep), network_name=sampled.network_name)


def run_single_bad(config, network):
    """Clean-vs-single-bad-datum comparison at one FAD draw.

    One measurement draw at the first FAD grid value (the target
    injection measurement is force-included), then every configured
    method runs twice: on the clean set and with the active injection
    at ``config.bad_bus`` scaled by ``config.bad_factor``.
    """
    fad = config.fad_grid[0]
    truth = solve_ac(network)
    linmodel = build_linear_model(network)
    target_kind = MeasurementKind(P_INJ, config.bad_bus)

    full = full_measurement_set(truth.v, network)
    noisy = add_noise(
        full, config.sigma_frac,
        np.random.default_rng(derive_seed(config.seed, STREAM_NOISE, 0, 0)),
    )
    sampled = sample_fad(
        noisy, fad,
        np.random.default_rng(derive_seed(config.seed, STREAM_FAD, 0, 0)),
        count=config.measurement_count,
    )
    sampled = _force_include(sampled, noisy, target_kind)
    corrupted = inject_bad_scaled(sampled, target_kind, config.bad_factor)

    pairs = []
    for method in config.methods:
        outcomes = []
        for mset in (sampled, corrupted):
            try:
                result = run_method(method, mset, network, config, linmodel)
            except UnobservableError:
                outcomes.append(("unobservable", None))
                continue
            except NonConvergenceError:
                outcomes.append(("non_convergence", None))
                continue
            if result.solver_status in ("infeasible", "unbounded"):
                outcomes.append((result.solver_status, None))
            else:
                outcomes.append((result.solver_status, result))
        (st_clean, res_clean), (st_bad, res_bad) = outcomes
        pairs.append(
            MethodPair(
                method=method,
                status_clean=st_clean,
                status_bad=st_bad,
                mape_clean=mape(res_clean, truth.v, network.slack) if res_clean else None,
                mape_bad=mape(res_bad, truth.v, network.slack) if res_bad else None,
                vmag_clean=res_clean.vmag if res_clean else None,
                vmag_bad=res_bad.vmag if res_bad else None,
                angle_clean=res_clean.angle_deg if res_clean else None,
                angle_bad=res_bad.angle_deg if res_bad else None,
            )
        )
    return SingleBadReport(
        config=config,
        fad=fad,
        bad_kind_tag=P_INJ,
        bad_index=config.bad_bus,
        factor=config.bad_factor,
        pairs=tuple(pairs),
    )
