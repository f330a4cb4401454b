"""
Monte Carlo experiments: detection and symbol-error sweeps over the noise
variance and the number of extra slots, plus throughput measurements.

Each trial draws its scenario from ``(seed, trial index)`` only, so every
grid point sees the same transmitters and the same (scaled) noise draws.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .airsim import (
    DEFAULT_PREAMBLE,
    MODES,
    Scenario,
    TransmitterSpec,
    default_cap,
    derive_seed,
    keyed_rng,
    make_equally_spaced_assignment,
    random_packet,
    random_scenario,
    run_until,
    rank_profile,
    virtual_column_count,
    ROLE_SCENARIO,
)
from .decoder import DEFAULT_ALPHA, RankStop, TransmitterMatch, full_decode
from .errors import DomainError, NoConvergenceError, SteermacError

DEFAULT_SIGMA2_GRID = tuple(10.0**e for e in range(-6, 4))
DEFAULT_EXTRA_SLOTS = (1, 2, 3, 5)
CSV_HEADER = "snr_db,sigma2,extra_slots,mode,trials,mean_detected,mean_ser,mean_n_used"


@dataclass(frozen=True)
class SweepConfig:
    """Parameters of a detection / SER sweep.

    ``oracle_rank`` gives the receiver the true signal dimension (the noise
    singular values are known), isolating identification from rank
    detection. ``forced_ser`` computes SER with the true transmitter set.
    """

    M: int = 32
    K: int = 8
    P: int = 24
    sigma2_grid: tuple = DEFAULT_SIGMA2_GRID
    extra_slots_grid: tuple = DEFAULT_EXTRA_SLOTS
    trials: int = 1000
    mode: str = "aligned_t0"
    seed: int = 0
    oracle_rank: bool = True
    forced_ser: bool = True
    alpha: float = DEFAULT_ALPHA
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sigma2_grid", tuple(float(s) for s in self.sigma2_grid))
        object.__setattr__(self, "extra_slots_grid", tuple(int(c) for c in self.extra_slots_grid))
        if self.mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}")
        if any(s < 0 for s in self.sigma2_grid) or not self.sigma2_grid:
            raise DomainError("sigma2 grid must be non-empty and non-negative")
        if any(c < 1 for c in self.extra_slots_grid) or not self.extra_slots_grid:
            raise DomainError("extra slots must be >= 1")
        if self.trials < 1:
            raise DomainError("trials must be >= 1")
        if not 1 <= self.K <= self.M:
            raise DomainError("need 1 <= K <= M")
        headroom = 2 * self.K if self.mode in ("misaligned", "static_gain", "fading") else self.K
        if self.P <= headroom:
            raise DomainError(f"P={self.P} leaves no room for {headroom} steering columns")

    @property
    def grid(self):
        """Grid points in output order: noise variance outer, extra slots inner."""
        return [(s, c) for s in self.sigma2_grid for c in self.extra_slots_grid]


@dataclass(frozen=True)
class TrialStats:
    detected_correct: int
    ser: float
    N_used: int
    decode_ok: bool


@dataclass(frozen=True)
class PointResult:
    sigma2: float
    extra_slots: int
    mode: str
    trials: int
    mean_detected: float
    mean_ser: float
    mean_n_used: float
    se_detected: float

    @property
    def snr_db(self):
        return math.inf if self.sigma2 == 0 else 10.0 * math.log10(1.0 / self.sigma2)


@dataclass
class SweepResult:
    config: SweepConfig
    points: list = field(default_factory=list)

    def point(self, sigma2, extra_slots):
        for p in self.points:
            if p.sigma2 == sigma2 and p.extra_slots == extra_slots:
                return p
        raise KeyError((sigma2, extra_slots))

    def detected_table(self):
        """Mean detections as an array indexed ``[sigma2, extra_slots]``."""
        cfg = self.config
        return np.array([[self.point(s, c).mean_detected for c in cfg.extra_slots_grid] for s in cfg.sigma2_grid])


def trial_scenario(config, sigma2, index):
    return random_scenario(
        config.mode, M=config.M, K=config.K, P=config.P, sigma2=sigma2, seed=derive_seed(config.seed, index)
    )


def true_matches(scenario):
    return [
        TransmitterMatch(id=t.id, root=scenario.assignment.root(t.id), arrival_shift=t.arrival_slot - 1, misaligned=t.misaligned)
        for t in scenario.transmitters
    ]


def symbol_error_rate(scenario, recovered):
    """Fraction of transmitted symbols not reproduced after 8-bit rounding."""
    errors = 0
    total = 0
    for t in scenario.transmitters:
        s = t.packet_array().real
        total += s.size
        est = recovered.get(t.id)
        if est is None:
            errors += s.size
            continue
        hard = np.clip(np.rint(np.real(est)), 0, 255)
        errors += int(np.count_nonzero(hard != s))
    return errors / total if total else 0.0


def _decode(scenario, Y, rank, **kw):
    return full_decode(
        Y,
        scenario.sigma2,
        scenario.assignment,
        kw.pop("mode"),
        scenario.fading_table(Y.N),
        rank=rank,
        factor2=scenario.factor2_enabled,
        real_symbols=True,
        **kw,
    )


def run_trial(config: SweepConfig, sigma2, extra_slots, index) -> TrialStats:
    """One end-to-end trial at a grid point."""
    sc = trial_scenario(config, sigma2, index)
    rank_fn = rank_profile(sc) if config.oracle_rank else None
    stop = RankStop(sigma2, extra_slots, config.alpha, rank_fn=rank_fn, record=False)
    try:
        Y = run_until(sc, stop)
    except NoConvergenceError:
        return TrialStats(0, 1.0, default_cap(sc), False)
    rank = stop.decision.rank if config.oracle_rank else None
    truth = {t.id for t in sc.transmitters}
    ok = True
    recovered = {}
    try:
        res = _decode(sc, Y, rank, mode=config.mode)
        found = set(res.recovered)
        recovered = res.recovered
    except SteermacError as exc:
        ok = False
        found = {m.id for m in getattr(exc, "partial", None) or ()}
    detected = len(truth & found)
    if config.forced_ser:
        try:
            recovered = _decode(sc, Y, rank, mode=config.mode, matches=true_matches(sc)).recovered
        except SteermacError:
            recovered = {}
    elif not ok:
        recovered = {}
    return TrialStats(detected, symbol_error_rate(sc, recovered), Y.N, ok)


def _run_point(args):
    config, sigma2, extra = args
    return [run_trial(config, sigma2, extra, i) for i in range(config.trials)]


def _aggregate(config, sigma2, extra, stats):
    det = np.array([s.detected_correct for s in stats], dtype=float)
    ser = np.array([s.ser for s in stats], dtype=float)
    nused = np.array([s.N_used for s in stats], dtype=float)
    se = float(det.std(ddof=1) / math.sqrt(det.size)) if det.size > 1 else 0.0
    return PointResult(
        sigma2=sigma2,
        extra_slots=extra,
        mode=config.mode,
        trials=len(stats),
        mean_detected=float(det.sum() / det.size),
        mean_ser=float(ser.sum() / ser.size),
        mean_n_used=float(nused.sum() / nused.size),
        se_detected=se,
    )


def run_sweep(config: SweepConfig, workers=None) -> SweepResult:
    """Run every grid point; results do not depend on the worker count."""
    workers = config.workers if workers is None else workers
    tasks = [(config, s, c) for s, c in config.grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_point = list(pool.map(_run_point, tasks))
    else:
        per_point = [_run_point(t) for t in tasks]
    result = SweepResult(config)
    for (s, c), stats in zip(config.grid, per_point):
        result.points.append(_aggregate(config, s, c, stats))
    return result


# ---------------------------------------------------------------------------
# Throughput
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThroughputPoint:
    K: int
    columns: int
    N_used: int
    decode_ok: bool

    @property
    def ratio(self):
        return self.K / self.N_used if self.decode_ok else 0.0


def throughput_scenario(K, mode="aligned", sigma2=1e-8, extra_slots=2, seed=0, M=None):
    """All transmitters start in slot 1; every one misaligned in ``all_misaligned`` mode."""
    if mode not in ("aligned", "all_misaligned"):
        raise DomainError("throughput mode must be 'aligned' or 'all_misaligned'")
    M = max(32, K) if M is None else M
    assignment = make_equally_spaced_assignment(M)
    rng = keyed_rng(seed, ROLE_SCENARIO, K)
    columns = K if mode == "aligned" else 2 * K
    P = max(24, 2 * (columns + extra_slots))
    ids = rng.choice(M, size=K, replace=False)
    offsets = np.zeros(K, dtype=int)
    if mode == "all_misaligned":
        offsets = rng.choice(np.arange(1, P - len(DEFAULT_PREAMBLE)), size=K, replace=False)
    specs = [
        TransmitterSpec(int(k), tuple(random_packet(rng, P, DEFAULT_PREAMBLE)), 1, int(p))
        for k, p in zip(ids, offsets)
    ]
    return Scenario(
        assignment, tuple(specs), P, sigma2=sigma2, factor2_enabled=(mode == "all_misaligned"), seed=seed
    )


def measure_throughput(K_grid, mode="aligned", sigma2=1e-8, extra_slots=2, *, seed=0, oracle_rank=True, alpha=DEFAULT_ALPHA):
    """Slots consumed and decode success for each K; ratio ``K / N_used``.

    With ``oracle_rank`` the receiver stops on the true signal dimension;
    otherwise it thresholds singular values at ``alpha * sqrt(sigma2 * P)``.
    """
    out = []
    for K in K_grid:
        sc = throughput_scenario(K, mode, sigma2, extra_slots, seed)
        rank_fn = rank_profile(sc) if oracle_rank else None
        stop = RankStop(sigma2, extra_slots, alpha, rank_fn=rank_fn, record=False)
        try:
            Y = run_until(sc, stop)
        except NoConvergenceError as exc:
            out.append(ThroughputPoint(K, virtual_column_count(sc), exc.partial.N, False))
            continue
        ok = True
        try:
            res = _decode(sc, Y, stop.decision.rank if oracle_rank else None,
                          mode="aligned_t0" if mode == "aligned" else "misaligned")
            ok = symbol_error_rate(sc, res.recovered) == 0.0
        except SteermacError:
            ok = False
        out.append(ThroughputPoint(K, virtual_column_count(sc), Y.N, ok))
    return out


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _g(x):
    return format(float(x), ".6g")


def format_csv(result: SweepResult):
    lines = [CSV_HEADER]
    for p in result.points:
        lines.append(
            ",".join(
                [_g(p.snr_db), _g(p.sigma2), str(p.extra_slots), p.mode, str(p.trials),
                 _g(p.mean_detected), _g(p.mean_ser), _g(p.mean_n_used)]
            )
        )
    return "\n".join(lines) + "\n"


def write_csv(result: SweepResult, path):
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(result))


def format_summary(result: SweepResult):
    """Machine-readable ``key=value`` lines, one group per grid point."""
    cfg = result.config
    lines = [f"mode={cfg.mode}", f"M={cfg.M}", f"K={cfg.K}", f"P={cfg.P}", f"trials={cfg.trials}", f"seed={cfg.seed}"]
    for i, p in enumerate(result.points):
        lines.append(
            f"point.{i}=sigma2:{_g(p.sigma2)},extra_slots:{p.extra_slots},mean_detected:{_g(p.mean_detected)},"
            f"mean_ser:{_g(p.mean_ser)},mean_n_used:{_g(p.mean_n_used)},se_detected:{_g(p.se_detected)}"
        )
    return "\n".join(lines) + "\n"


def format_plot_script(result: SweepResult, csv_path):
    """Gnuplot script drawing detections and SER against SNR, one curve per extra-slot count."""
    extras = result.config.extra_slots_grid
    K = result.config.K

    def curves(col):
        return ", \\\n     ".join(
            f"'{csv_path}' skip 1 using ($3=={c} ? $1 : 1/0):{col} with linespoints title 'N-K={c}'" for c in extras
        )

    return (
        "set datafile separator ','\n"
        "set terminal pngcairo size 900,600\n"
        "set xlabel 'SNR (dB)'\n"
        "set grid\n"
        f"set output '{csv_path}.detected.png'\n"
        f"set ylabel 'correctly detected (of {K})'\n"
        f"set yrange [0:{K + 0.5}]\n"
        f"plot {curves(6)}\n"
        f"set output '{csv_path}.ser.png'\n"
        "set ylabel 'symbol error rate'\n"
        "set yrange [0:1]\n"
        f"plot {curves(7)}\n"
    )
