"""
Transmitter and channel simulator.

Every transmitter retransmits its packet once per slot, weighted by its
steering root (and the optional factor-2 schedule), until the receiver stops
collecting. A transmitter whose packet starts ``p`` symbols into a slot is
simulated as two slot-aligned virtual transmitters sharing its root, so the
received rows are produced by a single code path for every scenario.

Randomness is keyed by ``(seed, role, ...)`` through ``numpy.random.SeedSequence``
so that noise draws for slot ``n`` do not depend on how many transmitters
are active or on how many slots were simulated before.
"""

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .algebra import shift
from .errors import DimensionError, DomainError, NoConvergenceError, ReplayFormatError

ROLE_SCENARIO = 0
ROLE_NOISE = 1
ROLE_FADING = 2

DEFAULT_PREAMBLE = (200.0, 60.0, 140.0, 20.0)

MODES = ("aligned_t0", "slot_aligned", "misaligned", "static_gain", "fading")


def keyed_rng(seed, *keys):
    """Independent generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def derive_seed(*keys):
    """Collapse a tuple of non-negative integers into one 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


# ---------------------------------------------------------------------------
# Candidate dictionary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteeringAssignment:
    """Candidate transmitters and their unit-circle roots ``exp(j*angle)``."""

    angles: tuple

    def __post_init__(self):
        angles = tuple(float(a) for a in self.angles)
        if not angles:
            raise DomainError("assignment needs at least one candidate")
        if any(not 0.0 <= a < math.pi for a in angles):
            raise DomainError("candidate angles must lie in [0, pi)")
        if len(set(angles)) != len(angles):
            raise DomainError("candidate angles must be distinct")
        object.__setattr__(self, "angles", angles)

    @property
    def size(self):
        return len(self.angles)

    @property
    def roots(self):
        return np.exp(1j * np.asarray(self.angles))

    def root(self, k):
        return complex(np.exp(1j * self.angles[k]))

    @property
    def min_spacing(self):
        """Smallest gap between neighbouring angles, counting the wrap at pi."""
        a = np.sort(np.asarray(self.angles))
        if a.size == 1:
            return math.pi
        gaps = np.diff(a)
        return float(min(gaps.min(), a[0] + math.pi - a[-1]))


def make_equally_spaced_assignment(M):
    M = int(M)
    if M < 1:
        raise DomainError("need at least one candidate transmitter")
    return SteeringAssignment(tuple(k * math.pi / M for k in range(M)))


# ---------------------------------------------------------------------------
# Scenario description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransmitterSpec:
    """One active transmitter.

    ``arrival_slot`` is 1-based; ``symbol_offset`` is the integer number of
    symbols by which its packets trail slot boundaries. ``fading`` optionally
    fixes the per-slot channel ``h(1), h(2), ...``; when ``None`` the scenario
    decides (constant 1, or keyed Gaussian draws when fading is enabled).
    """

    id: int
    packet: tuple
    arrival_slot: int = 1
    symbol_offset: int = 0
    static_gain: complex = 1.0
    fading: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "packet", tuple(_as_number(x) for x in self.packet))
        if self.fading is not None:
            object.__setattr__(self, "fading", tuple(complex(x) for x in self.fading))
        off = self.symbol_offset
        if isinstance(off, float):
            if not off.is_integer():
                raise DomainError("fractional symbol offsets are not supported")
            off = int(off)
        object.__setattr__(self, "symbol_offset", int(off))
        object.__setattr__(self, "static_gain", complex(self.static_gain))
        if int(self.arrival_slot) < 1:
            raise DomainError("arrival_slot must be >= 1")
        object.__setattr__(self, "arrival_slot", int(self.arrival_slot))

    @property
    def misaligned(self):
        return self.symbol_offset > 0

    @property
    def columns(self):
        return 2 if self.misaligned else 1

    def packet_array(self):
        return np.asarray(self.packet, dtype=complex)


def _as_number(x):
    if isinstance(x, complex):
        return x if x.imag != 0 else float(x.real)
    return float(x)


@dataclass(frozen=True)
class Scenario:
    assignment: SteeringAssignment
    transmitters: tuple
    P: int
    sigma2: float = 0.0
    factor2_enabled: bool = False
    seed: int = 0
    fading: bool = False

    def __post_init__(self):
        object.__setattr__(self, "transmitters", tuple(self.transmitters))
        P = int(self.P)
        object.__setattr__(self, "P", P)
        if P < 1:
            raise DimensionError("packets need at least one symbol")
        if self.sigma2 < 0:
            raise DomainError("noise variance must be non-negative")
        ids = [t.id for t in self.transmitters]
        if len(set(ids)) != len(ids):
            raise DomainError("transmitter ids must be distinct")
        for t in self.transmitters:
            if not 0 <= t.id < self.assignment.size:
                raise DomainError(f"transmitter id {t.id} outside the assignment")
            if len(t.packet) != P:
                raise DimensionError(f"transmitter {t.id}: packet length {len(t.packet)} != P={P}")
            if not 0 <= t.symbol_offset < P:
                raise DomainError(f"transmitter {t.id}: symbol offset outside [0, {P - 1}]")
        cols = virtual_column_count(self)
        if self.transmitters and P <= cols:
            raise DimensionError(f"P={P} must exceed the {cols} occupied steering columns")

    @property
    def K(self):
        return len(self.transmitters)

    def fading_gain(self, tx, n):
        """Channel coefficient of transmitter ``tx`` (spec or id) during slot ``n``."""
        if isinstance(tx, TransmitterSpec):
            if tx.fading is not None:
                if n > len(tx.fading):
                    raise DimensionError(f"transmitter {tx.id}: no fading value for slot {n}")
                return tx.fading[n - 1]
            tx = tx.id
        if not self.fading:
            return 1.0
        return fading_draw(self.seed, tx, n)

    def fading_table(self, N):
        """Gains ``h[id, n-1]`` for every candidate id, as the receiver knows them.

        Returns ``None`` when all links are static.
        """
        explicit = {t.id: t for t in self.transmitters if t.fading is not None}
        if not self.fading and not explicit:
            return None
        M = self.assignment.size
        table = np.ones((M, N), dtype=complex)
        if self.fading:
            table = np.array([[fading_draw(self.seed, k, n) for n in range(1, N + 1)] for k in range(M)])
        for k, t in explicit.items():
            table[k] = [self.fading_gain(t, n) for n in range(1, N + 1)]
        return table


def fading_draw(seed, tx_id, n):
    g = keyed_rng(seed, ROLE_FADING, tx_id, n).standard_normal(2)
    return complex(g[0], g[1]) / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Transmission model
# ---------------------------------------------------------------------------


def transmission_coefficient(r, m, factor2=False):
    """Weight applied to the ``m``-th transmission (1-based) of a packet."""
    m = int(m)
    if m < 1:
        raise DomainError("transmission index must be >= 1")
    c = complex(np.exp(1j * np.angle(complex(r)) * (m - 1)))
    if factor2 and m % 2 == 0:
        c *= 2.0
    return c


@dataclass(frozen=True)
class VirtualTransmitter:
    """Slot-aligned component of a physical transmitter."""

    spec: TransmitterSpec
    packet: np.ndarray
    arrival_slot: int

    @property
    def shift(self):
        return self.arrival_slot - 1


def virtual_transmitters(scenario):
    out = []
    for t in scenario.transmitters:
        s = t.packet_array()
        if t.misaligned:
            p = t.symbol_offset
            out.append(VirtualTransmitter(t, shift(s, p), t.arrival_slot))
            out.append(VirtualTransmitter(t, shift(s, p - scenario.P), t.arrival_slot + 1))
        else:
            out.append(VirtualTransmitter(t, s, t.arrival_slot))
    return out


def virtual_column_count(scenario):
    return sum(t.columns for t in scenario.transmitters)


def column_shifts(scenario):
    """0-based arrival shift of every virtual steering column."""
    return [v.shift for v in virtual_transmitters(scenario)]


def signal_rank(scenario, n):
    """Generic rank of the noiseless signal part of ``Y_n``.

    A steering column with shift ``d`` is supported on rows ``d..n-1``. Without
    factor-2 weighting the two columns of a misaligned transmitter starting at
    shift ``d`` span ``e_d`` and a column at shift ``d + 1``, and ``e_d`` is
    shared by every transmitter misaligned at that shift. The rank is the
    size of a maximum matching between rows and column supports.
    """
    return rank_profile(scenario)(n)


def rank_profile(scenario):
    """``signal_rank`` as a function of ``n`` with the column supports precomputed."""
    suffix = []
    points = set()
    for t in scenario.transmitters:
        d = t.arrival_slot - 1
        if t.misaligned and not scenario.factor2_enabled:
            suffix.append(d + 1)
            points.add(d)
        else:
            suffix.extend([d, d + 1] if t.misaligned else [d])

    def rank(n):
        # rows matched greedily to intervals ordered by right end (optimal for intervals)
        intervals = sorted([(d, d) for d in points if d < n] + [(d, n - 1) for d in suffix if d < n], key=lambda iv: (iv[1], iv[0]))
        used = set()
        for lo, hi in intervals:
            row = lo
            while row in used and row <= hi:
                row += 1
            if row <= hi:
                used.add(row)
        return len(used)

    return rank


def noise_vector(scenario, n):
    if scenario.sigma2 == 0:
        return np.zeros(scenario.P, dtype=complex)
    g = keyed_rng(scenario.seed, ROLE_NOISE, n).standard_normal((2, scenario.P))
    return math.sqrt(scenario.sigma2 / 2.0) * (g[0] + 1j * g[1])


def _signal_slot(scenario, n, components):
    y = np.zeros(scenario.P, dtype=complex)
    for v in components:
        m = n - v.arrival_slot + 1
        if m < 1:
            continue
        r = scenario.assignment.root(v.spec.id)
        c = transmission_coefficient(r, m, scenario.factor2_enabled)
        gain = v.spec.static_gain * scenario.fading_gain(v.spec, n)
        y = y + (gain * c) * v.packet
    return y


def simulate_slot(scenario, n, rng=None):
    """Received symbols for slot ``n`` (1-based).

    ``rng`` overrides the keyed noise stream; when omitted the noise for slot
    ``n`` is drawn from ``(scenario.seed, ROLE_NOISE, n)``.
    """
    if n < 1:
        raise DomainError("slot index must be >= 1")
    y = _signal_slot(scenario, n, virtual_transmitters(scenario))
    if rng is None:
        return y + noise_vector(scenario, n)
    if scenario.sigma2 > 0:
        g = rng.standard_normal((2, scenario.P))
        y = y + math.sqrt(scenario.sigma2 / 2.0) * (g[0] + 1j * g[1])
    return y


# ---------------------------------------------------------------------------
# Receiver-side accumulation
# ---------------------------------------------------------------------------


_HEADER = struct.Struct("<QQ")


@dataclass(frozen=True)
class ReceivedMatrix:
    """Rows ``y_1 .. y_N`` collected by the receiver, one per slot."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex, copy=True)
        if m.ndim != 2:
            raise DimensionError("received matrix must be 2-D")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def N(self):
        return self.matrix.shape[0]

    @property
    def P(self):
        return self.matrix.shape[1]

    @property
    def rows(self):
        return list(self.matrix)

    def appended(self, row):
        row = np.asarray(row, dtype=complex).reshape(1, -1)
        if self.N and row.shape[1] != self.P:
            raise DimensionError(f"row has {row.shape[1]} entries, expected {self.P}")
        return ReceivedMatrix(np.vstack([self.matrix, row]) if self.N else row)

    def to_bytes(self):
        """Little-endian ``(N, P)`` uint64 header followed by interleaved re/im doubles."""
        body = np.empty((self.N, self.P, 2), dtype="<f8")
        body[..., 0] = self.matrix.real
        body[..., 1] = self.matrix.imag
        return _HEADER.pack(self.N, self.P) + body.tobytes()

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size:
            raise ReplayFormatError("truncated header")
        N, P = _HEADER.unpack_from(data)
        expected = _HEADER.size + 16 * N * P
        if len(data) != expected:
            raise ReplayFormatError(f"expected {expected} bytes for a {N}x{P} matrix, got {len(data)}")
        if N == 0 or P == 0:
            raise ReplayFormatError("empty matrix")
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(N, P, 2)
        return cls(body[..., 0] + 1j * body[..., 1])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def default_cap(scenario):
    return 4 * virtual_column_count(scenario) + 16


def run_until(scenario, stop: Callable[[np.ndarray], bool], cap=None):
    """Collect slots until ``stop(Y_n)`` returns true.

    Raises
    ------
    NoConvergenceError
        When ``cap`` slots were collected without a stop; the partial
        matrix is attached.
    """
    cap = default_cap(scenario) if cap is None else int(cap)
    components = virtual_transmitters(scenario)
    rows = []
    for n in range(1, cap + 1):
        rows.append(_signal_slot(scenario, n, components) + noise_vector(scenario, n))
        Y = np.vstack(rows)
        if stop(Y):
            return ReceivedMatrix(Y)
    raise NoConvergenceError(f"no stop within {cap} slots", partial=ReceivedMatrix(np.vstack(rows)))


def stop_at(N):
    """Predicate that stops after exactly ``N`` slots."""
    return lambda Y: Y.shape[0] >= N


# ---------------------------------------------------------------------------
# Random scenario generation
# ---------------------------------------------------------------------------


def _first_deficient_slot(shifts):
    """Smallest slot t with fewer than t columns started by row t-1."""
    shifts = np.asarray(shifts, dtype=int)
    t = 1
    while np.sum(shifts <= t - 1) >= t:
        t += 1
    return t


def random_packet(rng, P, preamble=None):
    s = rng.integers(0, 256, size=P).astype(float)
    if preamble is not None:
        s[: len(preamble)] = preamble
    return s


def random_scenario(
    mode,
    M=32,
    K=8,
    P=24,
    sigma2=0.0,
    seed=0,
    *,
    misaligned_fraction=0.5,
    factor2=None,
    preamble=DEFAULT_PREAMBLE,
    assignment=None,
):
    """Draw a scenario in one of the five decoding modes.

    Arrival slots are drawn so that every transmitter starts before the
    receiver could see a rank-deficient matrix, i.e. before it would stop.
    """
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    assignment = assignment or make_equally_spaced_assignment(M)
    if K > assignment.size:
        raise DomainError("more active transmitters than candidates")
    rng = keyed_rng(seed, ROLE_SCENARIO)
    ids = rng.choice(assignment.size, size=K, replace=False)
    if factor2 is None:
        factor2 = mode in ("misaligned", "static_gain", "fading")
    use_preamble = preamble if mode in ("misaligned", "static_gain", "fading") else None
    specs = []
    shifts = []
    offsets = set()
    last = 1
    for j, k in enumerate(ids):
        if mode == "aligned_t0" or j == 0:
            n = 1
        else:
            n = int(rng.integers(last, _first_deficient_slot(shifts) + 1))
        last = n
        p = 0
        if mode in ("misaligned", "static_gain", "fading") and rng.random() < misaligned_fraction:
            # equal offsets give packet fragments with identical short supports (and a
            # head made only of preamble symbols is shared by everyone), so offsets
            # are distinct and leave payload in the first slot
            free = sorted(set(range(1, max(2, P - len(use_preamble or ())))) - offsets)
            if free:
                p = int(rng.choice(free))
                offsets.add(p)
        q = 1.0
        if mode in ("static_gain", "fading"):
            q = complex(rng.uniform(0.5, 2.0) * np.exp(1j * rng.uniform(0, 2 * math.pi)))
        specs.append(
            TransmitterSpec(
                id=int(k),
                packet=tuple(random_packet(rng, P, use_preamble)),
                arrival_slot=n,
                symbol_offset=p,
                static_gain=q,
            )
        )
        shifts.append(n - 1)
        if p:
            shifts.append(n)
    return Scenario(
        assignment=assignment,
        transmitters=tuple(specs),
        P=P,
        sigma2=float(sigma2),
        factor2_enabled=bool(factor2),
        seed=int(seed),
        fading=(mode == "fading"),
    )
