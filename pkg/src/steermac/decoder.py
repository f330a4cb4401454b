"""
Receiver: rank-based stopping, noise-subspace root-MUSIC identification and
least-squares packet recovery.

The receiver collects rows of ``Y`` until its rank saturates, splits the left
singular basis into signal and noise parts, and looks for candidate roots
``r_k`` (at every arrival shift) that make the steering vector orthogonal to
the noise subspace. Identified columns are assembled into the steering matrix
and the packets are recovered by least squares.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .airsim import DEFAULT_PREAMBLE, MODES, ReceivedMatrix, SteeringAssignment
from .algebra import (
    SubspaceSplit,
    factor2_weights,
    least_squares_decode,
    powers,
    real_least_squares_decode,
    shift,
    svd_split,
)
from .errors import (
    AmbiguityError,
    DegeneratePolynomialError,
    DomainError,
    IdentificationError,
    InvalidShiftError,
    VanishingGainError,
)

__all__ = [
    "SubspaceSplit",
    "StopDecision",
    "RankStop",
    "RootHit",
    "RootFinding",
    "TransmitterMatch",
    "DecodeResult",
    "singular_value_threshold",
    "rank_stop_rule",
    "music_polynomial",
    "solve_polynomial",
    "music_roots",
    "match_roots",
    "build_steering_matrix",
    "decode_packets",
    "recombine_misaligned",
    "estimate_static_gains",
    "full_decode",
]

DEFAULT_ALPHA = 3.0
DELTA_RADIAL = 0.05
AMBIGUITY_RATIO = 100.0
AMBIGUITY_FLOOR = 1e-6
TRIM_TOL = 1e-14
MISALIGNED_MODES = ("misaligned", "static_gain", "fading")
GAIN_MODES = ("static_gain", "fading")


# ---------------------------------------------------------------------------
# Rank detection and stopping
# ---------------------------------------------------------------------------


def _padded_singular_values(Y):
    Y = np.asarray(Y, dtype=complex)
    s = np.linalg.svd(Y, compute_uv=False)
    out = np.zeros(Y.shape[0])
    out[: s.shape[0]] = s
    return out


def singular_value_threshold(values, sigma2, P, alpha=DEFAULT_ALPHA):
    """Count singular values above the noise threshold.

    The threshold is ``alpha * sqrt(sigma2 * P)``, the scale of a pure-noise
    row, floored at the numerical rank tolerance of a double-precision SVD.
    For ``sigma2 == 0`` it is ``1e-9 * max(max(values), 1)``.
    """
    values = np.asarray(values, dtype=float)
    top = float(values.max()) if values.size else 0.0
    if sigma2 == 0:
        tau = 1e-9 * max(top, 1.0)
    else:
        floor = max(values.size, int(P)) * np.finfo(float).eps * top
        tau = max(alpha * math.sqrt(sigma2 * P), floor)
    return int(np.sum(values > tau))


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    rank: int
    saturated: bool


def rank_stop_rule(Y, sigma2, extra_slots, alpha=DEFAULT_ALPHA, rank=None):
    """Decide whether the receiver has collected enough slots.

    The rank is saturated once it is smaller than the number of rows; the
    receiver then waits until ``extra_slots`` noise dimensions are available.
    A rank increase during the wait pushes the stop back automatically.
    ``rank`` overrides the threshold estimate (oracle thresholding).
    """
    Y = np.asarray(Y)
    n = Y.shape[0]
    if rank is None:
        rank = singular_value_threshold(_padded_singular_values(Y), sigma2, Y.shape[1], alpha)
    saturated = rank < n
    return StopDecision(stop=bool(saturated and n >= rank + extra_slots), rank=int(rank), saturated=saturated)


class RankStop:
    """Stateful stop predicate for :func:`steermac.airsim.run_until`.

    Keeps the per-slot history ``(n, rank, singular_values)`` for tracing;
    with ``record=False`` and a ``rank_fn`` no SVD is computed at all.
    ``rank_fn(n)`` replaces the threshold with a known rank.
    """

    def __init__(self, sigma2, extra_slots, alpha=DEFAULT_ALPHA, rank_fn=None, record=True):
        self.sigma2 = sigma2
        self.extra_slots = int(extra_slots)
        self.alpha = alpha
        self.rank_fn = rank_fn
        self.record = record
        self.history = []
        self.decision = None

    def __call__(self, Y):
        n = Y.shape[0]
        s = _padded_singular_values(Y) if self.record or self.rank_fn is None else None
        rank = self.rank_fn(n) if self.rank_fn else singular_value_threshold(s, self.sigma2, Y.shape[1], self.alpha)
        self.decision = rank_stop_rule(Y, self.sigma2, self.extra_slots, self.alpha, rank=rank)
        if self.record:
            self.history.append((n, self.decision.rank, s))
        return self.decision.stop


# ---------------------------------------------------------------------------
# MUSIC polynomial and rooting
# ---------------------------------------------------------------------------


def _row_weights(L, d, factor2, fading):
    g = np.ones(L, dtype=complex)
    if factor2:
        g = g * factor2_weights(L)
    if fading is not None:
        h = np.asarray(fading, dtype=complex)
        if h.shape[0] < d + L:
            raise DomainError(f"fading sequence shorter than {d + L} slots")
        g = g * h[d : d + L]
    return g


def _check_shift(U_perp, d):
    U_perp = np.asarray(U_perp, dtype=complex)
    if U_perp.ndim != 2 or U_perp.shape[1] == 0:
        raise DomainError("noise basis is empty")
    N = U_perp.shape[0]
    if not 0 <= d <= N - 2:
        raise InvalidShiftError(f"shift {d} outside [0, {N - 2}]")
    return U_perp


def music_polynomial(U_perp, d=0, factor2=False, fading=None):
    """Coefficients of ``z^(L-1) * J(z)`` in ascending powers of ``z``.

    ``J(z) = w'^H U U^H w'`` where ``w'`` is the length ``L = N - d`` vector
    ``[1, z, ..., z^(L-1)]`` placed at rows ``d..N-1``, optionally weighted by
    the factor-2 pattern (relative to its first row) and by the per-row
    fading gains ``fading[d:]`` of one candidate.
    """
    U_perp = _check_shift(U_perp, d)
    N = U_perp.shape[0]
    L = N - d
    g = _row_weights(L, d, factor2, fading)
    Usub = U_perp[d:]
    C = Usub @ Usub.conj().T
    B = (g.conj()[:, None] * C) * g[None, :]
    return np.array([np.trace(B, offset=m) for m in range(-(L - 1), L)])


def _trim(coeffs):
    c = np.asarray(coeffs, dtype=complex)
    mag = np.abs(c)
    if mag.size == 0 or mag.max() == 0:
        raise DegeneratePolynomialError("zero polynomial has no finite root set")
    keep = np.nonzero(mag > TRIM_TOL * mag.max())[0]
    return c[: keep[-1] + 1]


def _polish_double_roots(c, roots):
    """Merge computed root pairs that are numerically a double root.

    A mutual-nearest pair is replaced by the stationary point of ``p`` found
    by Newton on ``p'`` when ``p`` vanishes there to roundoff accuracy.
    """
    n = roots.size
    if n < 2:
        return roots
    dist = np.abs(roots[:, None] - roots[None, :])
    np.fill_diagonal(dist, np.inf)
    nearest = dist.argmin(axis=1)
    i = np.arange(n)
    pair = (nearest[nearest] == i) & (i < nearest)
    gap = dist[i, nearest]
    pair &= gap <= 1e-2 * np.maximum(1.0, np.abs(roots))
    i = i[pair]
    if i.size == 0:
        return roots
    j = nearest[i]
    gap = gap[i]
    dc = np.polynomial.polynomial.polyder(c)
    d2c = np.polynomial.polynomial.polyder(dc)
    polyval = np.polynomial.polynomial.polyval
    mid = 0.5 * (roots[i] + roots[j])
    z = mid.copy()
    with np.errstate(all="ignore"):
        for _ in range(8):
            den = polyval(z, d2c)
            z = np.where(den != 0, z - polyval(z, dc) / den, z)
    scale = np.sum(np.abs(c)) * np.maximum(1.0, np.abs(z)) ** (c.size - 1)
    tol = 10.0 * np.maximum.reduce(
        [np.abs(polyval(roots[i], c)), np.abs(polyval(roots[j], c)), np.finfo(float).eps * scale]
    )
    good = np.isfinite(z) & (np.abs(z - mid) <= gap) & (np.abs(polyval(z, c)) <= tol)
    out = roots.copy()
    out[i[good]] = z[good]
    out[j[good]] = z[good]
    return out


def solve_polynomial(coeffs):
    """All roots of the polynomial with ascending coefficients ``coeffs``.

    Roots are the eigenvalues of the companion matrix (LAPACK balances it
    before the QR iteration). Pairs that are numerically a double root are
    refined together, which matters for MUSIC polynomials whose true roots
    on the unit circle are all double.
    """
    c = _trim(coeffs)
    deg = c.size - 1
    if deg == 0:
        return np.zeros(0, dtype=complex)
    comp = np.zeros((deg, deg), dtype=complex)
    comp[0, :] = -c[-2::-1] / c[-1]
    comp[1:, :-1] = np.eye(deg - 1)
    roots = np.linalg.eigvals(comp)
    return _polish_double_roots(c, roots)


@dataclass(frozen=True)
class RootHit:
    id: int
    root: complex
    radial: float
    angular: float

    @property
    def score(self):
        return self.radial + self.angular


@dataclass(frozen=True)
class RootFinding:
    shift_index: int
    roots: np.ndarray = field(repr=False)
    unit_candidates: tuple
    family: Optional[int] = None


def _angle_distance(z, theta):
    return np.abs((np.angle(z)[..., None] - theta + np.pi) % (2 * np.pi) - np.pi)


class _QuadraticForm:
    """Direct evaluation of ``p(z) = z^(L-1) J(z)`` from the noise basis.

    Avoids the cancellation inherent in the expanded coefficients, so roots
    refined here are limited by the accuracy of the basis rather than by the
    squared conditioning of a double root.
    """

    def __init__(self, U_perp, d, g):
        self.A = np.conj(U_perp[d:]) * g[:, None]
        self.L = self.A.shape[0]

    def derivatives(self, z):
        """``p``, ``p'`` and ``p''`` at every point of the 1-D array ``z``."""
        z = np.asarray(z, dtype=complex)[:, None]
        a = np.arange(self.L)
        b = self.L - 1 - a

        def monomials(e):
            out = np.zeros((3, z.shape[0], self.L), dtype=complex)
            with np.errstate(all="ignore"):
                out[0] = z**e
                out[1] = np.where(e > 0, e * z ** np.maximum(e - 1, 0), 0)
                out[2] = np.where(e > 1, e * (e - 1) * z ** np.maximum(e - 2, 0), 0)
            return out

        G = monomials(a) @ self.A
        H = monomials(b) @ np.conj(self.A)
        p = np.sum(G[0] * H[0], axis=1)
        p1 = np.sum(G[1] * H[0] + G[0] * H[1], axis=1)
        p2 = np.sum(G[2] * H[0] + 2 * G[1] * H[1] + G[0] * H[2], axis=1)
        return p, p1, p2

    def residual(self, z):
        """Residual vector ``U_perp^H w(z)`` and its derivative, one row per point."""
        z = np.asarray(z, dtype=complex)[:, None]
        a = np.arange(self.L)
        with np.errstate(all="ignore"):
            v = z**a @ self.A
            dv = np.where(a > 0, a * z ** np.maximum(a - 1, 0), 0) @ self.A
        return v, dv

    def refine(self, z, double, iterations=5, window=1e-3):
        """Polish roots, keeping the best iterate within ``window`` of the start.

        Two tracks run side by side: Newton on ``p`` (simple roots) or ``p'``
        (double roots), and Gauss-Newton on the residual vector whose squared
        norm is the form. The second converges quadratically onto an exact
        zero of the form even where the computed pair failed to merge.
        """
        z0 = np.asarray(z, dtype=complex)
        double = np.asarray(double, dtype=bool)
        best = z0.copy()
        best_r = np.full(z0.shape, np.inf)
        newton = z0.copy()
        gauss = z0.copy()
        for _ in range(iterations + 1):
            for track in (newton, gauss):
                p, p1, _ = self.derivatives(track)
                r = np.where(double, np.abs(p1), np.abs(p))
                ok = np.isfinite(track) & (np.abs(track - z0) <= window) & (r < best_r)
                best = np.where(ok, track, best)
                best_r = np.where(ok, r, best_r)
            p, p1, p2 = self.derivatives(newton)
            num = np.where(double, p1, p)
            den = np.where(double, p2, p1)
            with np.errstate(all="ignore"):
                newton = np.where(den != 0, newton - num / den, newton)
            v, dv = self.residual(gauss)
            num = np.sum(np.conj(dv) * v, axis=1)
            den = np.sum(np.abs(dv) ** 2, axis=1)
            with np.errstate(all="ignore"):
                gauss = np.where(den > 0, gauss - num / den, gauss)
        return best


def music_roots(
    U_perp,
    d,
    assignment: SteeringAssignment,
    factor2=False,
    fading=None,
    family=None,
    delta_radial=DELTA_RADIAL,
    delta_angle=None,
    refine=True,
):
    """Root the MUSIC polynomial at shift ``d`` and map roots to candidates.

    Roots within ``delta_radial`` of the unit circle are matched to the
    nearest candidate angle within ``delta_angle`` (default: half the
    smallest candidate spacing). With ``family`` set, only that candidate is
    eligible. Returns the best hit per candidate.
    """
    U_perp = _check_shift(U_perp, d)
    if delta_angle is None:
        delta_angle = 0.5 * assignment.min_spacing
    coeffs = music_polynomial(U_perp, d, factor2, fading)
    roots = solve_polynomial(coeffs)
    theta = np.asarray(assignment.angles)
    ids = np.arange(assignment.size)
    if family is not None:
        theta, ids = theta[[family]], ids[[family]]
    radial = np.abs(np.abs(roots) - 1.0)
    near = np.nonzero(radial < delta_radial)[0]
    best = {}
    if near.size:
        dist = _angle_distance(roots[near], theta)
        nearest = dist.argmin(axis=1)
        keep = dist[np.arange(near.size), nearest] < delta_angle
        # a double root shows up as two identical entries after polishing
        cand, first, counts = np.unique(roots[near[keep]], return_index=True, return_counts=True)
        owner = nearest[keep][first]
        if refine and cand.size:
            form = _QuadraticForm(U_perp, d, _row_weights(U_perp.shape[0] - d, d, factor2, fading))
            cand = form.refine(cand, counts > 1, window=0.25 * assignment.min_spacing)
        for z, j in zip(cand, owner):
            rad = abs(abs(z) - 1.0)
            ang = float(_angle_distance(np.asarray([z]), theta[[j]])[0, 0])
            if rad >= delta_radial or ang >= delta_angle:
                continue
            hit = RootHit(id=int(ids[j]), root=complex(z), radial=float(rad), angular=ang)
            prev = best.get(hit.id)
            if prev is None or (hit.score, hit.radial) < (prev.score, prev.radial):
                best[hit.id] = hit
    hits = tuple(sorted(best.values(), key=lambda h: h.id))
    return RootFinding(shift_index=int(d), roots=roots, unit_candidates=hits, family=family)


# ---------------------------------------------------------------------------
# Identification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransmitterMatch:
    id: int
    root: complex
    arrival_shift: int
    misaligned: bool = False
    gain_estimate: Optional[complex] = None
    symbol_offset: Optional[int] = None
    score: float = 0.0

    @property
    def columns(self):
        return 2 if self.misaligned else 1

    @property
    def shifts(self):
        return (self.arrival_shift, self.arrival_shift + 1) if self.misaligned else (self.arrival_shift,)


def _matches_from(selected, assignment, scores):
    out = []
    for k, shifts in selected.items():
        d = min(shifts)
        out.append(
            TransmitterMatch(
                id=k,
                root=assignment.root(k),
                arrival_shift=d,
                misaligned=len(shifts) == 2,
                score=max(scores[(k, s)] for s in shifts),
            )
        )
    return out


def match_roots(rootsets, assignment, K_hat, factor2=False, allow_misaligned=None):
    """Greedy selection of candidate columns accounting for ``K_hat`` columns.

    Every hit ``(id, shift)`` is a candidate column scored by its radial plus
    angular distance. Columns are taken best-first; a second column of an
    already selected id is accepted only at an adjacent shift (and only when
    misalignment is possible), turning the match into a misaligned one.

    Without factor-2 weighting a misaligned pair is indistinguishable from an
    aligned transmitter starting in one of the two slots; if an unselected
    column as good as the selected ones sits next to a selected id, the
    classification is reported as ambiguous.
    """
    if K_hat < 1:
        raise IdentificationError("nothing to identify (rank 0)")
    if allow_misaligned is None:
        allow_misaligned = factor2
    scores = {}
    radials = {}
    for rs in rootsets:
        for h in rs.unit_candidates:
            if rs.family is not None and h.id != rs.family:
                continue
            key = (h.id, rs.shift_index)
            if key not in scores or (h.score, h.radial) < (scores[key], radials[key]):
                scores[key] = h.score
                radials[key] = h.radial
    order = sorted(scores, key=lambda key: (scores[key], radials[key], key[0], key[1]))
    selected = {}
    taken = set()
    total = 0
    for k, d in order:
        if total == K_hat:
            break
        if k not in selected:
            selected[k] = [d]
        elif allow_misaligned and len(selected[k]) == 1 and abs(d - selected[k][0]) == 1:
            selected[k].append(d)
        else:
            continue
        taken.add((k, d))
        total += 1
    matches = _matches_from(selected, assignment, scores)
    if total < K_hat:
        raise IdentificationError(
            f"identified {total} of {K_hat} steering columns", partial=matches
        )
    if allow_misaligned and not factor2:
        worst = max(scores[key] for key in taken)
        limit = max(AMBIGUITY_RATIO * worst, AMBIGUITY_FLOOR)
        rivals = [
            (k, d)
            for (k, d) in order
            if (k, d) not in taken
            and k in selected
            and scores[(k, d)] <= limit
            and any(abs(d - s) == 1 for s in selected[k])
        ]
        if rivals:
            # swap roles: the rival's id takes two columns, a misaligned id gives one up
            k, d = rivals[0]
            alt = {j: list(v) for j, v in selected.items()}
            alt[k] = sorted(set(alt[k]) | {d})[:2]
            donors = [j for j, v in selected.items() if j != k and len(v) == 2]
            if donors:
                alt[donors[0]] = [min(alt[donors[0]])]
            raise AmbiguityError(
                "ambiguous identification: duplicate roots in consecutive shifts cannot be attributed without factor-2 weighting",
                hypotheses=[matches, _matches_from(alt, assignment, scores)],
                partial=matches,
            )
    return matches


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------


def _steering_column(r, N, d, factor2, h):
    base = powers(r, N).astype(complex)
    if factor2:
        base = base * factor2_weights(N)
    col = shift(base, d)
    if h is not None:
        col = col * np.asarray(h, dtype=complex)[:N]
    return col


def build_steering_matrix(matches, N, factor2=False, fading=None):
    """Steering matrix with one column per aligned and two per misaligned match.

    ``fading`` is a table indexed by candidate id whose row ``k`` holds
    ``h_k(1..N)``.
    """
    if not matches:
        raise DomainError("no matches to build a steering matrix from")
    cols = []
    for m in matches:
        if m.arrival_shift + m.columns - 1 > N - 2:
            raise InvalidShiftError(f"match {m.id}: shift beyond N-2")
        h = None if fading is None else fading[m.id]
        for d in m.shifts:
            cols.append(_steering_column(m.root, N, d, factor2, h))
    return np.column_stack(cols)


def decode_packets(W, Y, real=False):
    """Least-squares estimate of the packet rows (one per steering column)."""
    Y = Y.matrix if isinstance(Y, ReceivedMatrix) else Y
    return real_least_squares_decode(W, Y) if real else least_squares_decode(W, Y)


def _preamble_misfit(x, preamble):
    seg = x[: preamble.size]
    energy = np.vdot(seg, seg).real
    if energy <= 0:
        return 1.0
    proj = abs(np.vdot(preamble, seg)) ** 2 / (np.vdot(preamble, preamble).real * energy)
    return 1.0 - proj


def recombine_misaligned(row_a, row_b, preamble=DEFAULT_PREAMBLE):
    """Undo the slot split of a misaligned packet.

    ``row_a`` carries ``shift(s, p)`` and ``row_b`` carries ``shift(s, p - P)``.
    The offset ``p`` is the split point whose recombination best matches the
    known preamble (up to a complex gain).

    Returns
    -------
    packet : ndarray
    offset : int
    """
    a = np.asarray(row_a, dtype=complex)
    b = np.asarray(row_b, dtype=complex)
    pre = np.asarray(preamble, dtype=complex)
    P = a.shape[0]
    best = None
    for p in range(1, P):
        x = shift(a, -p) + shift(b, P - p)
        misfit = _preamble_misfit(x, pre)
        if best is None or misfit < best[0]:
            best = (misfit, p, x)
    return best[2], best[1]


def estimate_static_gains(rows, preamble=DEFAULT_PREAMBLE):
    """Per-row complex gain fitted on the known preamble, and the de-scaled rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=complex))
    pre = np.asarray(preamble, dtype=complex)
    L = pre.size
    if L < 1 or np.vdot(pre, pre).real == 0:
        raise DomainError("preamble must be non-empty with non-zero energy")
    gains = rows[:, :L] @ pre.conj() / np.vdot(pre, pre).real
    if np.any(np.abs(gains) < 1e-9):
        raise VanishingGainError("estimated channel gain vanishes")
    return gains, rows / gains[:, None]


@dataclass
class DecodeResult:
    matches: list
    steering_matrix: np.ndarray = field(repr=False)
    packets: np.ndarray = field(repr=False)
    recovered: dict = field(repr=False)
    N_used: int = 0
    rank: int = 0
    singular_values: np.ndarray = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)
    rootsets: list = field(default_factory=list, repr=False)

    @property
    def ids(self):
        return sorted(m.id for m in self.matches)


def _diagnostics(Y, s, rank, W=None, S=None, extra_slots=None):
    diag = {
        "N": int(Y.shape[0]),
        "rank": int(rank),
        "sv_gap": float(s[rank - 1] / s[rank]) if 0 < rank < s.size and s[rank] > 0 else float("inf"),
    }
    if extra_slots is not None:
        diag["extra_slots"] = int(extra_slots)
    if W is not None and S is not None:
        diag["residual_norm"] = float(np.linalg.norm(Y - W @ S))
    return diag


def full_decode(
    Y,
    sigma2,
    assignment: SteeringAssignment,
    mode="aligned_t0",
    fading_table=None,
    extra_slots=None,
    *,
    rank=None,
    factor2=None,
    alpha=DEFAULT_ALPHA,
    preamble=DEFAULT_PREAMBLE,
    real_symbols=False,
    matches=None,
    delta_radial=DELTA_RADIAL,
    delta_angle=None,
):
    """Decode every packet in a received matrix.

    Parameters
    ----------
    Y : ReceivedMatrix or ndarray (N, P)
    sigma2 : float
        Known noise variance, used for rank thresholding.
    assignment : SteeringAssignment
    mode : str
        One of ``aligned_t0``, ``slot_aligned``, ``misaligned``,
        ``static_gain``, ``fading``.
    fading_table : ndarray (M, N), optional
        Known per-slot gains of every candidate; required in fading mode.
    rank : int, optional
        Known signal dimension; skips singular-value thresholding.
    factor2 : bool, optional
        Whether transmitters use factor-2 weighting; defaults to true in the
        misaligned, static-gain and fading modes.
    real_symbols : bool
        Packets are known to be real; uses the real-constrained solve when
        no unknown gains are present.
    matches : list of TransmitterMatch, optional
        Known identification; skips root-MUSIC entirely.

    Raises
    ------
    IdentificationError, AmbiguityError
        With ``diagnostics`` attached.
    """
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    Y = Y.matrix if isinstance(Y, ReceivedMatrix) else np.asarray(Y, dtype=complex)
    N, P = Y.shape
    if factor2 is None:
        factor2 = mode in MISALIGNED_MODES
    if mode == "fading" and fading_table is None:
        raise DomainError("fading mode needs the receiver's fading table")
    table = None if fading_table is None else np.asarray(fading_table, dtype=complex)
    s = _padded_singular_values(Y)
    if rank is None:
        rank = singular_value_threshold(s, sigma2, P, alpha)
    rootsets = []
    if matches is None:
        diag = _diagnostics(Y, s, rank, extra_slots=extra_slots)
        if rank == 0:
            raise IdentificationError("no signal above the noise threshold", diagnostics=diag)
        if rank >= N:
            raise IdentificationError("noise subspace is empty; collect more slots", diagnostics=diag)
        split = svd_split(Y, rank)
        shifts = [0] if mode == "aligned_t0" else range(N - 1)
        families = range(assignment.size) if mode == "fading" else [None]
        for fam in families:
            h = None if fam is None else table[fam]
            for d in shifts:
                rootsets.append(
                    music_roots(
                        split.noise_basis, d, assignment, factor2, h, fam,
                        delta_radial=delta_radial, delta_angle=delta_angle,
                    )
                )
        try:
            matches = match_roots(
                rootsets, assignment, rank, factor2, allow_misaligned=mode in MISALIGNED_MODES
            )
        except IdentificationError as exc:
            exc.diagnostics = diag
            exc.rootsets = rootsets
            raise
    matches = list(matches)
    W = build_steering_matrix(matches, N, factor2, table)
    real = real_symbols and mode not in GAIN_MODES
    S = decode_packets(W, Y, real=real)
    recovered = {}
    out_matches = []
    row = 0
    for m in matches:
        if m.misaligned:
            packet, p = recombine_misaligned(S[row], S[row + 1], preamble)
            m = replace(m, symbol_offset=p)
        else:
            packet = S[row]
            m = replace(m, symbol_offset=0)
        row += m.columns
        if mode in GAIN_MODES:
            gain, cleaned = estimate_static_gains(packet, preamble)
            packet = cleaned[0]
            m = replace(m, gain_estimate=complex(gain[0]))
        recovered[m.id] = packet
        out_matches.append(m)
    return DecodeResult(
        matches=out_matches,
        steering_matrix=W,
        packets=S,
        recovered=recovered,
        N_used=N,
        rank=int(rank),
        singular_values=s,
        diagnostics=_diagnostics(Y, s, rank, W, S, extra_slots),
        rootsets=rootsets,
    )


def format_decode_result(result: DecodeResult):
    """Field-per-line ``key=value`` dump of a decode result."""
    lines = [
        f"n_used={result.N_used}",
        f"rank={result.rank}",
        f"matches={len(result.matches)}",
    ]
    for i, m in enumerate(result.matches):
        gain = "" if m.gain_estimate is None else repr(complex(m.gain_estimate))
        lines.append(
            f"match.{i}=id:{m.id},shift:{m.arrival_shift},misaligned:{int(m.misaligned)},"
            f"offset:{'' if m.symbol_offset is None else m.symbol_offset},gain:{gain}"
        )
    for key in sorted(result.diagnostics):
        lines.append(f"diag.{key}={result.diagnostics[key]!r}")
    return "\n".join(lines) + "\n"


def parse_decode_result(text):
    """Inverse of :func:`format_decode_result` for the scalar and match fields."""
    out = {"matches": [], "diagnostics": {}}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key.startswith("match."):
            fields = dict(item.split(":", 1) for item in value.split(","))
            out["matches"].append(
                {
                    "id": int(fields["id"]),
                    "shift": int(fields["shift"]),
                    "misaligned": bool(int(fields["misaligned"])),
                    "offset": int(fields["offset"]) if fields["offset"] else None,
                    "gain": complex(fields["gain"]) if fields["gain"] else None,
                }
            )
        elif key.startswith("diag."):
            out["diagnostics"][key[5:]] = float(value)
        elif key in ("n_used", "rank", "matches"):
            if key != "matches":
                out[key] = int(value)
    return out
