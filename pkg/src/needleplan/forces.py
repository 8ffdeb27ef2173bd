"""Needle-tissue force model along piecewise constant-curvature paths.

The needle shaft is treated as an inextensible string that carries a purely
tangential internal force n(s). Tissue friction (a distributed drag C plus a
Coulomb term mu * f_t) loads the shaft, and the tissue normal force obeys
f_t(s) = kappa(s) * n(s). The force balance is the linear ODE

    dn/ds = -C(s) - mu(s) * kappa(s) * n(s),

integrated backward from the tip condition n(L) = F_p (the piercing force).
On a constant-curvature segment the backward solution is closed form, with a
capstan-style exp(mu*kappa*l) growth factor; the numeric Runge-Kutta
integrator exists as an independent cross-check and for tissue whose
coefficients vary along the insertion.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .kinematics import ArcSegment, NeedlePath

__all__ = [
    "DEFAULT_TISSUE",
    "FitResult",
    "ForceProfile",
    "SaturationError",
    "SegmentForceState",
    "TissueParams",
    "fit_straight_insertion",
    "internal_force_numeric",
    "internal_force_profile",
    "max_tissue_force",
    "profile_on_segment_grids",
    "read_insertion_csv",
    "rk4_segment_grid",
    "segment_backstep",
    "write_profile_csv",
]

# exp argument beyond this overflows double precision
EXP_SATURATION = 700.0

# below this, exp(mu*kappa*l) is numerically indistinguishable from the
# linear limit and the closed form's division by mu*kappa loses accuracy
LINEAR_LIMIT = 1e-12

PROFILE_CSV_HEADER = ("s_m", "n_N", "ft_N_per_m")
FIT_CSV_HEADER = ("depth_m", "force_N")


class SaturationError(ArithmeticError):
    """Raised when exp(mu*kappa*l) overflows; callers price the path as +inf."""


@dataclass(frozen=True)
class TissueParams:
    """Homogeneous tissue friction parameters.

    c_friction: distributed friction C in N/m, >= 0.
    mu: kinetic friction coefficient, dimensionless, >= 0.
    piercing_force: tip cutting force F_p in N, > 0.
    """

    c_friction: float
    mu: float
    piercing_force: float

    def __post_init__(self):
        vals = (self.c_friction, self.mu, self.piercing_force)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("tissue parameters must be finite")
        if self.c_friction < 0.0:
            raise ValueError(f"c_friction must be >= 0, got {self.c_friction}")
        if self.mu < 0.0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.piercing_force <= 0.0:
            raise ValueError(f"piercing_force must be > 0, got {self.piercing_force}")


# phantom-gel values used throughout the benchmarks
DEFAULT_TISSUE = TissueParams(c_friction=83.75, mu=0.32, piercing_force=0.4)

ParamsLike = Union[TissueParams, Sequence[TissueParams]]


@dataclass(frozen=True)
class SegmentForceState:
    """Internal force at both ends of one segment, plus its peak normal force.

    n is monotone toward the base on a segment, so the per-segment maximum of
    f_t = kappa * n sits at the proximal end: f_t_max = kappa * n_proximal.
    """

    n_distal: float
    n_proximal: float
    f_t_max: float


def segment_backstep(n_distal: float, seg: ArcSegment, params: TissueParams) -> SegmentForceState:
    """Propagate the internal force backward across one segment.

    Given n at the segment's tip-side end, returns the force state with n at
    its base-side end:

        n_prox = n_distal * exp(x) + C * expm1(x) / (mu*kappa),  x = mu*kappa*l

    which reduces to n_distal + C*l when mu*kappa vanishes. Raises
    SaturationError when the exponential overflows.
    """
    if not math.isfinite(n_distal):
        raise ValueError("n_distal must be finite")
    if n_distal <= 0.0:
        raise ValueError(f"n_distal must be > 0, got {n_distal}")
    a = params.mu * seg.curvature
    x = a * seg.length
    if x > EXP_SATURATION:
        raise SaturationError(f"exp({x:.3g}) overflows: segment prices as infinite")
    if x < LINEAR_LIMIT:
        n_prox = n_distal + params.c_friction * seg.length
    else:
        n_prox = n_distal * math.exp(x) + params.c_friction * math.expm1(x) / a
    if not math.isfinite(n_prox):
        raise SaturationError("internal force overflowed double precision")
    return SegmentForceState(n_distal, n_prox, seg.curvature * n_prox)


def _params_per_segment(path: NeedlePath, params: ParamsLike) -> list[TissueParams]:
    if isinstance(params, TissueParams):
        return [params] * len(path.segments)
    plist = list(params)
    if len(plist) != len(path.segments):
        raise ValueError(f"expected {len(path.segments)} per-segment params, got {len(plist)}")
    return plist


def segment_states(path: NeedlePath, params: ParamsLike) -> list[SegmentForceState]:
    """Backward force chain, base-to-tip order.

    The tip boundary condition is the distal segment's piercing force; with
    per-segment parameters only the last entry's piercing_force matters.
    """
    plist = _params_per_segment(path, params)
    n = plist[-1].piercing_force
    states: list[SegmentForceState] = []
    for seg, p in zip(reversed(path.segments), reversed(plist)):
        state = segment_backstep(n, seg, p)
        states.append(state)
        n = state.n_proximal
    states.reverse()
    return states


def max_tissue_force(path: NeedlePath, params: ParamsLike) -> float:
    """Peak tissue normal force over the path (N/m), exact for piecewise-constant
    curvature; +inf when the force model saturates."""
    try:
        states = segment_states(path, params)
    except SaturationError:
        return math.inf
    return max(state.f_t_max for state in states)


# ---------------------------------------------------------------------------
# Force profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ForceProfile:
    """Sampled internal and tissue normal forces along a path.

    samples is a read-only (n, 3) array with columns (s in m, n in N, f_t in
    N/m), ascending in s. Where the curvature jumps at a segment boundary the
    same s appears twice, proximal-side f_t first, so both one-sided values
    are recorded; n itself is continuous.
    """

    samples: np.ndarray
    insertion_force: float
    max_tissue_force: float
    argmax_s: float

    @staticmethod
    def from_samples(samples: np.ndarray) -> "ForceProfile":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3 or samples.shape[0] == 0:
            raise ValueError("profile samples must be a non-empty (n, 3) array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("profile samples must be finite")
        s, n = samples[:, 0], samples[:, 1]
        if np.any(np.diff(s) < 0.0):
            raise ValueError("profile samples must be ordered by arc length")
        if np.any(n <= 0.0):
            raise ValueError("internal force must stay positive")
        # the force balance forbids n growing toward the tip; tiny slack
        # covers integrator roundoff only
        if np.any(np.diff(n) > 1e-9 * float(n.max())):
            raise ValueError("internal force must be non-increasing toward the tip")
        samples = samples.copy()
        samples.setflags(write=False)
        k = int(np.argmax(samples[:, 2]))
        return ForceProfile(
            samples=samples,
            insertion_force=float(n[0]),
            max_tissue_force=float(samples[k, 2]),
            argmax_s=float(samples[k, 0]),
        )


def _segment_n_backward(n_distal: float, kappa: float, params: TissueParams, t: np.ndarray) -> np.ndarray:
    """Closed-form n at backward offsets t (m) from a segment's distal end."""
    a = params.mu * kappa
    x = a * t
    xmax = float(x[-1]) if x.size else 0.0
    if xmax > EXP_SATURATION:
        raise SaturationError(f"exp({xmax:.3g}) overflows: segment prices as infinite")
    if xmax < LINEAR_LIMIT:
        return n_distal + params.c_friction * t
    return n_distal * np.exp(x) + params.c_friction * np.expm1(x) / a


def profile_on_segment_grids(
    path: NeedlePath, params: ParamsLike, local_grids: Sequence[np.ndarray]
) -> ForceProfile:
    """Closed-form profile sampled at caller-chosen per-segment offsets.

    local_grids[i] holds ascending offsets from segment i's proximal end and
    must start at 0 and end at the segment length. Boundary rows shared by
    segments with equal curvature collapse to one row.
    """
    plist = _params_per_segment(path, params)
    states = segment_states(path, plist)
    blocks = []
    prev_kappa = None
    for i, (seg, p, state) in enumerate(zip(path.segments, plist, states)):
        grid = np.asarray(local_grids[i], dtype=float)
        if grid.size < 2 or grid[0] != 0.0 or abs(grid[-1] - seg.length) > 1e-12:
            raise ValueError(f"segment {i} grid must span [0, length]")
        t = np.clip(seg.length - grid, 0.0, seg.length)
        n = _segment_n_backward(state.n_distal, seg.curvature, p, t[::-1])[::-1]
        rows = np.column_stack((path.boundaries[i] + grid, n, seg.curvature * n))
        # n is chained, so shared-boundary rows are identical when kappa is too
        if prev_kappa is not None and prev_kappa == seg.curvature:
            rows = rows[1:]
        blocks.append(rows)
        prev_kappa = seg.curvature
    return ForceProfile.from_samples(np.concatenate(blocks))


def _resolution_grids(path: NeedlePath, resolution: float) -> list[np.ndarray]:
    """Per-segment offsets for a global grid at multiples of ``resolution``.

    Matches discretize_path: every boundary is sampled, and grid points
    within 1e-12 of a boundary merge into it.
    """
    if resolution <= 0.0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    grids = []
    for i, seg in enumerate(path.segments):
        lo = float(path.boundaries[i])
        hi = float(path.boundaries[i + 1])
        first = math.ceil(lo / resolution)
        last = math.floor(hi / resolution)
        inner = np.arange(first, last + 1) * resolution - lo
        inner = inner[(inner > 1e-12) & (inner < seg.length - 1e-12)]
        grids.append(np.concatenate(([0.0], inner, [seg.length])))
    return grids


def internal_force_profile(
    path: NeedlePath, params: ParamsLike, sample_resolution: float
) -> ForceProfile:
    """Closed-form force profile sampled at the given resolution.

    Samples sit at global multiples of the resolution plus every segment
    boundary, so the reported max_tissue_force is exact: per segment, f_t
    peaks at the proximal end, which is always a sample.
    """
    return profile_on_segment_grids(path, params, _resolution_grids(path, sample_resolution))


# ---------------------------------------------------------------------------
# Numeric oracle
# ---------------------------------------------------------------------------

def rk4_segment_grid(length: float, step: float) -> tuple[int, float]:
    """Substep count and size covering a segment with equal steps <= step."""
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    nsteps = max(1, int(math.ceil(length / step - 1e-12)))
    return nsteps, length / nsteps


def _eval_coeff(fn: Callable[[float], float], svals: np.ndarray) -> np.ndarray:
    """Evaluate a coefficient function on an array, tolerating scalar-only fns."""
    try:
        out = np.asarray(fn(svals), dtype=float)
    except Exception:
        out = np.array([float(fn(float(s))) for s in svals])
    else:
        if out.shape == ():
            out = np.full(svals.shape, float(out))
        elif out.shape != svals.shape:
            out = np.array([float(fn(float(s))) for s in svals])
    if not np.all(np.isfinite(out)):
        raise ValueError("coefficient function returned non-finite values")
    return out


def internal_force_numeric(
    path: NeedlePath,
    c_of_s: Callable[[float], float],
    mu_of_s: Callable[[float], float],
    piercing_force: float,
    step: float,
) -> ForceProfile:
    """Classical fixed-step RK4 integration of the force balance, backward
    from n(L) = piercing_force. Independent of the closed form; supports
    coefficients that vary along s. Each segment is integrated separately so
    no step straddles a curvature jump.

    In the backward coordinate t = s_distal - s the ODE is
    dm/dt = C + mu*kappa*m, linear in m, so each RK4 step is the affine map
    m -> p*m + q; the stage algebra below composes p and q exactly as the
    four-stage rule prescribes, vectorized over the steps of a segment.
    """
    if not math.isfinite(piercing_force) or piercing_force <= 0.0:
        raise ValueError(f"piercing_force must be finite and > 0, got {piercing_force}")
    n = float(piercing_force)
    blocks_rev = []
    next_kappa = None
    for i in range(len(path.segments) - 1, -1, -1):
        seg = path.segments[i]
        s_hi = float(path.boundaries[i + 1])
        nsteps, h = rk4_segment_grid(seg.length, step)
        # stage abscissae, distal to proximal, spaced h/2
        svals = s_hi - np.arange(2 * nsteps + 1) * (h / 2.0)
        cs = _eval_coeff(c_of_s, svals)
        a = _eval_coeff(mu_of_s, svals) * seg.curvature
        a1, c1 = a[0:-1:2], cs[0:-1:2]
        a2, c2 = a[1::2], cs[1::2]
        a3, c3 = a[2::2], cs[2::2]
        h2 = 0.5 * h
        k1m, k1c = a1, c1
        k2m, k2c = a2 * (1.0 + h2 * k1m), c2 + a2 * h2 * k1c
        k3m, k3c = a2 * (1.0 + h2 * k2m), c2 + a2 * h2 * k2c
        k4m, k4c = a3 * (1.0 + h * k3m), c3 + a3 * h * k3c
        p = (1.0 + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)).tolist()
        q = ((h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)).tolist()
        nvals = [n]
        for j in range(nsteps):
            n = p[j] * n + q[j]
            nvals.append(n)
        if not math.isfinite(n):
            raise SaturationError("internal force overflowed during integration")
        narr = np.array(nvals[::-1])
        srow = float(path.boundaries[i]) + np.arange(nsteps + 1) * h
        srow[-1] = s_hi
        rows = np.column_stack((srow, narr, seg.curvature * narr))
        if next_kappa is not None and next_kappa == seg.curvature:
            rows = rows[:-1]
        blocks_rev.append(rows)
        next_kappa = seg.curvature
    return ForceProfile.from_samples(np.concatenate(blocks_rev[::-1]))


# ---------------------------------------------------------------------------
# Parameter fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Straight-insertion fit F_i(L) = F_p + C*L.

    piercing_force_negative flags a fitted intercept below zero; the fit is
    still returned since noise can push a small true F_p negative.
    """

    piercing_force: float
    c_friction: float
    r_squared: float
    piercing_force_negative: bool


def fit_straight_insertion(data: Iterable[tuple[float, float]]) -> FitResult:
    """Ordinary least squares of insertion force against depth.

    For straight insertion the force balance integrates to
    F_i(L) = F_p + C*L, so the intercept estimates the piercing force and the
    slope the distributed friction. mu does not appear (f_t = 0 on a straight
    path), so it cannot be recovered from this data.
    """
    pts = [(float(d), float(f)) for d, f in data]
    if any(not (math.isfinite(d) and math.isfinite(f)) for d, f in pts):
        raise ValueError("fit data must be finite")
    depths = np.array([d for d, _ in pts])
    forces = np.array([f for _, f in pts])
    if np.unique(depths).size < 2:
        raise ValueError("fit needs at least two distinct depths")
    design = np.column_stack((np.ones_like(depths), depths))
    coef, *_ = np.linalg.lstsq(design, forces, rcond=None)
    resid = forces - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((forces - forces.mean()) ** 2))
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    return FitResult(
        piercing_force=float(coef[0]),
        c_friction=float(coef[1]),
        r_squared=r_squared,
        piercing_force_negative=bool(coef[0] < 0.0),
    )


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def write_profile_csv(profile: ForceProfile, path) -> None:
    """Write a profile as CSV (header s_m,n_N,ft_N_per_m); values use repr so
    doubles round-trip exactly."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(PROFILE_CSV_HEADER) + "\n")
        for s, n, ft in profile.samples.tolist():
            fh.write(f"{s!r},{n!r},{ft!r}\n")


def read_insertion_csv(path) -> list[tuple[float, float]]:
    """Read straight-insertion measurements (header depth_m,force_N)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("insertion CSV is empty") from None
        if tuple(h.strip() for h in header) != FIT_CSV_HEADER:
            raise ValueError(f"expected header {','.join(FIT_CSV_HEADER)}, got {','.join(header)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                out.append((float(row[0]), float(row[1])))
            except ValueError:
                raise ValueError(f"line {lineno}: non-numeric value") from None
    return out
