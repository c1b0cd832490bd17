"""Numerical checks of the geometric claims behind the two kernel views.

Three facts carry the method: (1) on a sphere the chord underestimates the
arc with cubic error, so swapping Euclidean for geodesic distance perturbs
geometry by O(m^3) for nearby points; (2) the negative-exponential kernel
stays positive semidefinite under both metrics; (3) the metric swap is a
real augmentation -- it flips 1-nearest-neighbor relations.  Each check is
constructive: exact sphere pairs at chosen geodesic distances, eigenvalue
scans of Gram matrices, and brute-force neighbor comparison of the two
feature maps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .kernels import KernelConfig, kernel_eval, nystrom_map
from .rng import substream

FIT_WINDOW = (1e-3, 1e-1)
NOISE_FLOOR = 1e-14
SLOPE_RANGE = (2.8, 3.2)
PSD_THRESHOLD = -1e-8
MAX_PSD_POINTS = 64


@dataclass
class SpherePairSample:
    """Point pairs on the radius-rho sphere at exact geodesic separations."""
    dim: int
    radius: float
    xs: np.ndarray  # (n, dim)
    ys: np.ndarray  # (n, dim)
    ms: np.ndarray  # (n,) geodesic distances

    def validate(self) -> None:
        rho = self.radius
        for name, pts in (("x", self.xs), ("y", self.ys)):
            err = np.abs(np.linalg.norm(pts, axis=1) - rho).max()
            if err > 1e-12:
                raise NumericError(f"sphere sample: {name} norm drifts {err:.3e} from rho")
        # half-angle form: the literal arccos of the dot product is
        # ill-conditioned near cos=1 and would reject exact pairs at m < ~1e-4
        diff = np.linalg.norm(self.xs - self.ys, axis=1)
        summ = np.linalg.norm(self.xs + self.ys, axis=1)
        recovered = rho * 2.0 * np.arctan2(diff, summ)
        err = np.abs(recovered - self.ms).max()
        if err > 1e-12:
            raise NumericError(f"sphere sample: geodesic distance drifts {err:.3e}")


def sample_sphere_pairs(seed: int, radius: float, dim: int,
                        m_values) -> SpherePairSample:
    """For each m, a uniform sphere point and its rotation by angle m/rho
    along a random tangent direction, so the geodesic gap is exact."""
    ms = np.asarray(list(m_values), dtype=np.float64)
    if dim < 2:
        raise DataError(f"sample_sphere_pairs: need dim >= 2, got {dim}")
    if not radius > 0:
        raise DataError(f"sample_sphere_pairs: radius must be > 0, got {radius}")
    bad = (ms <= 0) | (ms >= np.pi * radius)
    if bad.any():
        raise DataError(
            f"sample_sphere_pairs: m must lie in (0, pi*rho); offending m={ms[bad][0]}")
    rng = substream(seed, "sphere-pairs")
    xs = np.empty((ms.size, dim))
    ys = np.empty((ms.size, dim))
    for i, m in enumerate(ms):
        u = rng.normal(size=dim)
        while np.linalg.norm(u) < 1e-12:
            u = rng.normal(size=dim)
        u /= np.linalg.norm(u)
        v = rng.normal(size=dim)
        t = v - (v @ u) * u
        while np.linalg.norm(t) < 1e-12:
            v = rng.normal(size=dim)
            t = v - (v @ u) * u
        t /= np.linalg.norm(t)
        theta = m / radius
        xs[i] = radius * u
        ys[i] = radius * (np.cos(theta) * u + np.sin(theta) * t)
    sample = SpherePairSample(dim=dim, radius=radius, xs=xs, ys=ys, ms=ms)
    sample.validate()
    return sample


# -- chord-vs-arc bound ---------------------------------------------------------

@dataclass
class BoundReport:
    """Per-pair chord/arc gaps plus the fitted cubic-error-law slope."""
    radius: float
    ms: np.ndarray
    d_e: np.ndarray
    d_s: np.ndarray
    gap: np.ndarray          # d_s - d_e = m - d_e on the sphere
    slope: float
    fitted_c: float          # max gap / m^3 over fitted pairs
    n_fit: int
    excluded_ms: list[float] = field(default_factory=list)
    chord_ok: bool = False
    gap_ok: bool = False
    slope_ok: bool = False

    @property
    def passed(self) -> bool:
        return self.chord_ok and self.gap_ok and self.slope_ok

    CSV_HEADER = "m,d_E,d_S,gap"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for m, de, ds, g in zip(self.ms, self.d_e, self.d_s, self.gap):
            lines.append(f"{m:.17g},{de:.17g},{ds:.17g},{g:.17g}")
        return "\n".join(lines) + "\n"

    def summary_json(self) -> str:
        return json.dumps({
            "radius": self.radius,
            "n_pairs": int(self.ms.size),
            "n_fit": self.n_fit,
            "excluded_ms": self.excluded_ms,
            "slope": self.slope,
            "fitted_c": self.fitted_c,
            "chord_ok": self.chord_ok,
            "gap_ok": self.gap_ok,
            "slope_ok": self.slope_ok,
            "passed": self.passed,
        }, sort_keys=True, indent=2) + "\n"


def verify_theorem1(sample: SpherePairSample,
                    fit_window: tuple[float, float] = FIT_WINDOW,
                    noise_floor: float = NOISE_FLOOR,
                    slope_range: tuple[float, float] = SLOPE_RANGE) -> BoundReport:
    """Chord never exceeds arc; the deficit follows the cubic error law.

    The sphere is its own osculating sphere, so d_S is the geodesic m
    itself and the arc-minus-chord gap isolates the Euclidean error term.
    Pairs whose gap sits below the 64-bit noise floor are excluded from
    the log-log fit and recorded.
    """
    sample.validate()
    m = sample.ms
    d_e = np.linalg.norm(sample.xs - sample.ys, axis=1)
    d_s = m.copy()
    gap = d_s - d_e
    lo, hi = fit_window
    in_window = (m >= lo) & (m <= hi)
    excluded = gap < noise_floor  # cancellation noise; also guards log of <= 0
    fit = in_window & ~excluded
    if int(fit.sum()) >= 2:
        slope = float(np.polyfit(np.log(m[fit]), np.log(gap[fit]), 1)[0])
    else:
        slope = float("nan")
    fitted_c = float((gap[fit] / m[fit] ** 3).max()) if fit.any() else float("nan")
    report = BoundReport(
        radius=sample.radius, ms=m, d_e=d_e, d_s=d_s, gap=gap,
        slope=slope, fitted_c=fitted_c, n_fit=int(fit.sum()),
        excluded_ms=[float(v) for v in m[excluded]],
        chord_ok=bool((d_e <= m + 1e-12).all()),
        gap_ok=bool((gap >= -1e-12).all()),
        slope_ok=bool(np.isfinite(slope) and slope_range[0] <= slope <= slope_range[1]),
    )
    return report


# -- kernel positive-definiteness ------------------------------------------------

@dataclass
class PsdReport:
    kind: str
    n_points: int
    min_eigenvalue: float
    threshold: float = PSD_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.min_eigenvalue >= self.threshold


def verify_psd(points, kind: str = "euclidean",
               cfg: KernelConfig | None = None) -> PsdReport:
    """Min eigenvalue of the exact kernel Gram matrix on the given points."""
    cfg = cfg or KernelConfig()
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DataError(f"verify_psd: need a nonempty (n, d) array, got {pts.shape}")
    n = pts.shape[0]
    if n > MAX_PSD_POINTS:
        raise DataError(f"verify_psd: use at most {MAX_PSD_POINTS} points, got {n}")
    if kind == "spherical":
        norms = np.linalg.norm(pts - (cfg.center if cfg.center is not None else 0.0),
                               axis=1)
        if np.abs(norms - cfg.radius).max() > 1e-8:
            raise DataError("verify_psd: spherical kind needs points on the cfg sphere")
    gram = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            gram[i, j] = gram[j, i] = kernel_eval(pts[i], pts[j], kind, cfg)
    return PsdReport(kind=kind, n_points=n,
                     min_eigenvalue=float(np.linalg.eigvalsh(gram).min()))


# -- 1-NN perturbation ------------------------------------------------------------

@dataclass
class FlipReport:
    n_points: int
    nn_euclidean: list[int]
    nn_spherical: list[int]
    flips: list[int]

    @property
    def flip_fraction(self) -> float:
        return len(self.flips) / self.n_points


def _nearest_rows(f: np.ndarray) -> list[int]:
    sq = (f * f).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    np.fill_diagonal(d2, np.inf)
    return [int(i) for i in d2.argmin(axis=1)]  # argmin takes the lowest tied index


def nn_perturbation_demo(points, landmarks,
                         cfg: KernelConfig | None = None) -> FlipReport:
    """1-NN under the Euclidean feature map vs under the spherical one.

    The fraction of points whose neighbor changes is the concrete
    perturbation the metric swap injects; identity multiplier mode keeps
    both maps on the raw kernel columns.
    """
    cfg = cfg or KernelConfig()
    pts = np.asarray(points, dtype=np.float64)
    lms = np.asarray(landmarks, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DataError(f"nn_perturbation_demo: need >= 2 points, got {pts.shape}")
    if lms.ndim != 2 or lms.shape[1] != pts.shape[1]:
        raise DataError(
            f"nn_perturbation_demo: landmarks {lms.shape} do not match points {pts.shape}")
    f_e = nystrom_map(pts, lms, "euclidean", cfg).data
    f_s = nystrom_map(pts, lms, "spherical", cfg).data
    nn_e = _nearest_rows(f_e)
    nn_s = _nearest_rows(f_s)
    flips = [i for i, (a, b) in enumerate(zip(nn_e, nn_s)) if a != b]
    return FlipReport(n_points=pts.shape[0], nn_euclidean=nn_e,
                      nn_spherical=nn_s, flips=flips)
