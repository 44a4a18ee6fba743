"""Per-fingertip wrench estimation from marker displacements.

Calibration fits an affine map (ridge-regularized on the linear part only)
from flattened pixel displacements to the applied 6D wrench:

    minimize  sum_i || A d_i + b - w_i ||^2  +  lambda ||A||_F^2

solved by regularized normal equations.  The bias b is unpenalized so the
zero-load reading is absorbed, mirroring the tare step of a real force
sensor.  The simulated plant is linear in the small-strain regime, so this
estimator class recovers in-span wrenches essentially exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import Wrench6D
from .errors import (CorruptFileError, DegenerateDataError,
                     InsufficientDataError, RangeError, ShapeError,
                     VersionError)
from .fingertip import CameraModel, LatticeModel, MarkerSet, render_observation

MIN_SAMPLES = 8
DEFAULT_LAMBDA = 1e-6

# Calibration load scale.  The camera projection divides by depth, so the
# pixel response is linear only to first order in the displacement; keeping
# calibration loads small keeps the quadratic term below the 1e-6 recovery
# tolerance on the default 800 N/m lattice.
DEFAULT_FORCE_SCALE = 0.01    # newtons
DEFAULT_TORQUE_SCALE = 1e-4   # newton-meters

MODEL_MAGIC = b"MGCE"
MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class CalibrationSet:
    """Zero-load reference plus (observation, applied wrench) samples."""

    reference: MarkerSet
    samples: tuple[tuple[MarkerSet, Wrench6D], ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        m = len(self.reference)
        for ms, _ in self.samples:
            if len(ms) != m:
                raise ShapeError(
                    f"sample has {len(ms)} markers, reference has {m}")

    def displacement_matrix(self) -> np.ndarray:
        """(n, 2M) stacked vec(markers_i - reference)."""
        ref = self.reference.pixels.ravel()
        return np.stack([ms.pixels.ravel() - ref for ms, _ in self.samples])

    def wrench_matrix(self) -> np.ndarray:
        return np.stack([w.as_vector() for _, w in self.samples])


@dataclass(frozen=True, eq=False)
class EstimatorModel:
    """Fitted affine map; immutable and safe to share across threads."""

    A: np.ndarray                 # (6, 2M)
    b: np.ndarray                 # (6,)
    lam: float
    condition_number: float
    reference: MarkerSet

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(6)
        if A.ndim != 2 or A.shape[0] != 6 or A.shape[1] != 2 * len(self.reference):
            raise ShapeError(f"A shape {A.shape} inconsistent with reference")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise RangeError("model entries must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def marker_count(self) -> int:
        return len(self.reference)


def calibrate(cs: CalibrationSet, lam: float = DEFAULT_LAMBDA) -> EstimatorModel:
    """Fit the estimator by regularized normal equations."""
    if lam < 0.0:
        raise RangeError("lambda must be >= 0")
    n = len(cs.samples)
    if n < MIN_SAMPLES:
        raise InsufficientDataError(f"need >= {MIN_SAMPLES} samples, got {n}")
    D = cs.displacement_matrix()
    if float(np.ptp(D, axis=0).max(initial=0.0)) == 0.0:
        raise DegenerateDataError("all displacement vectors are identical")
    W = cs.wrench_matrix()

    X = np.hstack([D, np.ones((n, 1))])          # (n, 2M+1), bias column last
    G = X.T @ X
    reg = np.eye(G.shape[0]) * lam
    reg[-1, -1] = 0.0                            # bias unpenalized
    G = G + reg
    rhs = X.T @ W
    cond = float(np.linalg.cond(G))
    try:
        theta = np.linalg.solve(G, rhs)          # (2M+1, 6)
    except np.linalg.LinAlgError:
        theta, *_ = np.linalg.lstsq(G, rhs, rcond=None)
    return EstimatorModel(A=theta[:-1].T, b=theta[-1], lam=lam,
                          condition_number=cond, reference=cs.reference)


def estimate(m: EstimatorModel, current: MarkerSet) -> Wrench6D:
    """w = A vec(current - reference) + b."""
    if len(current) != m.marker_count:
        raise ShapeError(
            f"marker count {len(current)} != model's {m.marker_count}")
    d = current.pixels.ravel() - m.reference.pixels.ravel()
    return Wrench6D.from_vector(m.A @ d + m.b)


@dataclass(frozen=True)
class CrossValReport:
    per_axis_rmse: tuple[float, ...]  # fx fy fz tx ty tz
    folds: int
    lam: float
    n_samples: int


def cross_validate(cs: CalibrationSet, folds: int,
                   lam: float = DEFAULT_LAMBDA) -> CrossValReport:
    """Deterministic k-fold CV: sample i goes to fold i mod folds."""
    n = len(cs.samples)
    if folds < 2:
        raise RangeError("folds must be >= 2")
    if n < folds:
        raise InsufficientDataError(f"{n} samples < {folds} folds")
    sq_err = np.zeros(6)
    count = 0
    for f in range(folds):
        train = [s for i, s in enumerate(cs.samples) if i % folds != f]
        test = [s for i, s in enumerate(cs.samples) if i % folds == f]
        model = calibrate(CalibrationSet(cs.reference, tuple(train)), lam)
        for ms, w in test:
            err = estimate(model, ms).as_vector() - w.as_vector()
            sq_err += err**2
            count += 1
    rmse = np.sqrt(sq_err / max(count, 1))
    return CrossValReport(per_axis_rmse=tuple(float(v) for v in rmse),
                          folds=folds, lam=lam, n_samples=n)


# ---------------------------------------------------------------------------
# calibration data generation against the lattice sim

def calibration_wrench_schedule(n: int = 200,
                                force_scale: float = DEFAULT_FORCE_SCALE,
                                torque_scale: float = DEFAULT_TORQUE_SCALE,
                                seed: int = 0) -> list[Wrench6D]:
    """Axis-aligned loads at 4 magnitudes plus random in-span combinations.

    The 6 x 4 pure loads guarantee all wrench DOFs are excited; the random
    tail fills out the sample count requested.
    """
    if n < 24:
        raise RangeError("schedule needs n >= 24")
    scales = np.array([force_scale] * 3 + [torque_scale] * 3)
    loads: list[Wrench6D] = []
    for axis in range(6):
        for mag in (0.25, 0.5, 0.75, 1.0):
            v = np.zeros(6)
            v[axis] = mag * scales[axis]
            loads.append(Wrench6D.from_vector(v))
    rng = np.random.default_rng(seed)
    while len(loads) < n:
        loads.append(Wrench6D.from_vector(rng.uniform(-1.0, 1.0, 6) * scales))
    return loads


def build_calibration_set(m: LatticeModel, c: CameraModel,
                          wrenches: list[Wrench6D],
                          noise_sigma: float = 0.0,
                          seed: int = 0) -> CalibrationSet:
    """Render the schedule through the fingertip sim (reference is the
    noiseless zero-load observation; sample i uses noise stream seed+i+1)."""
    reference = render_observation(m, Wrench6D.zero(), c, 0.0)
    samples = []
    for i, w in enumerate(wrenches):
        ms = render_observation(m, w, c, noise_sigma, seed=seed + i + 1)
        samples.append((ms, w))
    return CalibrationSet(reference=reference, samples=tuple(samples))


def save_calibration_set(cs: CalibrationSet, path) -> None:
    """Calibration capture as npz: reference + stacked samples."""
    np.savez(path,
             reference=cs.reference.pixels,
             reference_ts=np.array([cs.reference.timestamp], dtype=np.int64),
             samples=np.stack([ms.pixels for ms, _ in cs.samples]),
             sample_ts=np.array([ms.timestamp for ms, _ in cs.samples],
                                dtype=np.int64),
             wrenches=np.stack([w.as_vector() for _, w in cs.samples]))


def load_calibration_set(path) -> CalibrationSet:
    z = np.load(path)
    reference = MarkerSet(pixels=z["reference"],
                          timestamp=int(z["reference_ts"][0]))
    samples = tuple(
        (MarkerSet(pixels=px, timestamp=int(ts)), Wrench6D.from_vector(w))
        for px, ts, w in zip(z["samples"], z["sample_ts"], z["wrenches"]))
    return CalibrationSet(reference=reference, samples=samples)


# ---------------------------------------------------------------------------
# model persistence: magic "MGCE" | version u16 | M u32 | A | b | lambda |
# condition | reference ts i64 | reference pixels (2M f64), little-endian

_MODEL_HDR = struct.Struct("<4sHI")


def save_model(m: EstimatorModel, path) -> None:
    M = m.marker_count
    blob = bytearray()
    blob += _MODEL_HDR.pack(MODEL_MAGIC, MODEL_VERSION, M)
    blob += np.ascontiguousarray(m.A, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(m.b, dtype="<f8").tobytes()
    blob += struct.pack("<dd", m.lam, m.condition_number)
    blob += struct.pack("<q", m.reference.timestamp)
    blob += np.ascontiguousarray(m.reference.pixels, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path) -> EstimatorModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _MODEL_HDR.size:
        raise CorruptFileError("model file shorter than header", byte_offset=0)
    magic, version, M = _MODEL_HDR.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise CorruptFileError(f"bad model magic {magic!r}", byte_offset=0)
    if version != MODEL_VERSION:
        raise VersionError(f"unsupported model version {version}")
    need = _MODEL_HDR.size + 8 * (6 * 2 * M + 6 + 2) + 8 + 8 * 2 * M
    if len(blob) != need:
        raise CorruptFileError(
            f"model file length {len(blob)} != expected {need}",
            byte_offset=min(len(blob), need))
    off = _MODEL_HDR.size
    A = np.frombuffer(blob, dtype="<f8", count=6 * 2 * M, offset=off).reshape(6, 2 * M).copy()
    off += 8 * 6 * 2 * M
    b = np.frombuffer(blob, dtype="<f8", count=6, offset=off).copy()
    off += 48
    lam, cond = struct.unpack_from("<dd", blob, off)
    off += 16
    (ts,) = struct.unpack_from("<q", blob, off)
    off += 8
    ref = np.frombuffer(blob, dtype="<f8", count=2 * M, offset=off).reshape(M, 2).copy()
    return EstimatorModel(A=A, b=b, lam=lam, condition_number=cond,
                          reference=MarkerSet(pixels=ref, timestamp=ts))
