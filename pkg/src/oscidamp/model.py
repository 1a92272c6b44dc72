"""Oscillator-bank state-space models and observability/controllability tests.

The central object is a bank of ``d`` independent unit-mass oscillators with
distinct positive frequencies, driven by one scalar force bounded by 1:

    x' = A x + B u,   |u| <= 1,

with ``A`` block diagonal, blocks ``[[0, 1], [-w_j^2, 0]]``, and ``B``
stacking ``(0, 1)`` per block. All constructors validate the structural
invariants (purely imaginary spectrum, diagonalizability, Kalman rank).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ConfigError,
    DimensionMismatch,
    DuplicateFrequency,
    EmptyFrequencyList,
    NonPositiveFrequency,
)

RANK_RTOL = 1e-8
DUPLICATE_TOL = 1e-9


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class OscillatorSystem:
    """Validated oscillator bank. Arrays are read-only; treat as immutable."""

    frequencies: tuple
    A: np.ndarray
    B: np.ndarray
    control_bound: float = 1.0

    @property
    def dof(self) -> int:
        return len(self.frequencies)

    @property
    def dim(self) -> int:
        return 2 * len(self.frequencies)


@dataclass(frozen=True)
class ObservablePair:
    """Matrices (A, C) of an observed linear system x' = A x, y = C x."""

    A: np.ndarray
    C: np.ndarray
    observable: bool


def matrix_rank_svd(m, rtol=RANK_RTOL):
    """Rank by singular-value thresholding at rtol * largest singular value."""
    s = np.linalg.svd(np.atleast_2d(m), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def controllability_matrix(A, B):
    A = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float).reshape(-1)
    cols = [b]
    for _ in range(A.shape[0] - 1):
        cols.append(A @ cols[-1])
    return np.column_stack(cols)


def observability_matrix(A, C):
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    rows = [C]
    for _ in range(A.shape[0] - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def build_oscillator_system(frequencies) -> OscillatorSystem:
    """Build and validate the block-oscillator system for given frequencies.

    Raises
    ------
    EmptyFrequencyList, NonPositiveFrequency, DuplicateFrequency
        A duplicated frequency makes the Kalman matrix rank-deficient, so the
        bank cannot be damped by a single common force.
    """
    freqs = [float(w) for w in frequencies]
    if len(freqs) == 0:
        raise EmptyFrequencyList("at least one frequency is required")
    if any(w <= 0.0 for w in freqs):
        raise NonPositiveFrequency(f"frequencies must be > 0, got {freqs}")
    for i in range(len(freqs)):
        for j in range(i + 1, len(freqs)):
            if abs(freqs[i] - freqs[j]) < DUPLICATE_TOL:
                raise DuplicateFrequency(
                    f"frequencies {freqs[i]} and {freqs[j]} coincide within "
                    f"{DUPLICATE_TOL}; the pair is uncontrollable"
                )
    d = len(freqs)
    A = np.zeros((2 * d, 2 * d))
    B = np.zeros(2 * d)
    for j, w in enumerate(freqs):
        A[2 * j, 2 * j + 1] = 1.0
        A[2 * j + 1, 2 * j] = -w * w
        B[2 * j + 1] = 1.0

    # structural invariants
    eig = np.linalg.eigvals(A)
    if np.max(np.abs(eig.real)) > 1e-10:
        raise ValueError("spectrum of A is not purely imaginary")
    _, vecs = np.linalg.eig(A)
    if matrix_rank_svd(vecs) != 2 * d:
        raise ValueError("A is not diagonalizable")
    if matrix_rank_svd(controllability_matrix(A, B)) != 2 * d:
        raise DuplicateFrequency("Kalman controllability matrix is rank-deficient")
    return OscillatorSystem(frequencies=tuple(freqs), A=_readonly(A), B=_readonly(B))


def adjoint_pair(system: OscillatorSystem) -> ObservablePair:
    """Observed pair (-A^T, B^T) governing the momentum evolution.

    By Kalman duality its observability certificate coincides with the
    controllability of the underlying bank.
    """
    A = -system.A.T
    C = system.B.reshape(1, -1)
    pair = ObservablePair(A=_readonly(A), C=_readonly(C), observable=False)
    obs = check_observability(pair)
    return ObservablePair(A=pair.A, C=pair.C, observable=obs)


def check_observability(pair: ObservablePair) -> bool:
    """Rank test on the stacked observability matrix [C; CA; ...]."""
    A = np.asarray(pair.A, dtype=float)
    C = np.atleast_2d(np.asarray(pair.C, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A must be square, got shape {A.shape}")
    if C.shape[1] != A.shape[0]:
        raise DimensionMismatch(
            f"C has {C.shape[1]} columns but A is {A.shape[0]}x{A.shape[0]}"
        )
    return matrix_rank_svd(observability_matrix(A, C)) == A.shape[0]


def flow_matrix(system: OscillatorSystem, t: float) -> np.ndarray:
    """exp(t A) via exact per-block rotations (cheap and exact)."""
    d = system.dof
    out = np.zeros((2 * d, 2 * d))
    for j, w in enumerate(system.frequencies):
        c, s = np.cos(w * t), np.sin(w * t)
        out[2 * j, 2 * j] = c
        out[2 * j, 2 * j + 1] = s / w
        out[2 * j + 1, 2 * j] = -w * s
        out[2 * j + 1, 2 * j + 1] = c
    return out


def generic_expm(M, t=1.0):
    """Scaling-and-squaring matrix exponential for arbitrary square matrices."""
    return scipy.linalg.expm(t * np.asarray(M, dtype=float))


def forced_flow_offset(system: OscillatorSystem, t: float) -> np.ndarray:
    """integral_0^t exp(s A) B ds, closed form per block (constant-u steps)."""
    d = system.dof
    out = np.zeros(2 * d)
    for j, w in enumerate(system.frequencies):
        out[2 * j] = (1.0 - np.cos(w * t)) / (w * w)
        out[2 * j + 1] = np.sin(w * t) / w
    return out


def system_from_json(source) -> OscillatorSystem:
    """Ingest {"frequencies": [...]} from a dict, JSON string, or file path."""
    if isinstance(source, dict):
        doc = source
    else:
        text = source
        if "{" not in str(source):
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        doc = json.loads(text)
    unknown = set(doc) - {"frequencies"}
    if unknown:
        raise ConfigError(f"unknown system keys: {sorted(unknown)}")
    if "frequencies" not in doc:
        raise EmptyFrequencyList("system document lacks 'frequencies'")
    return build_oscillator_system(doc["frequencies"])
