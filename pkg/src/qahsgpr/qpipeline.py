"""Quantum-assisted reduced-rank GP regression on the statevector simulator.

Pipeline for one dataset:

1. ``encode_feature_state`` loads X / ||X||_F into registers ``m`` (columns)
   and ``n`` (rows). Its reduced state on ``m`` is X^T X / ||X||_F^2.
2. ``qpca_phase_estimation`` runs phase estimation of exp(-i rho t) on ``m``,
   writing lambda_r^2 (normalized squared singular values) into the ``eig``
   register as ``round(2^tau lambda_r^2 / delta_R)``.
3. ``dedup_eigen_peaks`` merges duplicate readout peaks, ``select_lines``
   applies the rank rule.
4. Mean: a register-conditioned rotation with amplitude c1 / (l^2 + s^2),
   uncompute, then a Hadamard test against |X*>|y>|0>|1>.
5. Variance: rotation with amplitude c2 / (l sqrt(l^2 + s^2)), postselect the
   ancilla on 1, then a swap test of the ``m`` register against |X*>.

Everything inside the circuits is normalized: singular values are those of
X / ||X||_F and the noise enters as ``sigma_hat_sq = sigma^2 / ||X||_F^2``.
``rescale_mean`` and ``rescale_variance`` map the measured probabilities back
to output units.

Rotations are "snapped" to spectral lines: every eigenvalue-register bin is
assigned to its nearest detected peak (circular distance) and rotated by that
peak's amplitude, or not at all if the peak was discarded by the rank rule.
This realizes rank truncation and keeps every rotation amplitude <= 1.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import qsim
from .hsgpr import RANK_THRESHOLD, BasisExpansion, Dataset, PosteriorEstimate, ReducedSVD, reduced_svd
from .qsim import GateOp, QuantumState, RegisterLayout

log = logging.getLogger(__name__)

MODES = ("analytic", "shots")


class ConfigError(ValueError):
    pass


class RotationBoundError(ValueError):
    """A conditional rotation would need an amplitude above 1."""


@dataclass(frozen=True)
class QpcaConfig:
    """Phase-estimation settings.

    ``delta_R=None`` means ``delta_margin * lambda_max^2`` taken from the
    classical SVD; call ``resolved`` before use.
    """

    tau: int = 8
    delta_R: float | None = None
    delta_margin: float = 1.2
    shots: int = 1_000_000
    seed: int = 0
    mode: str = "analytic"
    min_peak_prob: float = 1e-3
    peak_window: int = 2
    overlap_threshold: float = 0.95

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "shots" and self.shots < 1:
            raise ConfigError("shots must be >= 1 in shots mode")
        if self.delta_R is not None and self.delta_R <= 0:
            raise ConfigError("delta_R must be > 0")

    @property
    def K(self) -> int:
        return 2**self.tau

    @property
    def t(self) -> float:
        if self.delta_R is None:
            raise ConfigError("delta_R unresolved; call resolved() first")
        return 2 * np.pi / self.delta_R

    def resolved(self, lam_max_sq: float) -> QpcaConfig:
        cfg = self if self.delta_R is not None else replace(self, delta_R=self.delta_margin * lam_max_sq)
        if not cfg.delta_R > lam_max_sq:
            raise ConfigError(
                f"delta_R={cfg.delta_R} must exceed the largest eigenvalue {lam_max_sq} (phase aliasing)"
            )
        return cfg

    def estimate(self, register_value) -> float:
        return register_value * self.delta_R / self.K


@dataclass
class SpectralPeak:
    register_value: int
    estimate: float
    weight: float
    peak_prob: float
    state: np.ndarray | None = None  # conditioned density matrix of the m register
    multiplicity: int = 1
    merged_from: tuple[int, ...] = ()


@dataclass
class EigenvalueReadout:
    peaks: list[SpectralPeak]
    tau: int
    delta_R: float
    distribution: np.ndarray
    audit: list[str] = field(default_factory=list)

    @property
    def estimates(self) -> np.ndarray:
        return np.array([p.estimate for p in self.peaks])

    @property
    def register_values(self) -> list[int]:
        return [p.register_value for p in self.peaks]


@dataclass(frozen=True)
class RotationConstants:
    c1: float
    c2: float
    sigma_hat_sq: float

    def mean_amplitude(self, lam_sq):
        return self.c1 / (np.asarray(lam_sq) + self.sigma_hat_sq)

    def variance_amplitude(self, lam_sq):
        lam_sq = np.asarray(lam_sq)
        return self.c2 / (np.sqrt(lam_sq) * np.sqrt(lam_sq + self.sigma_hat_sq))


@dataclass
class QuantumPosterior:
    test_inputs: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    p0_hadamard: np.ndarray
    p1_ancilla: float
    p0_swap: np.ndarray
    norms: dict
    consts: RotationConstants
    readout: EigenvalueReadout
    retained: list[SpectralPeak]
    mode: str
    config: QpcaConfig

    @property
    def rank(self) -> int:
        return sum(p.multiplicity for p in self.retained)

    def to_estimate(self) -> PosteriorEstimate:
        return PosteriorEstimate(
            self.test_inputs, self.means, self.variances, f"quantum-{self.mode}", {"R": self.rank}
        )


def _pow2_width(d: int) -> int:
    return max(1, int(np.ceil(np.log2(d))))


def pad_matrix(X) -> np.ndarray:
    """Zero-pad rows and columns up to powers of two (at least 2 each)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, M = X.shape
    out = np.zeros((2 ** _pow2_width(N), 2 ** _pow2_width(M)))
    out[:N, :M] = X
    return out


def pad_vector(v, width: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    out = np.zeros(2**width)
    out[: v.size] = v
    return out


def encode_feature_state(X) -> QuantumState:
    """|psi_X> = sum_{m,n} x_n^m |m>|n> / ||X||_F with X of shape (N, M)."""
    Xp = pad_matrix(X)
    if not np.any(Xp):
        raise ValueError("cannot encode the zero matrix")
    N, M = Xp.shape
    layout = RegisterLayout((("m", _pow2_width(M)), ("n", _pow2_width(N))))
    state = qsim.init_state(layout)
    return qsim.load_amplitudes(state, ["m", "n"], Xp.T.ravel())


def extend_state(state: QuantumState, *registers: tuple[str, int]) -> QuantumState:
    """Append registers in |0> after the existing ones."""
    layout = state.layout.extended(*registers)
    layout.check_ceiling()
    extra = sum(k for _, k in registers)
    amps = np.zeros((state.amplitudes.size, 2**extra), dtype=complex)
    amps[:, 0] = state.amplitudes
    return QuantumState(amps.reshape(-1), layout)


def evolution_unitary(rho, t: float) -> np.ndarray:
    """exp(-i rho t) via the eigendecomposition of a Hermitian ``rho``."""
    rho = np.asarray(rho, dtype=complex)
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("rho is not Hermitian")
    w, V = np.linalg.eigh(rho)
    return (V * np.exp(-1j * w * t)) @ V.conj().T


def qpe_circuit(layout: RegisterLayout, rho, t: float) -> list[GateOp]:
    """Phase estimation of exp(-i rho t) on ``m`` into ``eig``.

    Qubit i of ``eig`` (big-endian weight 2^(tau-1-i)) controls the matching
    power. The forward QFT then maps the kicked-back phase exp(-2 pi i phi j)
    to register value ``round(2^tau phi)``, phi = lambda^2 t / (2 pi).
    """
    m_q = layout.qubits("m")
    e_q = layout.qubits("eig")
    tau = len(e_q)
    w, V = np.linalg.eigh(np.asarray(rho, dtype=complex))
    gates = [qsim.h(q) for q in e_q]
    for i, q in enumerate(e_q):
        power = 2 ** (tau - 1 - i)
        U = (V * np.exp(-1j * w * t * power)) @ V.conj().T
        gates.append(GateOp("UNITARY", tuple(m_q), matrix=U, controls=(q,)))
    gates.append(qsim.qft_gate(e_q))
    return gates


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 of two densities."""
    w, V = np.linalg.eigh(rho)
    sq = (V * np.sqrt(np.clip(w, 0, None))) @ V.conj().T
    ev = np.linalg.eigvalsh(sq @ sigma @ sq)
    return float(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2)


def _circ_dist(a, b, K):
    d = np.abs(np.asarray(a) - np.asarray(b)) % K
    return np.minimum(d, K - d)


def _find_peaks(probs: np.ndarray, min_prob: float, window: int) -> list[int]:
    K = probs.size
    peaks = []
    for k in np.flatnonzero(probs >= min_prob):
        idx = (k + np.arange(-window, window + 1)) % K
        if probs[k] >= probs[idx].max() * (1 - 1e-9):
            peaks.append(int(k))
    return peaks


def _assign_bins(peak_bins: list[int], K: int) -> np.ndarray:
    """Index of the nearest peak (circular distance) for every bin."""
    bins = np.arange(K)
    d = np.stack([_circ_dist(bins, p, K) for p in peak_bins])
    return np.argmin(d, axis=0)


def _conditioned_m_state(state: QuantumState, k: int) -> np.ndarray | None:
    """Density of ``m`` given eig register value ``k`` (layout m, n, eig)."""
    dm = 2 ** state.layout.width("m")
    K = 2 ** state.layout.width("eig")
    a = state.amplitudes.reshape(dm, -1, K)[:, :, k]
    rho = a @ a.conj().T
    tr = np.real(np.trace(rho))
    return rho / tr if tr > 0 else None


def qpca_phase_estimation(psi_X: QuantumState, cfg: QpcaConfig) -> tuple[QuantumState, EigenvalueReadout]:
    """Run phase estimation on the encoded state and read the eigenvalue register.

    In analytic mode the register distribution is exact; in shots mode it is
    the empirical histogram of ``cfg.shots`` samples. Every bin's probability
    mass is attributed to its nearest peak. The conditioned ``m`` states used
    later for de-duplication are read from the statevector.
    """
    rho = qsim.partial_trace(psi_X, ["m"])
    cfg = cfg.resolved(float(np.max(np.linalg.eigvalsh(rho))))
    state = extend_state(psi_X, ("eig", cfg.tau))
    state = qsim.run(state, qpe_circuit(state.layout, rho, cfg.t))
    probs = state.register_probabilities("eig")
    if cfg.mode == "shots":
        counts = qsim.measure(state, state.layout.qubits("eig"), cfg.shots, cfg.seed)
        emp = np.zeros(cfg.K)
        for bits, c in counts.counts.items():
            emp[int(bits, 2)] = c / cfg.shots
        probs = emp
    peak_bins = _find_peaks(probs, cfg.min_peak_prob, cfg.peak_window)
    if not peak_bins:
        raise ValueError(f"no eigenvalue-register peak above probability {cfg.min_peak_prob}")
    owner = _assign_bins(peak_bins, cfg.K)
    peaks = []
    for i, k in enumerate(peak_bins):
        peaks.append(
            SpectralPeak(
                register_value=k,
                estimate=cfg.estimate(k),
                weight=float(probs[owner == i].sum()),
                peak_prob=float(probs[k]),
                state=_conditioned_m_state(state, k),
                merged_from=(k,),
            )
        )
    for p in peaks:
        if p.state is not None:
            p.multiplicity = max(1, int(np.sum(np.linalg.eigvalsh(p.state) > 0.1)))
    readout = EigenvalueReadout(peaks, cfg.tau, cfg.delta_R, probs, [f"raw peaks at bins {peak_bins}"])
    return state, readout


def dedup_eigen_peaks(readout: EigenvalueReadout, overlap_threshold: float = 0.95, max_gap: int = 1) -> EigenvalueReadout:
    """Merge peaks that are register neighbours with near-identical m states.

    The merged peak keeps the heavier register value; its estimate becomes the
    probability-weighted mean of the merged bins, and weights add up.
    """
    if not readout.peaks:
        raise ValueError("empty readout")
    K = 2**readout.tau
    peaks = sorted(readout.peaks, key=lambda p: p.register_value)
    audit = list(readout.audit)
    merged = [peaks[0]]
    for p in peaks[1:]:
        q = merged[-1]
        adjacent = _circ_dist(p.register_value, q.register_value, K) <= max_gap
        if adjacent and p.state is not None and q.state is not None:
            f = fidelity(p.state, q.state)
            if f > overlap_threshold:
                merged[-1] = _merge(q, p, readout.delta_R, K)
                audit.append(f"merged bins {q.merged_from} + {p.merged_from} (overlap {f:.4f})")
                continue
            audit.append(f"kept bins {q.register_value}, {p.register_value} apart (overlap {f:.4f})")
        merged.append(p)
    # wrap-around neighbours (last bin and bin 0)
    if len(merged) > 1:
        first, last = merged[0], merged[-1]
        if _circ_dist(first.register_value, last.register_value, K) <= max_gap and first.state is not None and last.state is not None:
            f = fidelity(first.state, last.state)
            if f > overlap_threshold:
                merged = [_merge(last, first, readout.delta_R, K)] + merged[1:-1]
                audit.append(f"merged wrap-around bins {last.merged_from} + {first.merged_from}")
    return replace(readout, peaks=merged, audit=audit)


def _merge(a: SpectralPeak, b: SpectralPeak, delta_R: float, K: int) -> SpectralPeak:
    heavy, light = (a, b) if a.peak_prob >= b.peak_prob else (b, a)
    # unwrap the light bin next to the heavy one before averaging
    lv = light.register_value
    if abs(lv - heavy.register_value) > K // 2:
        lv += K if lv < heavy.register_value else -K
    tot = heavy.peak_prob + light.peak_prob
    centre = (heavy.register_value * heavy.peak_prob + lv * light.peak_prob) / tot
    state = None
    if heavy.state is not None and light.state is not None:
        state = (heavy.state * heavy.peak_prob + light.state * light.peak_prob) / tot
    return SpectralPeak(
        register_value=heavy.register_value,
        estimate=(centre % K) * delta_R / K,
        weight=heavy.weight + light.weight,
        peak_prob=heavy.peak_prob,
        state=state,
        multiplicity=max(heavy.multiplicity, light.multiplicity),
        merged_from=heavy.merged_from + light.merged_from,
    )


def select_lines(readout: EigenvalueReadout, R: int | None = None, threshold: float = RANK_THRESHOLD) -> list[SpectralPeak]:
    """Dominant spectral lines: the top-R estimates, or all estimates above ``threshold``."""
    ordered = sorted(readout.peaks, key=lambda p: p.estimate, reverse=True)
    if R is None:
        kept = [p for p in ordered if p.estimate > threshold]
    else:
        kept, total = [], 0
        for p in ordered:
            if total >= R:
                break
            kept.append(p)
            total += p.multiplicity
        if total < R:
            raise ConfigError(
                f"requested rank {R} but only {total} spectral lines were resolved; "
                f"lower min_peak_prob or raise tau"
            )
    if not kept:
        raise ConfigError("no retained rank")
    if any(p.estimate <= 0 for p in kept):
        raise ConfigError("a retained line sits in register bin 0; its eigenvalue is unresolved")
    return kept


def read_spectrum(psi_X: QuantumState, cfg: QpcaConfig) -> tuple[QuantumState, EigenvalueReadout]:
    state, raw = qpca_phase_estimation(psi_X, cfg)
    return state, dedup_eigen_peaks(raw, cfg.overlap_threshold)


def rotation_constants(svd: ReducedSVD, sigma: float, eigenvalues=None) -> RotationConstants:
    """c1, c2 as minima over the retained lines; sigma enters normalized.

    ``eigenvalues`` overrides the normalized squared singular values of ``svd``
    (the pipeline passes its register estimates so the bound holds for the
    values actually rotated on).
    """
    lam_sq = svd.normalized_sq if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
    if lam_sq.size == 0:
        raise ConfigError("retained rank must be >= 1")
    s2 = sigma**2 / svd.frobenius_norm**2
    c1 = float(np.min(lam_sq + s2))
    c2 = float(np.min(np.sqrt(lam_sq) * np.sqrt(lam_sq + s2)))
    return RotationConstants(c1=c1, c2=c2, sigma_hat_sq=float(s2))


def rotation_table(readout: EigenvalueReadout, retained: list[SpectralPeak], amplitude) -> np.ndarray:
    """Rotation amplitude for every eigenvalue-register bin.

    Bins owned by a retained line get ``amplitude(line.estimate)``, the rest 0.
    Bin 0 always acts as a discarded line.
    """
    K = 2**readout.tau
    keep = {id(p) for p in retained}
    per_peak = [float(amplitude(p.estimate)) if id(p) in keep else 0.0 for p in readout.peaks]
    bins = readout.register_values
    if 0 not in bins:
        # null line: unresolved tiny eigenvalues and padding sit near bin 0
        bins = bins + [0]
        per_peak.append(0.0)
    amps = np.asarray(per_peak)[_assign_bins(bins, K)]
    if np.any(amps > 1 + 1e-12):
        log.error("rotation amplitude %.6g exceeds 1", amps.max())
        raise RotationBoundError(f"rotation amplitude {amps.max()} > 1")
    return np.clip(amps, 0.0, 1.0)


def _pipeline_layout(psi_X: QuantumState, tau: int) -> RegisterLayout:
    layout = psi_X.layout.extended(("eig", tau), ("anc", 1))
    layout.check_ceiling()
    return layout


def _rotated_qpe(psi_X: QuantumState, cfg: QpcaConfig, amps: np.ndarray) -> tuple[RegisterLayout, list[GateOp], list[GateOp]]:
    layout = _pipeline_layout(psi_X, cfg.tau)
    rho = qsim.partial_trace(psi_X, ["m"])
    mn = layout.qubits("m") + layout.qubits("n")
    prep = [qsim.unitary(qsim.prep_unitary(psi_X.amplitudes.real), mn)]
    qpe = qpe_circuit(layout, rho, cfg.t)
    rot = qsim.mux_ry(2 * np.arcsin(amps), layout.qubits("eig"), layout.qubits("anc")[0])
    return layout, prep + qpe + [rot], qpe


def mean_state_prep(psi_X: QuantumState, cfg: QpcaConfig, consts: RotationConstants, readout: EigenvalueReadout, retained) -> tuple[RegisterLayout, list[GateOp]]:
    """Circuit taking |0...0> to |psi_1> on layout (m, n, eig, anc).

    State prep, phase estimation, R1 rotation, then phase estimation undone.
    """
    amps = rotation_table(readout, retained, consts.mean_amplitude)
    layout, circuit, qpe = _rotated_qpe(psi_X, cfg, amps)
    return layout, circuit + qsim.inverse_circuit(qpe)


def psi2_circuit(layout: RegisterLayout, x_star, y) -> list[GateOp]:
    """|X*>|y>|0>|1> from |0...0>."""
    xs = pad_vector(x_star, layout.width("m"))
    yv = pad_vector(y, layout.width("n"))
    if not np.any(xs) or not np.any(yv):
        raise ValueError("X* and y must be nonzero")
    return [
        qsim.unitary(qsim.prep_unitary(xs), layout.qubits("m")),
        qsim.unitary(qsim.prep_unitary(yv), layout.qubits("n")),
        qsim.x(layout.qubits("anc")[0]),
    ]


def hadamard_prefix(psi1_circuit: list[GateOp], layout: RegisterLayout) -> tuple[RegisterLayout, QuantumState]:
    """State after H on the test qubit and |psi_1> prepared on its |0> branch.

    Shared by every test point, so callers compute it once.
    """
    hl = layout.extended(("htest", 1))
    hl.check_ceiling()
    hq = hl.qubits("htest")[0]
    circuit = [qsim.h(hq)] + qsim.controlled_circuit(psi1_circuit, hq, value=0)
    return hl, qsim.run(qsim.init_state(hl), circuit)


@dataclass
class HadamardResult:
    p0: float
    inner: float
    p0_exact: float
    counts: qsim.MeasurementCounts | None = None


def hadamard_test_mean(psi1_circuit, x_star, y, cfg: QpcaConfig, layout: RegisterLayout, prefix=None, seed=None) -> HadamardResult:
    """Hadamard test between |psi_1> and |psi_2> = |X*>|y>|0>|1>.

    Returns p(0) (exact or sampled) and the real inner product 2 p(0) - 1.
    """
    hl, state = prefix if prefix is not None else hadamard_prefix(psi1_circuit, layout)
    hq = hl.qubits("htest")[0]
    tail = qsim.controlled_circuit(psi2_circuit(layout, x_star, y), hq, value=1) + [qsim.h(hq)]
    state = qsim.run(state, tail)
    p0_exact = float(state.probabilities([hq])[0])
    if cfg.mode == "analytic":
        return HadamardResult(p0_exact, 2 * p0_exact - 1, p0_exact)
    counts = qsim.measure(state, [hq], cfg.shots, cfg.seed if seed is None else seed)
    p0 = counts.frequency("0")
    return HadamardResult(p0, 2 * p0 - 1, p0_exact, counts)


def rescale_mean(inner: float, norms: dict, consts: RotationConstants) -> float:
    return norms["x_star"] * norms["y"] / (consts.c1 * norms["X"]) * inner


@dataclass
class VarianceState:
    rho_m: np.ndarray
    p1: float
    p1_exact: float
    accepted: int | None = None


def variance_state_prep(psi_X: QuantumState, cfg: QpcaConfig, consts: RotationConstants, readout: EigenvalueReadout, retained, seed=None) -> VarianceState:
    """Phase estimation, R2 rotation, ancilla postselected on |1>.

    Returns the reduced density of ``m`` (the eig, n and ancilla registers
    are traced out) and the acceptance probability p(1).
    """
    amps = rotation_table(readout, retained, consts.variance_amplitude)
    layout, circuit, _ = _rotated_qpe(psi_X, cfg, amps)
    state = qsim.run(qsim.init_state(layout), circuit)
    anc = layout.qubits("anc")[0]
    post, p1 = qsim.postselect(state, anc, 1)
    rho = qsim.partial_trace(post, ["m"])
    if cfg.mode == "analytic":
        return VarianceState(rho, p1, p1)
    counts = qsim.measure(state, [anc], cfg.shots, cfg.seed if seed is None else seed)
    accepted = counts.counts.get("1", 0)
    if accepted == 0:
        raise ValueError(f"no shot out of {cfg.shots} accepted the ancilla")
    return VarianceState(rho, accepted / cfg.shots, p1, accepted)


def purify(rho) -> np.ndarray:
    """Vector on (system, copy) whose reduced state on the system is ``rho``."""
    w, V = np.linalg.eigh(np.asarray(rho, dtype=complex))
    w = np.clip(w, 0, None)
    return (V * np.sqrt(w)).ravel()


@dataclass
class SwapResult:
    p0: float
    overlap2: float
    p0_exact: float


def swap_test_variance(psi1_prime, x_star, cfg: QpcaConfig, shots: int | None = None, seed=None) -> SwapResult:
    """Swap test between the m-register state and |X*>.

    ``psi1_prime`` is a density matrix (or a pure state vector). A mixed state
    is simulated through a purification on an extra register, which leaves
    the test statistics unchanged.
    """
    psi1_prime = np.asarray(psi1_prime, dtype=complex)
    rho = np.outer(psi1_prime, psi1_prime.conj()) if psi1_prime.ndim == 1 else psi1_prime
    a = _pow2_width(rho.shape[0])
    xs = pad_vector(x_star, a)
    if not np.any(xs):
        raise ValueError("X* must be nonzero")
    rho_p = np.zeros((2**a, 2**a), dtype=complex)
    rho_p[: rho.shape[0], : rho.shape[0]] = rho / np.trace(rho).real
    layout = RegisterLayout((("m", a), ("purifier", a), ("xstar", a), ("swap", 1)))
    state = qsim.load_amplitudes(qsim.init_state(layout), ["m", "purifier"], purify(rho_p))
    sq = layout.qubits("swap")[0]
    circuit = [qsim.unitary(qsim.prep_unitary(xs), layout.qubits("xstar")), qsim.h(sq)]
    circuit += [
        GateOp("SWAP", (qm, qx), controls=(sq,)) for qm, qx in zip(layout.qubits("m"), layout.qubits("xstar"))
    ]
    circuit.append(qsim.h(sq))
    state = qsim.run(state, circuit)
    p0_exact = float(state.probabilities([sq])[0])
    p0 = p0_exact
    if cfg.mode == "shots":
        n = cfg.shots if shots is None else shots
        p0 = qsim.measure(state, [sq], n, cfg.seed if seed is None else seed).frequency("0")
    return SwapResult(p0, max(0.0, 2 * p0 - 1), p0_exact)


def rescale_variance(overlap2: float, p1: float, norms: dict, consts: RotationConstants, sigma: float) -> float:
    return max(0.0, sigma**2 * norms["x_star"] ** 2 / norms["X"] ** 2 * p1 / consts.c2**2 * overlap2)


def quantum_gpr(
    be: BasisExpansion,
    ds: Dataset,
    test_xs,
    cfg: QpcaConfig,
    R: int | None = None,
    threshold: float = RANK_THRESHOLD,
    workers: int = 1,
) -> QuantumPosterior:
    """Posterior mean and variance at ``test_xs`` through the quantum circuits."""
    test_xs = np.atleast_1d(np.asarray(test_xs, dtype=float))
    sigma = be.hp.sigma
    X = be.X
    svd_full = reduced_svd(X, R=min(X.shape))
    psi_X = encode_feature_state(X)
    cfg = cfg.resolved(float(svd_full.normalized_sq[0]))
    _, readout = read_spectrum(psi_X, cfg)
    retained = select_lines(readout, R, threshold)
    consts = rotation_constants(svd_full, sigma, [p.estimate for p in retained])

    layout, psi1 = mean_state_prep(psi_X, cfg, consts, readout, retained)
    prefix = hadamard_prefix(psi1, layout)
    var_state = variance_state_prep(psi_X, cfg, consts, readout, retained, seed=cfg.seed + 1)

    Xs = be.features(test_xs)
    y_norm = float(np.linalg.norm(ds.ys))
    x_norms = np.linalg.norm(Xs, axis=1)

    def one_point(i):
        seed = cfg.seed + 1000 + 2 * i
        had = hadamard_test_mean(psi1, Xs[i], ds.ys, cfg, layout, prefix=prefix, seed=seed)
        shots = var_state.accepted if cfg.mode == "shots" else None
        sw = swap_test_variance(var_state.rho_m, Xs[i], cfg, shots=shots, seed=seed + 1)
        norms = {"x_star": x_norms[i], "y": y_norm, "X": svd_full.frobenius_norm}
        mean = rescale_mean(had.inner, norms, consts)
        var = rescale_variance(sw.overlap2, var_state.p1, norms, consts, sigma)
        return mean, var, had.p0, sw.p0

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one_point, range(test_xs.size)))
    else:
        rows = [one_point(i) for i in range(test_xs.size)]
    rows = np.array(rows, dtype=float).reshape(-1, 4)
    return QuantumPosterior(
        test_inputs=test_xs,
        means=rows[:, 0],
        variances=rows[:, 1],
        p0_hadamard=rows[:, 2],
        p1_ancilla=var_state.p1,
        p0_swap=rows[:, 3],
        norms={"X": svd_full.frobenius_norm, "y": y_norm, "x_star": x_norms},
        consts=consts,
        readout=readout,
        retained=retained,
        mode=cfg.mode,
        config=cfg,
    )
