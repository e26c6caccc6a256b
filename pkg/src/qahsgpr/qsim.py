"""Dense statevector simulator with named registers.

Ordering convention: qubit 0 is the most significant bit of the basis index,
and registers occupy consecutive qubits in the order they are listed in the
layout. A register's value is read big-endian from its qubits, so the
amplitude tensor reshaped to ``[2] * n`` in C order has axis ``q`` for qubit
``q``. Bitstrings are rendered in the same order.

Gates are plain ``GateOp`` records. Any gate can carry extra controls, which is
how ``controlled_circuit`` works: it only appends to ``controls``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MAX_QUBITS = 26
MAX_QUBITS_ENV = "QAHSGPR_MAX_QUBITS"
UNITARY_ATOL = 1e-10
NORM_ATOL = 1e-10


class QubitCeilingError(RuntimeError):
    pass


def max_qubits() -> int:
    return int(os.environ.get(MAX_QUBITS_ENV, DEFAULT_MAX_QUBITS))


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[tuple[str, int], ...]

    def __post_init__(self):
        regs = tuple((str(name), int(k)) for name, k in self.registers)
        object.__setattr__(self, "registers", regs)
        names = [r[0] for r in regs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate register names in {names}")
        if any(k < 0 for _, k in regs):
            raise ValueError("register widths must be >= 0")
        if self.n < 1:
            raise ValueError("layout needs at least one qubit")

    @property
    def n(self) -> int:
        return sum(k for _, k in self.registers)

    @property
    def names(self) -> list[str]:
        return [r[0] for r in self.registers]

    def qubits(self, name: str) -> list[int]:
        start = 0
        for reg, k in self.registers:
            if reg == name:
                return list(range(start, start + k))
            start += k
        raise KeyError(f"no register named {name!r}")

    def width(self, name: str) -> int:
        return len(self.qubits(name))

    def check_ceiling(self, ceiling: int | None = None) -> None:
        ceiling = max_qubits() if ceiling is None else ceiling
        if self.n > ceiling:
            detail = ", ".join(f"{name}={k}" for name, k in self.registers)
            raise QubitCeilingError(
                f"layout needs {self.n} qubits ({detail}) but the ceiling is {ceiling}; "
                f"set {MAX_QUBITS_ENV} to raise it (memory ~ 16 * 2**n bytes)"
            )

    def extended(self, *extra: tuple[str, int], front: bool = False) -> RegisterLayout:
        return RegisterLayout(tuple(extra) + self.registers if front else self.registers + tuple(extra))


@dataclass(frozen=True, eq=False)
class QuantumState:
    amplitudes: np.ndarray
    layout: RegisterLayout

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2**self.layout.n,):
            raise ValueError(f"expected {2 ** self.layout.n} amplitudes, got {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1) > NORM_ATOL:
            raise ValueError(f"state norm {norm} deviates from 1")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n(self) -> int:
        return self.layout.n

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape([2] * self.n)

    def probabilities(self, qubits: Sequence[int] | None = None) -> np.ndarray:
        """Born probabilities of the listed qubits (big-endian outcome index)."""
        p = np.abs(self.amplitudes) ** 2
        if qubits is None:
            return p
        return _marginal(p.reshape([2] * self.n), list(qubits))

    def register_probabilities(self, name: str) -> np.ndarray:
        return self.probabilities(self.layout.qubits(name))


def _marginal(p: np.ndarray, qubits: list[int]) -> np.ndarray:
    n = p.ndim
    rest = tuple(q for q in range(n) if q not in qubits)
    m = p.sum(axis=rest) if rest else p
    # summed array keeps remaining axes in increasing qubit order
    order = sorted(qubits)
    m = np.transpose(m, [order.index(q) for q in qubits])
    return m.reshape(-1)


@dataclass(frozen=True, eq=False)
class GateOp:
    """One gate.

    ``kind`` is one of H, X, RY, PHASE, SWAP, UNITARY, QFT, IQFT, MUX_RY.
    ``MUX_RY`` is a register-multiplexed Y rotation: ``targets[:-1]`` select an
    angle from ``params`` by their big-endian value and ``targets[-1]`` is
    rotated by it.
    """

    kind: str
    targets: tuple[int, ...]
    params: tuple = ()
    matrix: np.ndarray | None = None
    controls: tuple[int, ...] = ()
    control_values: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(q) for q in self.targets))
        object.__setattr__(self, "controls", tuple(int(q) for q in self.controls))
        values = self.control_values or (1,) * len(self.controls)
        object.__setattr__(self, "control_values", tuple(int(v) for v in values))
        if len(self.control_values) != len(self.controls):
            raise ValueError("one control value per control qubit")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"repeated target qubits {self.targets}")
        if set(self.targets) & set(self.controls) or len(set(self.controls)) != len(self.controls):
            raise ValueError("control and target qubits must be distinct")
        if self.kind == "UNITARY":
            U = np.asarray(self.matrix, dtype=complex)
            d = 2 ** len(self.targets)
            if U.shape != (d, d):
                raise ValueError(f"matrix shape {U.shape} does not match {len(self.targets)} targets")
            if np.max(np.abs(U.conj().T @ U - np.eye(d))) > UNITARY_ATOL:
                raise ValueError("matrix is not unitary")
            object.__setattr__(self, "matrix", U)
        elif self.kind == "MUX_RY":
            if len(self.params) != 2 ** (len(self.targets) - 1):
                raise ValueError("MUX_RY needs one angle per select-register value")
        elif self.kind not in _FIXED and self.kind not in ("RY", "PHASE", "SWAP", "QFT", "IQFT"):
            raise ValueError(f"unknown gate kind {self.kind!r}")

    @property
    def qubits(self) -> tuple[int, ...]:
        return self.targets + self.controls

    def inverse(self) -> GateOp:
        if self.kind in ("H", "X", "SWAP"):
            return self
        if self.kind in ("RY", "PHASE"):
            return replace(self, params=(-self.params[0],))
        if self.kind == "MUX_RY":
            return replace(self, params=tuple(-a for a in self.params))
        if self.kind == "QFT":
            return replace(self, kind="IQFT")
        if self.kind == "IQFT":
            return replace(self, kind="QFT")
        return replace(self, matrix=self.matrix.conj().T)


_SQ2 = 1 / np.sqrt(2)
_FIXED = {
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
}


def h(q: int) -> GateOp:
    return GateOp("H", (q,))


def x(q: int) -> GateOp:
    return GateOp("X", (q,))


def ry(q: int, theta: float) -> GateOp:
    return GateOp("RY", (q,), (float(theta),))


def phase(q: int, theta: float) -> GateOp:
    return GateOp("PHASE", (q,), (float(theta),))


def swap(a: int, b: int) -> GateOp:
    return GateOp("SWAP", (a, b))


def unitary(matrix, targets: Sequence[int]) -> GateOp:
    return GateOp("UNITARY", tuple(targets), matrix=matrix)


def qft_gate(targets: Sequence[int]) -> GateOp:
    return GateOp("QFT", tuple(targets))


def iqft_gate(targets: Sequence[int]) -> GateOp:
    return GateOp("IQFT", tuple(targets))


def mux_ry(angles: Sequence[float], select: Sequence[int], target: int) -> GateOp:
    return GateOp("MUX_RY", tuple(select) + (target,), tuple(float(a) for a in angles))


def ry_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def gate_matrix(gate: GateOp) -> np.ndarray:
    """Dense matrix of the gate on its targets only (controls ignored)."""
    k = len(gate.targets)
    if gate.kind in _FIXED:
        return _FIXED[gate.kind]
    if gate.kind == "RY":
        return ry_matrix(gate.params[0])
    if gate.kind == "PHASE":
        return np.diag([1, np.exp(1j * gate.params[0])])
    if gate.kind == "SWAP":
        return np.eye(4, dtype=complex)[[0, 2, 1, 3]]
    if gate.kind in ("QFT", "IQFT"):
        d = 2**k
        sign = 1 if gate.kind == "QFT" else -1
        j = np.arange(d)
        return np.exp(sign * 2j * np.pi * np.outer(j, j) / d) / np.sqrt(d)
    if gate.kind == "MUX_RY":
        return _block_diag([ry_matrix(a) for a in gate.params])
    return gate.matrix


def _block_diag(blocks):
    d = sum(b.shape[0] for b in blocks)
    out = np.zeros((d, d), dtype=complex)
    i = 0
    for b in blocks:
        out[i : i + b.shape[0], i : i + b.shape[0]] = b
        i += b.shape[0]
    return out


def prep_unitary(values) -> np.ndarray:
    """Real orthogonal matrix whose first column is ``values / ||values||``.

    A Householder reflection, used to load an amplitude vector from |0...0>
    with a single gate (so it can be controlled).
    """
    v = np.asarray(values, dtype=float).ravel()
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("cannot prepare the zero vector")
    v = v / nrm
    e0 = np.zeros_like(v)
    e0[0] = 1.0
    w = e0 - v
    ww = w @ w
    if ww < 1e-30:
        return np.eye(v.size)
    return np.eye(v.size) - 2.0 * np.outer(w, w) / ww


def init_state(layout: RegisterLayout, ceiling: int | None = None) -> QuantumState:
    layout.check_ceiling(ceiling)
    amps = np.zeros(2**layout.n, dtype=complex)
    amps[0] = 1.0
    return QuantumState(amps, layout)


def load_amplitudes(state: QuantumState, registers: Sequence[str], values) -> QuantumState:
    """Exact amplitude encoding of ``values`` into ``registers``.

    The selected registers must currently be |0...0> and unentangled from the
    rest; the rest of the state is kept as is.
    """
    values = np.asarray(values, dtype=complex).ravel()
    qubits = [q for r in registers for q in state.layout.qubits(r)]
    if values.size != 2 ** len(qubits):
        raise ValueError(f"expected {2 ** len(qubits)} values for {list(registers)}, got {values.size}")
    nrm = np.linalg.norm(values)
    if nrm == 0:
        raise ValueError("cannot encode the zero vector")
    rest = [q for q in range(state.n) if q not in qubits]
    t = np.transpose(state.tensor(), qubits + rest).reshape(2 ** len(qubits), -1)
    if abs(np.linalg.norm(t[0]) - 1) > NORM_ATOL:
        raise ValueError(f"registers {list(registers)} are not in |0>")
    new = np.outer(values / nrm, t[0]).reshape([2] * state.n)
    new = np.transpose(new, np.argsort(qubits + rest))
    return QuantumState(new.reshape(-1), state.layout)


def _apply_core(t: np.ndarray, gate: GateOp, axes: list[int]) -> np.ndarray:
    """Apply ``gate`` on ``axes`` of tensor ``t`` (controls already sliced away)."""
    k = len(axes)
    nd = t.ndim
    rest = [a for a in range(nd) if a not in axes]
    perm = axes + rest
    m = np.transpose(t, perm).reshape(2**k, -1)
    if gate.kind == "QFT":
        m = np.fft.ifft(m, axis=0, norm="ortho")
    elif gate.kind == "IQFT":
        m = np.fft.fft(m, axis=0, norm="ortho")
    elif gate.kind == "MUX_RY":
        theta = np.asarray(gate.params)
        c = np.cos(theta / 2)[:, None]
        s = np.sin(theta / 2)[:, None]
        m = m.reshape(2 ** (k - 1), 2, -1)
        a0, a1 = m[:, 0, :], m[:, 1, :]
        m = np.stack([c * a0 - s * a1, s * a0 + c * a1], axis=1).reshape(2**k, -1)
    elif gate.kind == "SWAP":
        m = m[[0, 2, 1, 3]]
    elif gate.kind == "X":
        m = m[::-1]
    else:
        m = gate_matrix(gate) @ m
    out = m.reshape([2] * nd)
    return np.transpose(out, np.argsort(perm))


def _apply_inplace(t: np.ndarray, gate: GateOp) -> None:
    nd = t.ndim
    if max(gate.qubits, default=-1) >= nd:
        raise ValueError(f"gate {gate.kind} touches qubit outside 0..{nd - 1}")
    if not gate.controls:
        t[...] = _apply_core(t, gate, list(gate.targets))
        return
    idx = [slice(None)] * nd
    for q, v in zip(gate.controls, gate.control_values):
        idx[q] = v
    idx = tuple(idx)
    remaining = [q for q in range(nd) if q not in gate.controls]
    axes = [remaining.index(q) for q in gate.targets]
    t[idx] = _apply_core(t[idx], gate, axes)


def apply(state: QuantumState, gate: GateOp) -> QuantumState:
    t = state.tensor().copy()
    _apply_inplace(t, gate)
    return QuantumState(t.reshape(-1), state.layout)


def run(state: QuantumState, circuit: Iterable[GateOp]) -> QuantumState:
    """Apply a gate sequence, working on one private copy of the amplitudes."""
    t = state.tensor().copy()
    for gate in circuit:
        _apply_inplace(t, gate)
    return QuantumState(t.reshape(-1), state.layout)


def inverse_circuit(circuit: Sequence[GateOp]) -> list[GateOp]:
    return [g.inverse() for g in reversed(circuit)]


def qft(state: QuantumState, register: str) -> QuantumState:
    """|j> -> 2^{-tau/2} sum_k exp(2 pi i j k / 2^tau) |k> on ``register``."""
    return apply(state, qft_gate(state.layout.qubits(register)))


def qft_inverse(state: QuantumState, register: str) -> QuantumState:
    return apply(state, iqft_gate(state.layout.qubits(register)))


def controlled_circuit(circuit: Sequence[GateOp], control: int, value: int = 1) -> list[GateOp]:
    """Condition every gate of ``circuit`` on qubit ``control`` being ``value``."""
    out = []
    for g in circuit:
        if control in g.qubits:
            raise ValueError(f"control qubit {control} is already used by a {g.kind} gate")
        out.append(replace(g, controls=g.controls + (control,), control_values=g.control_values + (value,)))
    return out


@dataclass
class MeasurementCounts:
    counts: dict[str, int]
    shots: int
    qubits: tuple[int, ...] = ()

    def __post_init__(self):
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to the shot total")

    def frequency(self, bitstring: str) -> float:
        return self.counts.get(bitstring, 0) / self.shots


def sample_counts(probs: np.ndarray, shots: int, seed, width: int) -> dict[str, int]:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    p = np.clip(np.asarray(probs, dtype=float), 0, None)
    p = p / p.sum()
    draws = np.random.default_rng(seed).multinomial(shots, p)
    return {format(i, f"0{width}b"): int(c) for i, c in enumerate(draws) if c}


def measure(state: QuantumState, qubits: Sequence[int], shots: int, seed) -> MeasurementCounts:
    """Sample ``shots`` outcomes of ``qubits`` from the Born distribution.

    The state is not collapsed; all shots are drawn from the same marginal.
    """
    qubits = list(qubits)
    probs = state.probabilities(qubits)
    return MeasurementCounts(sample_counts(probs, shots, seed, len(qubits)), shots, tuple(qubits))


def postselect(state: QuantumState, qubit: int, value: int) -> tuple[QuantumState, float]:
    t = state.tensor().copy()
    idx = [slice(None)] * state.n
    idx[qubit] = 1 - value
    t[tuple(idx)] = 0
    p = float(np.sum(np.abs(t) ** 2))
    if p <= 1e-300:
        raise ValueError(f"outcome {value} on qubit {qubit} has zero probability")
    return QuantumState(t.reshape(-1) / np.sqrt(p), state.layout), p


def partial_trace(state: QuantumState, keep: Sequence[str]) -> np.ndarray:
    """Reduced density matrix of the ``keep`` registers (in the listed order)."""
    qubits = [q for r in keep for q in state.layout.qubits(r)]
    rest = [q for q in range(state.n) if q not in qubits]
    a = np.transpose(state.tensor(), qubits + rest).reshape(2 ** len(qubits), -1)
    return a @ a.conj().T


def dense_circuit_matrix(circuit: Sequence[GateOp], n: int) -> np.ndarray:
    """Full 2^n x 2^n matrix of a circuit, built column by column."""
    d = 2**n
    out = np.zeros((d, d), dtype=complex)
    for col in range(d):
        t = np.zeros(d, dtype=complex)
        t[col] = 1
        t = t.reshape([2] * n)
        for g in circuit:
            _apply_inplace(t, g)
        out[:, col] = t.reshape(-1)
    return out
