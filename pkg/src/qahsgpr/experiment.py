"""Experiment configs, presets, dataset synthesis and result tables."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .hsgpr import (
    RANK_THRESHOLD,
    Dataset,
    DomainConfig,
    Hyperparams,
    build_expansion,
    exact_gpr,
    reduced_gpr_direct,
    reduced_gpr_svd,
    reduced_svd,
)
from .qpipeline import QpcaConfig, _pow2_width, quantum_gpr
from .qsim import QubitCeilingError, max_qubits

GENERATORS = {
    "sine": np.sin,
    "sinc": np.sinc,
    "damped-sine": lambda x: np.exp(-np.abs(x) / 2) * np.sin(2 * x),
}
METHOD_CHOICES = ("exact", "hsgpr", "svd", "quantum")
CSV_COLUMNS = ["x_star", "method", "R", "mean", "variance", "p0_hadamard", "p1_ancilla", "p0_swap", "runtime_ms"]

# pipeline states above this many qubits need allow_large_memory
LARGE_QUBITS = 22


class ExperimentError(ValueError):
    pass


@dataclass
class DatasetSpec:
    generator: str = "sine"
    N: int = 16
    noise: float = 0.1
    seed: int = 0
    path: str | None = None
    span: float = 0.8  # inputs equispaced in [-span L, span L]


@dataclass
class GridSpec:
    start: float | None = None  # None: -0.9 L
    end: float | None = None  # None: +0.9 L
    count: int = 50


@dataclass
class QuantumSpec:
    tau: int = 8
    delta_margin: float = 1.2
    delta_R: float | None = None
    shots: int = 1_000_000
    seed: int = 0
    mode: str = "analytic"
    min_peak_prob: float = 1e-3

    def qpca(self) -> QpcaConfig:
        return QpcaConfig(
            tau=self.tau,
            delta_R=self.delta_R,
            delta_margin=self.delta_margin,
            shots=self.shots,
            seed=self.seed,
            mode=self.mode,
            min_peak_prob=self.min_peak_prob,
        )


@dataclass
class ExperimentConfig:
    name: str = "custom"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    L: float = 2 * np.pi
    M: int = 4
    sigma_f: float = 1.0
    ell: float = 1.0
    sigma: float = 0.1
    ranks: list[int] | None = None  # None: threshold rule
    threshold: float = RANK_THRESHOLD
    quantum: QuantumSpec = field(default_factory=QuantumSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    methods: list[str] = field(default_factory=lambda: list(METHOD_CHOICES))
    workers: int = 1
    allow_large_memory: bool = False

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.sigma_f, self.ell, self.sigma)

    def domain(self) -> DomainConfig:
        return DomainConfig(self.L, self.M)

    def grid_points(self) -> np.ndarray:
        start = -0.9 * self.L if self.grid.start is None else self.grid.start
        end = 0.9 * self.L if self.grid.end is None else self.grid.end
        return np.linspace(start, end, self.grid.count)

    def pipeline_qubits(self) -> int:
        # m + n + eig + rotation ancilla + Hadamard-test qubit
        return _pow2_width(self.M) + _pow2_width(self.dataset.N) + self.quantum.tau + 2

    def validate(self) -> None:
        bad = [m for m in self.methods if m not in METHOD_CHOICES]
        if bad:
            raise ExperimentError(f"unknown methods {bad}; choose from {METHOD_CHOICES}")
        if self.dataset.generator not in GENERATORS and self.dataset.path is None:
            raise ExperimentError(f"unknown generator {self.dataset.generator!r}; choose from {sorted(GENERATORS)}")
        self.domain().check_inside(self.grid_points(), "test grid point")
        self.hyperparams()
        if "quantum" in self.methods:
            self.quantum.qpca()
            n = self.pipeline_qubits()
            detail = f"tau={self.quantum.tau}, M={self.M}, N={self.dataset.N}"
            if n > max_qubits():
                raise ExperimentError(
                    f"quantum pipeline needs {n} qubits ({detail}), above the ceiling {max_qubits()}; "
                    "lower tau or raise QAHSGPR_MAX_QUBITS"
                )
            if n > LARGE_QUBITS and not self.allow_large_memory:
                raise ExperimentError(
                    f"quantum pipeline needs {n} qubits ({detail}), ~{16 * 2**n / 2**30:.2f} GiB per state; "
                    "pass allow_large_memory / --allow-large-memory to proceed"
                )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ExperimentError(f"unknown config keys {sorted(unknown)}")
        for key, sub in (("dataset", DatasetSpec), ("grid", GridSpec), ("quantum", QuantumSpec)):
            if key in d and isinstance(d[key], dict):
                d[key] = sub(**d[key])
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


PRESETS = {
    "paper-exp1": ExperimentConfig(
        name="paper-exp1",
        dataset=DatasetSpec(generator="sine", N=16, noise=0.1, seed=0),
        L=2 * np.pi,
        M=4,
        sigma_f=1.5,
        ell=1.0,
        sigma=0.1,
        ranks=[1, 2, 3, 4],
        quantum=QuantumSpec(tau=13, shots=1_000_000, mode="analytic"),
        grid=GridSpec(count=32),
    ),
    # 25 qubits at tau=16: needs allow_large_memory, or override tau (12 runs in ~10 s)
    "paper-exp2": ExperimentConfig(
        name="paper-exp2",
        dataset=DatasetSpec(generator="damped-sine", N=16, noise=0.1, seed=0),
        L=2.0,
        M=8,
        sigma_f=0.5,
        ell=1.0,
        sigma=0.1,
        ranks=[4],
        quantum=QuantumSpec(tau=16, shots=1_000_000, mode="analytic"),
        grid=GridSpec(count=40),
    ),
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ExperimentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig.from_dict(json.loads(json.dumps(PRESETS[name].to_dict())))


def synthesize_dataset(spec: DatasetSpec, L: float) -> Dataset:
    """y_i = f(x_i) + N(0, noise^2) on an equispaced grid, or read from ``spec.path``."""
    if spec.path is not None:
        return read_dataset(spec.path)
    if spec.N < 1:
        raise ExperimentError("N must be >= 1")
    if spec.generator not in GENERATORS:
        raise ExperimentError(f"unknown generator {spec.generator!r}; choose from {sorted(GENERATORS)}")
    xs = np.linspace(-spec.span * L, spec.span * L, spec.N) if spec.N > 1 else np.zeros(1)
    rng = np.random.default_rng(spec.seed)
    ys = GENERATORS[spec.generator](xs) + spec.noise * rng.standard_normal(spec.N)
    return Dataset(xs, ys)


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in zip(ds.xs, ds.ys):
            w.writerow([repr(float(x)), repr(float(y))])


def read_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return Dataset([float(r["x"]) for r in rows], [float(r["y"]) for r in rows])


@dataclass
class ResultRow:
    x_star: float
    method: str
    R: int | None
    mean: float
    variance: float
    p0_hadamard: float | None = None
    p1_ancilla: float | None = None
    p0_swap: float | None = None
    runtime_ms: float = 0.0


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def select(self, method: str, R: int | None = None) -> list[ResultRow]:
        return [r for r in self.rows if r.method == method and (R is None or r.R == R)]

    def column(self, name: str, method: str, R: int | None = None) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.select(method, R)], dtype=float)


def _rows(est, R, elapsed_s, probs=None) -> list[ResultRow]:
    n = len(est.test_inputs)
    per = 1000 * elapsed_s / max(n, 1)
    rows = []
    for i in range(n):
        extra = {}
        if probs is not None:
            extra = {"p0_hadamard": float(probs["p0"][i]), "p1_ancilla": float(probs["p1"]), "p0_swap": float(probs["p0s"][i])}
        rows.append(
            ResultRow(float(est.test_inputs[i]), est.method, R, float(est.means[i]), float(est.variances[i]), runtime_ms=per, **extra)
        )
    return rows


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Run every requested method on one dataset and grid."""
    cfg.validate()
    hp, dom = cfg.hyperparams(), cfg.domain()
    ds = synthesize_dataset(cfg.dataset, cfg.L)
    be = build_expansion(ds, dom, hp)
    grid = cfg.grid_points()
    table = ResultTable(metadata={
        "config": cfg.to_dict(),
        "version": __version__,
        "seeds": {"dataset": cfg.dataset.seed, "quantum": cfg.quantum.seed},
        "dataset": {"xs": ds.xs.tolist(), "ys": ds.ys.tolist()},
    })
    full = reduced_svd(be, R=min(be.X.shape))
    table.metadata["classical_eigenvalues"] = full.normalized_sq.tolist()
    ranks = cfg.ranks if cfg.ranks else [None]

    if "exact" in cfg.methods:
        t = time.perf_counter()
        est = exact_gpr(ds, hp, grid)
        table.rows += _rows(est, None, time.perf_counter() - t)
    if "hsgpr" in cfg.methods:
        t = time.perf_counter()
        est = reduced_gpr_direct(be, ds, hp, grid)
        table.rows += _rows(est, None, time.perf_counter() - t)
    if "svd" in cfg.methods:
        for R in ranks:
            t = time.perf_counter()
            svd = reduced_svd(be, R=R, threshold=cfg.threshold)
            est = reduced_gpr_svd(svd, be, ds, hp, grid)
            table.rows += _rows(est, svd.rank, time.perf_counter() - t)
    if "quantum" in cfg.methods:
        runs = []
        for R in ranks:
            t = time.perf_counter()
            try:
                q = quantum_gpr(be, ds, grid, cfg.quantum.qpca(), R=R, threshold=cfg.threshold, workers=cfg.workers)
            except QubitCeilingError as e:
                raise ExperimentError(
                    f"{e} (tau={cfg.quantum.tau}, M={cfg.M}, N={cfg.dataset.N})"
                ) from e
            probs = {"p0": q.p0_hadamard, "p1": q.p1_ancilla, "p0s": q.p0_swap}
            table.rows += _rows(q.to_estimate(), q.rank, time.perf_counter() - t, probs)
            runs.append({
                "R": q.rank,
                "delta_R": q.config.delta_R,
                "c1": q.consts.c1,
                "c2": q.consts.c2,
                "sigma_hat_sq": q.consts.sigma_hat_sq,
                "p1_ancilla": q.p1_ancilla,
                "frobenius_norm": q.norms["X"],
                "y_norm": q.norms["y"],
                "peaks": [
                    {"register_value": p.register_value, "estimate": p.estimate, "weight": p.weight,
                     "multiplicity": p.multiplicity}
                    for p in q.readout.peaks
                ],
                "retained": [p.register_value for p in q.retained],
                "p0_hadamard": q.p0_hadamard.tolist(),
                "p0_swap": q.p0_swap.tolist(),
                "audit": q.readout.audit,
            })
        table.metadata["quantum_runs"] = runs
    return table


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(table: ResultTable, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in table.rows:
        d = asdict(r)
        d["runtime_ms"] = f"{r.runtime_ms:.3f}"
        w.writerow([_cell(d[c]) for c in CSV_COLUMNS])


def write_json(table: ResultTable, fh) -> None:
    json.dump({"metadata": table.metadata, "rows": [asdict(r) for r in table.rows]}, fh, indent=1)
    fh.write("\n")


def export(table: ResultTable, fmt: str, path) -> Path:
    writers = {"csv": write_csv, "json": write_json}
    if fmt not in writers:
        raise ExperimentError(f"format must be csv or json, got {fmt!r}")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writers[fmt](table, fh)
    return path


def load_json(path) -> ResultTable:
    payload = json.loads(Path(path).read_text())
    return ResultTable([ResultRow(**r) for r in payload["rows"]], payload["metadata"])


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Copy of ``cfg`` with top-level and ``quantum.*`` fields replaced (None values skipped)."""
    top, q = {}, {}
    qnames = {f.name for f in fields(QuantumSpec)}
    for k, v in kw.items():
        if v is None:
            continue
        (q if k in qnames else top)[k] = v
    cfg = replace(cfg, **top)
    if q:
        cfg = replace(cfg, quantum=replace(cfg.quantum, **q))
    return cfg
