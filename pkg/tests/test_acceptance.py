"""Acceptance checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with its runtime, then
asserts. Run ``python tests/test_acceptance.py`` to see only those lines.
"""
import csv
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import binned_posterior, dense_gate, dft_matrix, random_instance, random_state, random_unitary  # noqa: E402
from qahsgpr import qsim  # noqa: E402
from qahsgpr.cli import main as cli_main  # noqa: E402
from qahsgpr.experiment import preset, run_experiment, synthesize_dataset, with_overrides  # noqa: E402
from qahsgpr.hsgpr import (  # noqa: E402
    Dataset,
    DomainConfig,
    Hyperparams,
    build_expansion,
    exact_gpr,
    kernel_approx,
    reduced_gpr_direct,
    reduced_gpr_svd,
    reduced_svd,
    se_kernel,
)
from qahsgpr.qpipeline import (  # noqa: E402
    QpcaConfig,
    encode_feature_state,
    hadamard_prefix,
    hadamard_test_mean,
    mean_state_prep,
    quantum_gpr,
    read_spectrum,
    rotation_constants,
    select_lines,
)

_printer = print


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    global _printer

    def out(*a):
        with capsys.disabled():
            print(*a, flush=True)

    _printer = out
    yield
    _printer = print


def report(n, title, ok, detail, t0, budget=None):
    dt = time.perf_counter() - t0
    in_budget = budget is None or dt < budget
    tag = "PASS" if ok and in_budget else "FAIL"
    limit = f" / {budget:.0f}s" if budget else ""
    _printer(f"[{tag}] criterion {n:>2}: {title} -- {detail} ({dt:.1f}s{limit})")
    assert ok, detail
    assert in_budget, f"runtime {dt:.1f}s over budget {budget}s"


def rel_rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(b**2)))


def exp1_classical():
    cfg = preset("paper-exp1")
    ds = synthesize_dataset(cfg.dataset, cfg.L)
    be = build_expansion(ds, cfg.domain(), cfg.hyperparams())
    return cfg, ds, be


# --- 1 -----------------------------------------------------------------------

def test_criterion_01_classical_convergence():
    t0 = time.perf_counter()
    hp = Hyperparams(1.0, 1.0, 0.1)
    data_range = 4.0
    L = 5 * hp.ell + data_range
    grid = np.linspace(-L / 2, L / 2, 101)
    K = se_kernel(grid[:, None], grid[None, :], hp)
    err = {M: float(np.max(np.abs(kernel_approx(grid, grid, DomainConfig(L, M), hp) - K))) for M in (4, 32)}

    rng = np.random.default_rng(0)
    xs = np.sort(rng.uniform(-data_range / 2, data_range / 2, 16))
    ds = Dataset(xs, np.sin(2 * xs) + 0.1 * rng.standard_normal(16))
    tx = np.linspace(-data_range / 2, data_range / 2, 50)
    be = build_expansion(ds, DomainConfig(L, 64), hp)
    rms = float(np.sqrt(np.mean((reduced_gpr_direct(be, ds, hp, tx).means - exact_gpr(ds, hp, tx).means) ** 2)))
    ok = err[32] < 0.25 * err[4] and rms < 1e-4
    report(1, "kernel convergence + HSGPR vs exact", ok,
           f"err(M=32)/err(M=4) = {err[32] / err[4]:.3g}, RMS mean diff at M=64 = {rms:.2e}", t0, 5)


# --- 2 -----------------------------------------------------------------------

def test_criterion_02_svd_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        N, M = int(rng.integers(4, 17)), int(rng.integers(2, 13))
        L = rng.uniform(3, 8)
        hp = Hyperparams(rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.05, 0.5))
        ds = Dataset(rng.uniform(-0.8 * L, 0.8 * L, N), rng.standard_normal(N))
        be = build_expansion(ds, DomainConfig(L, M), hp)
        tx = np.linspace(-0.9 * L, 0.9 * L, 50)
        d = reduced_gpr_direct(be, ds, hp, tx).means
        s = reduced_gpr_svd(reduced_svd(be, R=min(N, M)), be, ds, hp, tx).means
        worst = max(worst, float(np.sqrt(np.mean((d - s) ** 2))))
    report(2, "full-rank SVD form == direct form", worst < 1e-8, f"max RMS over 20 instances = {worst:.2e}", t0, 5)


# --- 3 -----------------------------------------------------------------------

def test_criterion_03_eigenvalue_recovery():
    t0 = time.perf_counter()
    cfg, ds, be = exp1_classical()
    lam_sq = reduced_svd(be, R=4).normalized_sq
    qcfg = QpcaConfig(tau=13).resolved(float(lam_sq[0]))
    psi_X = encode_feature_state(be.X)
    n_qubits = psi_X.layout.n + qcfg.tau + 1
    _, ro = read_spectrum(psi_X, qcfg)
    lines = select_lines(ro)
    est = np.sort([p.estimate for p in lines])[::-1]
    tol = qcfg.delta_R * 2.0**-13 + 2.0**-12
    errs = np.abs(est - lam_sq[: est.size]) if est.size <= lam_sq.size else np.array([np.inf])
    ok = est.size == int(np.sum(lam_sq > 0.01)) and np.all(errs <= tol) and n_qubits <= 20
    report(3, "qPCA eigenvalue recovery (tau=13)", ok,
           f"{est.size} lines, max |err| = {errs.max():.2e} vs tol {tol:.2e}, {n_qubits} qubits", t0, 60)


# --- 4 and 5 -------------------------------------------------------------------

_oracle_cache = {}


def oracle_runs():
    """Quantum vs binned and unbinned references on the 10 random N=M=4 instances (tau=12)."""
    if "runs" in _oracle_cache:
        return _oracle_cache["runs"], _oracle_cache["elapsed"]
    t0 = time.perf_counter()
    runs = []
    for seed in range(10):
        be, ds, hp, tx = random_instance(seed)
        q = quantum_gpr(be, ds, tx, QpcaConfig(tau=12))
        c = reduced_gpr_svd(reduced_svd(be, R=q.rank), be, ds, hp, tx)
        mb, vb, parts = binned_posterior(be, ds, hp.sigma, tx, q)

        # per-eigenvalue decomposition of the unbinned and binned sums
        U, s, Vt = np.linalg.svd(be.X, full_matrices=False)
        fro = np.linalg.norm(be.X)
        lh = s / fro
        Xs = be.features(tx)
        xn, yn = np.linalg.norm(Xs, axis=1), np.linalg.norm(ds.ys)
        proj = (Xs @ Vt.T) / xn[:, None]
        uy = U.T @ ds.ys / yn
        s2 = q.consts.sigma_hat_sq
        keep = np.arange(lh.size) < q.rank
        f_mean = np.where(keep, 1.0 / (lh**2 + s2), 0.0)
        e_mean = parts["A"] / q.consts.c1
        C_mean = (xn * yn / fro)[:, None] * proj * (lh * uy)[None, :]
        f_var = np.where(keep, 1.0 / (lh**2 + s2), 0.0)
        e_var = parts["B"] * lh**2 / q.consts.c2**2
        C_var = (hp.sigma**2 * xn**2 / fro**2)[:, None] * proj**2
        runs.append({
            "seed": seed, "q": q, "c": c, "mb": mb, "vb": vb,
            "mean_bound": np.abs(C_mean) @ np.abs(e_mean - f_mean),
            "var_bound": np.abs(C_var) @ np.abs(e_var - f_var),
            "mean_decomp": C_mean @ f_mean, "var_decomp": C_var @ f_var,
            "lam_sq": lh**2,
        })
    _oracle_cache.update(runs=runs, elapsed=time.perf_counter() - t0)
    return runs, _oracle_cache["elapsed"]


def _oracle_criterion(n, which):
    t0 = time.perf_counter()
    cached = "runs" in _oracle_cache
    runs, build = oracle_runs()
    if cached:
        t0 -= build  # the shared quantum runs count against both criteria
    qa, ca, ba, bound, decomp = {
        "mean": ("means", "means", "mb", "mean_bound", "mean_decomp"),
        "variance": ("variances", "variances", "vb", "var_bound", "var_decomp"),
    }[which]
    binned_err, rel_errs, bound_ok, failing = [], [], True, []
    for r in runs:
        q, c = getattr(r["q"], qa), getattr(r["c"], ca)
        assert np.allclose(r[decomp], c, atol=1e-10)
        binned_err.append(float(np.max(np.abs(q - r[ba]))))
        rel_errs.append(rel_rms(q, c))
        bound_ok &= bool(np.all(np.abs(q - c) <= r[bound] + 1e-6))
        if rel_errs[-1] >= 5e-3:
            failing.append(f"seed {r['seed']} ({rel_errs[-1]:.2e}, spectrum {np.round(r['lam_sq'], 4).tolist()})")
    ok = max(binned_err) < 1e-6 and max(rel_errs) < 5e-3 and bound_ok
    detail = (f"max |q - binned| = {max(binned_err):.1e}, max RMS-rel vs unbinned = {max(rel_errs):.2e}, "
              f"binning bound holds: {bound_ok}")
    if failing:
        detail += "; over 5e-3: " + ", ".join(failing)
    report(n, f"{which} pipeline oracle equivalence", ok, detail, t0, 120)


def test_criterion_04_mean_oracle():
    _oracle_criterion(4, "mean")


def test_criterion_05_variance_oracle():
    _oracle_criterion(5, "variance")


# --- 6 -----------------------------------------------------------------------

def test_criterion_06_rank_sweep():
    t0 = time.perf_counter()
    cfg, ds, be = exp1_classical()
    ref = reduced_gpr_direct(be, ds, cfg.hyperparams(), ds.xs).means
    mse = []
    for R in (1, 2, 3, 4):
        q = quantum_gpr(be, ds, ds.xs, QpcaConfig(tau=13), R=R)
        mse.append(float(np.mean((q.means - ref) ** 2)))
    ok = all(b < a for a, b in zip(mse, mse[1:]))
    report(6, "rank sweep MSE strictly decreasing (tau=13)", ok,
           "MSE(R=1..4) = " + ", ".join(f"{m:.5g}" for m in mse), t0, 600)


# --- 7 -----------------------------------------------------------------------

def test_criterion_07_exp2_tracking():
    t0 = time.perf_counter()
    cfg = with_overrides(preset("paper-exp2"), tau=12, methods=["svd", "quantum"])
    t = run_experiment(cfg)
    mc, vc = t.column("mean", "reduced-svd", 4), t.column("variance", "reduced-svd", 4)
    mq, vq = t.column("mean", "quantum-analytic", 4), t.column("variance", "quantum-analytic", 4)
    mean_dev = rel_rms(mq, mc)
    var_rel = float(np.max(np.abs(vq - vc) / vc))
    ok = mean_dev < 0.10 and np.all(vq > 0) and var_rel < 0.25
    report(7, "damped-sine tracking (M=8, R=4, tau=12)", ok,
           f"mean RMS dev = {100 * mean_dev:.2f}% of RMS amplitude, max var rel err = {100 * var_rel:.1f}%, "
           f"min var = {vq.min():.2e}", t0)


# --- 8 -----------------------------------------------------------------------

def test_criterion_08_shot_statistics():
    t0 = time.perf_counter()
    cfg, ds, be = exp1_classical()
    tau = 8
    psi_X = encode_feature_state(be.X)
    svd = reduced_svd(be, R=4)
    base = QpcaConfig(tau=tau).resolved(float(svd.normalized_sq[0]))
    _, ro = read_spectrum(psi_X, base)
    lines = select_lines(ro)
    consts = rotation_constants(svd, cfg.sigma, [p.estimate for p in lines])
    layout, psi1 = mean_state_prep(psi_X, base, consts, ro, lines)
    prefix = hadamard_prefix(psi1, layout)
    shots = 10**5
    qcfg = QpcaConfig(tau=tau, delta_R=base.delta_R, mode="shots", shots=shots)
    xs = be.features([1.3])[0]
    inside = 0
    for seed in range(50):
        r = hadamard_test_mean(psi1, xs, ds.ys, qcfg, layout, prefix=prefix, seed=seed)
        sd = np.sqrt(r.p0_exact * (1 - r.p0_exact) / shots)
        inside += abs(r.p0 - r.p0_exact) <= 5 * sd
    report(8, "Hadamard-test shot statistics (1e5 shots)", inside >= 48, f"{inside}/50 within 5 sigma", t0, 300)


# --- 9 -----------------------------------------------------------------------

def test_criterion_09_simulator_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    checks = {}

    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 4))
        U = qsim.unitary(random_unitary(2**k, rng), list(range(k))).matrix
        worst = max(worst, float(np.max(np.abs(U.conj().T @ U - np.eye(2**k)))))
        P = qsim.prep_unitary(rng.standard_normal(2**k))
        worst = max(worst, float(np.max(np.abs(P.T @ P - np.eye(2**k)))))
    checks["unitarity"] = worst < 1e-10

    lay = qsim.RegisterLayout((("a", 3), ("b", 3)))
    s = qsim.QuantumState(random_state(6, rng), lay)
    gates = []
    for _ in range(40):
        q = [int(v) for v in rng.permutation(6)]
        gates += [qsim.h(q[0]), qsim.ry(q[1], rng.uniform(0, 6)), qsim.unitary(random_unitary(4, rng), q[2:4]),
                  qsim.GateOp("X", (q[4],), controls=(q[5],)), qsim.qft_gate(q[:3])]
    s2 = qsim.run(s, gates)
    checks["norm"] = abs(np.linalg.norm(s2.amplitudes) - 1) < 1e-9

    psi = random_state(5, rng)
    st_ = qsim.QuantumState(psi, qsim.RegisterLayout((("r", 5),)))
    fwd = qsim.qft(st_, "r")
    rt = qsim.qft_inverse(fwd, "r")
    checks["qft"] = (abs(np.vdot(psi, rt.amplitudes)) ** 2 > 1 - 1e-10
                     and np.allclose(fwd.amplitudes, dft_matrix(32) @ psi, atol=1e-12))

    ok_ctl = True
    for n in range(2, 7):
        U1 = random_unitary(2, rng)
        U2 = random_unitary(4 if n > 2 else 2, rng)
        t2 = [1, 2] if n > 2 else [1]
        inner = [qsim.unitary(U1, [n - 1]), qsim.unitary(U2, t2)]
        ctl = qsim.controlled_circuit(inner, 0)
        want = np.eye(2**n, dtype=complex)
        for g in inner:
            want = dense_gate(g.matrix, g.targets, n, (0,), (1,)) @ want
        got = np.column_stack([qsim.run(qsim.QuantumState(np.eye(2**n)[:, c], qsim.RegisterLayout((("r", n),))), ctl).amplitudes
                               for c in range(2**n)])
        ok_ctl &= bool(np.allclose(got, want, atol=1e-12))
    checks["controlled"] = ok_ctl

    cfg, _, be = exp1_classical()
    rho = qsim.partial_trace(encode_feature_state(be.X), ["m"])
    checks["gram"] = bool(np.allclose(rho, be.X.T @ be.X / np.sum(be.X**2), atol=1e-12))

    report(9, "simulator unit suite", all(checks.values()),
           ", ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in checks.items()), t0, 60)


# --- 10 ----------------------------------------------------------------------

def _csv_without_runtime(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    i = rows[0].index("runtime_ms")
    return [r[:i] + r[i + 1:] for r in rows]


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    rc = [cli_main(["preset", "paper-exp1", "--mode", "analytic", "-o", str(p)]) for p in (a, b)]
    ra, rb = _csv_without_runtime(a), _csv_without_runtime(b)
    ok = rc == [0, 0] and ra == rb and len(ra) > 1
    report(10, "preset paper-exp1 reruns give identical CSV", ok, f"{len(ra) - 1} rows compared", t0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "--no-header", "-p", "no:warnings"]))
