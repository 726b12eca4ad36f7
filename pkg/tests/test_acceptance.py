"""Acceptance criteria 1-12, each at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from ulamstab.blocksum import block_decompose, offdiag_inequality_check
from ulamstab.config import parse_config
from ulamstab.experiments import run_experiment
from ulamstab.groups import (make_cyclic, make_dihedral, make_direct_product, make_semidirect,
                             make_subgroup_chain, parse_group)
from ulamstab.limits import ChainFamily, chain_limit_report, mixture_defect_bound_check
from ulamstab.linalg import FiniteMean, adjoint, matrix_mean, op_norm, random_unitary
from ulamstab.repmap import (UMap, calibrate_perturbation, defect, defect_breakdown, direct_sum,
                             exact_cyclic_representation, is_representation, random_representation,
                             sup_distance)
from ulamstab.stabilizer import (HolderOracle, KazhdanOracle, product_stabilize,
                                 semidirect_stabilize, stabilize_single)

pytestmark = pytest.mark.acceptance

SLACK = 1e-9
C = 2.0

# product-form traces collected across the suite, checked again by criterion 3
PRODUCT_TRACES: list = []


def perturbed(group, d, eps, seed):
    rho = random_representation(group, d, np.random.default_rng([seed, 1]))
    return calibrate_perturbation(rho, eps, [seed, 2])[0]


def distinct_character_rep(P, d, rng):
    """U* diag(chi_a(x) chi_b(y)) U on Z_n x Z_m with distinct characters per factor."""
    n, m = P.left_order, P.right_order
    ka = rng.permutation(n)[:d]
    kb = rng.permutation(m)[:d]
    phase = np.outer(P.project_left, ka) / n + np.outer(P.project_right, kb) / m
    V = np.zeros((P.base.order, d, d), complex)
    V[:, range(d), range(d)] = np.exp(2j * np.pi * phase)
    U = random_unitary(d, rng)
    W = adjoint(U)[None] @ V @ U[None]
    W[0] = np.eye(d)
    return UMap.snapped(P.base, W, 1e-12)


def test_criterion_01_kazhdan_window(record_criterion):
    start = time.perf_counter()
    worst, bad = 0.0, 0
    for n in range(2, 13):
        G = make_cyclic(n)
        for d in (1, 2, 4):
            for eps in (1e-2, 1e-3, 1e-4):
                for trial in range(50):
                    f = perturbed(G, d, eps, 1000 * n + 100 * d + trial + int(-math.log10(eps)) * 10**5)
                    tr = stabilize_single(f)
                    bound = 2 * min(eps, defect(f))
                    worst = max(worst, tr.final_distance / bound * 2)
                    bad += not (tr.converged and tr.final_distance <= bound)
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 60
    record_criterion(1, ok, f"4950 trials, {bad} outside 2*eps, worst distance/eps {worst:.3f}, {elapsed:.1f} s")
    assert bad == 0
    assert elapsed < 60


def test_criterion_02_one_step_contraction(record_criterion):
    P = make_direct_product(make_cyclic(4), make_cyclic(4))
    rng = np.random.default_rng(2)
    bad, worst = 0, 0.0
    for trial in range(100):
        eps_target = 10 ** rng.uniform(-4, -2)
        d = 1 + trial % 3
        f = perturbed(P.base, d, eps_target, 20000 + trial)
        eps = defect(f)
        tr = product_stabilize(f, P, c=C, max_iter=1, fatal=False)
        PRODUCT_TRACES.append(tr)
        rec = tr.iterations[0]
        one_step = next(e.lhs for e in rec.ledger if e.id == "one_step_defect")
        d1 = tr.final_defect
        ok1 = d1 <= 8 * (10 + 3 * C) ** 2 * eps**2 + SLACK
        ok0 = one_step <= 2 * (10 + 3 * C) ** 2 * eps**2 + SLACK
        bad += not (ok0 and ok1 and eps <= 1e-2 * 1.01)
        worst = max(worst, d1 / (8 * (10 + 3 * C) ** 2 * eps**2))
    record_criterion(2, bad == 0, f"100 trials, {bad} failures, worst d1 / bound {worst:.2e}")
    assert bad == 0


def _product_sweep():
    runs = []
    groups = ["product:4,4", "product:3,5", "product:2,6", "product:dihedral:3,2", "product:2,dihedral:4"]
    for gi, spec in enumerate(groups):
        P = parse_group(spec)
        for d in (1, 2, 3):
            for eps in (1e-2, 1e-3, 1e-4, 1e-5):
                for seed in range(3):
                    f = perturbed(P.base, d, eps, 30000 + 1000 * gi + 100 * d + 10 * seed + int(-math.log10(eps)))
                    runs.append(product_stabilize(f, P, c=C, fatal=False))
    return runs


def test_criterion_04_geometric_total(record_criterion):
    runs = []
    for gi, spec in enumerate(["product:4,4", "product:3,5", "product:dihedral:3,2"]):
        P = parse_group(spec)
        for d in (1, 2, 3):
            for eps in (1e-5, 5e-5, 1e-4, 2e-4, 2.4e-4):
                for seed in range(4):
                    f = perturbed(P.base, d, eps, 40000 + 1000 * gi + 100 * d + seed + int(eps * 1e6))
                    if 1024 * C * defect(f) <= 0.5:
                        runs.append((f, product_stabilize(f, P, c=C, fatal=False)))
    D = make_dihedral(4)
    for eps in (1e-5, 1e-4, 2e-4):
        for seed in range(4):
            f = perturbed(D.Q, 2, eps, 45000 + seed + int(eps * 1e6))
            if 1024 * C * defect(f) <= 0.5:
                runs.append((f, semidirect_stabilize(f, D, c=C, fatal=False)))
    bad, worst = 0, 0.0
    for f, tr in runs:
        e0 = defect(f)
        bound = 768 * C * e0 / (1 - 1024 * C * e0)
        PRODUCT_TRACES.append(tr)
        bad += not (tr.converged and tr.cumulative_distance <= bound + SLACK)
        worst = max(worst, tr.cumulative_distance / bound)
    record_criterion(4, bad == 0 and runs,
                     f"{len(runs)} runs in 1024*c*eps <= 0.5, {bad} over bound, worst ratio {worst:.2e}")
    assert runs and bad == 0


def test_criterion_05_holder_variant(record_criterion):
    P = make_direct_product(make_cyclic(4), make_cyclic(4))
    bad, worst_iters, n = 0, 0, 0
    for s in (0.6, 0.75, 1.0):
        for eps in (1e-3, 1e-4):
            for seed in range(5):
                rng = np.random.default_rng([5, seed, int(s * 100)])
                rho = distinct_character_rep(P, 3, rng)
                f = calibrate_perturbation(rho, eps, [seed, 55])[0]
                tr = product_stabilize(f, P, c=C, s_exponent=s, max_iter=30,
                                       oracle_G=HolderOracle(C, s, 2 * seed),
                                       oracle_H=HolderOracle(C, s, 2 * seed + 1), fatal=False)
                if s == 1.0:
                    PRODUCT_TRACES.append(tr)
                n += 1
                worst_iters = max(worst_iters, len(tr.iterations))
                bad += not (tr.converged and tr.final_defect <= 1e-10 and len(tr.iterations) <= 30
                            and not tr.failures())
    record_criterion(5, bad == 0, f"{n} runs, {bad} failures, max iterations {worst_iters}")
    assert bad == 0


def test_criterion_06_semidirect_degeneration(record_criterion):
    worst, n_pairs = 0.0, 0
    for gi, (a, b) in enumerate([(4, 4), (3, 2), (2, 5), (6, 3)]):
        G, H = make_cyclic(a), make_cyclic(b)
        P = make_direct_product(G, H)
        S = make_semidirect(G, H, np.tile(np.arange(a), (b, 1)))
        for d in (1, 2, 3):
            for eps in (1e-2, 1e-3, 1e-4):
                for seed in range(3):
                    f = perturbed(P.base, d, eps, 60000 + 1000 * gi + 100 * d + 10 * seed + int(-math.log10(eps)))
                    fq = UMap(S.Q, f.values)
                    tp = product_stabilize(f, P, c=C, fatal=False)
                    ts = semidirect_stabilize(fq, S, c=C, fatal=False)
                    PRODUCT_TRACES.append(tp)
                    n_pairs += 1
                    if len(tp.iterations) != len(ts.iterations):
                        worst = math.inf
                        continue
                    for rp, rs in zip(tp.iterations, ts.iterations):
                        worst = max(worst, abs(rp.defect - rs.defect), abs(rp.step_distance - rs.step_distance),
                                    abs(rp.cumulative_distance - rs.cumulative_distance))
                    worst = max(worst, abs(tp.final_defect - ts.final_defect))
    D = make_dihedral(4)
    dih_ok, dih_runs = True, 0
    for eps in (1e-5, 1e-4, 2e-4):
        for seed in range(5):
            f = perturbed(D.Q, 2, eps, 66000 + seed)
            e0 = defect(f)
            tr = semidirect_stabilize(f, D, c=C, fatal=False)
            bound = 768 * C * e0 / (1 - 1024 * C * e0)
            dih_runs += 1
            dih_ok &= tr.converged and tr.cumulative_distance <= bound + SLACK and not tr.failures()
    ok = worst <= 1e-12 and dih_ok
    record_criterion(6, ok, f"{n_pairs} trace pairs, max per-iteration gap {worst:.1e}; "
                            f"dihedral-8: {dih_runs} runs {'within' if dih_ok else 'NOT within'} bound")
    assert worst <= 1e-12
    assert dih_ok


def test_criterion_07_partition(record_criterion):
    rng = np.random.default_rng(7)
    products = ["product:2,2", "product:2,4", "product:4,4", "product:3,5", "product:2,dihedral:4",
                "product:4,2", "product:2,8"]
    splits = ["dihedral:4", "dihedral:8", "dihedral:5", "semidirect:7,2,6", "semidirect:5,2,4",
              "semidirect:3,2,2", "semidirect:8,2,3"]
    bad = 0
    for family in (products, splits):
        for i in range(1000):
            struct = parse_group(family[i % len(family)])
            n = struct.base.order
            assert n <= 16
            d = 1 + i % 3
            if i % 2:
                vals = np.array([np.eye(d)] + [random_unitary(d, rng) for _ in range(n - 1)])
                f = UMap(struct.base, vals)
            else:
                rho = random_representation(struct.base, d, rng)
                f = calibrate_perturbation(rho, 10 ** rng.uniform(-4, -0.5), [7, i])[0]
            bd = defect_breakdown(f, struct, slack=np.inf)
            bad += not bd.delta <= bd.partition_bound + SLACK
    record_criterion(7, bad == 0, f"2000 maps (1000 product, 1000 split), {bad} violations")
    assert bad == 0


def test_criterion_08_operator_laws(record_criterion):
    rng = np.random.default_rng(8)
    fails = {"norm": 0, "module": 0, "adjoint": 0}
    for _ in range(1000):
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        fam = rng.standard_normal((n, d, d)) + 1j * rng.standard_normal((n, d, d))
        w = rng.dirichlet(np.ones(n))
        mu = FiniteMean(np.arange(n), w / w.sum())
        M = matrix_mean(fam, mu)
        A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        B = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        fails["norm"] += not op_norm(M) <= float(np.dot(mu.weights, op_norm(fam))) + 1e-10
        fails["module"] += not np.max(np.abs(matrix_mean(A[None] @ fam @ B[None], mu) - A @ M @ B)) <= 1e-10
        fails["adjoint"] += not np.max(np.abs(matrix_mean(adjoint(fam), mu) - adjoint(M))) <= 1e-10
    ok = not any(fails.values())
    record_criterion(8, ok, "1000 instances per law, failures " + json.dumps(fails))
    assert ok


def test_criterion_09_mixture(record_criterion):
    rng = np.random.default_rng(9)
    bad = 0
    for i in range(1000):
        n, d, k = int(rng.integers(1, 13)), int(rng.integers(1, 5)), int(rng.integers(1, 7))
        G = make_cyclic(n) if i % 3 else parse_group(["dihedral:3", "dihedral:4", "dihedral:6"][i % 9 // 3]).Q
        base = random_representation(G, d, rng)
        reps = []
        for _ in range(k):
            if rng.random() < 0.5:
                U = random_unitary(d, rng)
                v = adjoint(U)[None] @ base.values @ U[None]
                v[0] = np.eye(d)
                reps.append(UMap.snapped(G, v, 1e-12))
            else:
                reps.append(random_representation(G, d, rng))
        w = rng.dirichlet(np.ones(k))
        bad += not mixture_defect_bound_check(reps, FiniteMean(np.arange(k), w / w.sum())).passed
    a, b = exact_cyclic_representation(2, 1, [0]), exact_cyclic_representation(2, 1, [1])
    z2 = mixture_defect_bound_check([a, b], FiniteMean.uniform(2))
    ok = bad == 0 and z2.lhs == 1.0 and z2.rhs == 2.0
    record_criterion(9, ok, f"1000 instances, {bad} violations; Z_2 example defect {z2.lhs} vs bound {z2.rhs}")
    assert ok


def test_criterion_10_chain_limit(record_criterion):
    G = make_cyclic(8)
    chain = make_subgroup_chain(G, [[4], [2], [1]])
    eps = 1e-2
    oracle = KazhdanOracle()
    bad, worst = 0, 0.0
    runs = 0
    for d in (1, 2):
        for seed in range(10):
            rho = random_representation(G, d, np.random.default_rng([10, d, seed]))
            f = calibrate_perturbation(rho, eps, [10, d, seed, 1])[0]
            fam = ChainFamily.from_oracle(f, chain, lambda m: oracle(m))
            lim = chain_limit_report(fam, eps)
            dist = sup_distance(lim.rho, f)
            runs += 1
            worst = max(worst, dist / eps)
            bad += not (is_representation(lim.rho, 1e-8) and dist <= 2 * eps)
    record_criterion(10, bad == 0, f"{runs} chains Z_2 < Z_4 < Z_8, {bad} failures, worst distance/eps {worst:.3f}")
    assert bad == 0


def test_criterion_11_block_inequalities(record_criterion):
    rng = np.random.default_rng(11)
    bad = 0
    exact_worst = 0.0
    for i in range(500):
        d1, d2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        G = make_cyclic(int(rng.integers(2, 9))) if i % 2 else make_dihedral(int(rng.integers(3, 6))).Q
        f1, f2 = random_representation(G, d1, rng), random_representation(G, d2, rng)
        g = direct_sum(f1, f2)
        exact_bd = block_decompose(g, d1)
        exact_worst = max(exact_worst, exact_bd.norms["C12"].max(), exact_bd.norms["C21"].max())
        eta = 10 ** rng.uniform(-4, -1)
        B = rng.standard_normal((d1, d2)) + 1j * rng.standard_normal((d1, d2))
        K = np.zeros((d1 + d2,) * 2, complex)
        K[:d1, d1:], K[d1:, :d1] = B, B.conj().T
        w, V = np.linalg.eigh(K / op_norm(K))
        U = (V * np.exp(1j * eta * w)) @ adjoint(V)
        vals = adjoint(U)[None] @ g.values @ U[None]
        vals[0] = np.eye(d1 + d2)
        rho = UMap.snapped(G, vals, 1e-12)
        cap = C * float(np.max(op_norm(rho.values - g.values)))  # c*eps at the measured distance
        rep = offdiag_inequality_check(rho, f1, f2, 1.0, cap)
        bd = block_decompose(rho, d1, g)
        corner_ok = all(bd.norms[k].max() <= 1 + 1e-12 for k in ("rho1", "rho2", "C12", "C21"))
        pinch_ok = bd.pinching[0] <= bd.pinching[1] + 1e-12
        bad += not (rep.passed and corner_ok and pinch_ok and max(rep.corner_residuals.values()) <= 1e-10)
    ok = bad == 0 and exact_worst <= 1e-12
    record_criterion(11, ok, f"500 instances, {bad} failures; exact sums max off-diagonal norm {exact_worst:.1e}")
    assert ok


CONFIGS = [
    {"experiment": "stabilize_single", "group": "cyclic:7", "dim": 3, "epsilons": [1e-2, 1e-3], "seeds": [0, 4]},
    {"experiment": "stabilize_product", "group": "product:4,4", "dim": 2, "epsilons": [1e-3, 1e-4], "seeds": [1, 2]},
    {"experiment": "stabilize_product", "group": "product:4,4", "dim": 2, "epsilons": [1e-3], "oracle": "holder",
     "s_exponent": 0.6, "seeds": [3]},
    {"experiment": "stabilize_semidirect", "group": "dihedral:4", "dim": 2, "epsilons": [2e-4], "seeds": [0, 1]},
    {"experiment": "mixture", "group": "cyclic:6", "dim": 3, "trials": 20, "seeds": [5]},
    {"experiment": "chain", "group": "cyclic:8", "dim": 1, "epsilons": [1e-2],
     "chain_generators": [[4], [2], [1]], "eps_net": 0.01, "seeds": [0, 1]},
    {"experiment": "blocksum", "group": "cyclic:3", "dim": 1, "epsilons": [1e-2], "c": 1.0, "seeds": [0]},
    {"experiment": "modulus_scan", "group": "cyclic:6", "dim": 2, "epsilons": [1e-2, 1e-3, 1e-4],
     "seeds": [0, 1], "trials": 4},
]


def test_criterion_12_reproducibility(record_criterion, tmp_path, monkeypatch):
    mismatched = []
    nfiles = 0
    for i, raw in enumerate(CONFIGS):
        outs = []
        for rep in range(2):
            monkeypatch.setenv("ULAMSTAB_OUTPUT_ROOT", str(tmp_path / f"run{rep}"))
            res = run_experiment(parse_config(json.dumps(dict(raw, output=f"cfg{i}"))))
            outs.append({p.name: p.read_bytes() for p in sorted(res.output_dir.glob("*.csv"))})
        nfiles += len(outs[0])
        if outs[0] != outs[1] or not outs[0]:
            mismatched.append(raw["experiment"])
    ok = not mismatched
    record_criterion(12, ok, f"{len(CONFIGS)} configs run twice, {nfiles} CSV files, mismatches: {mismatched or 'none'}")
    assert ok


def test_criterion_03_defect_recurrence_ledger(record_criterion):
    # runs after the criteria above so their s = 1 product-form traces are included
    traces = PRODUCT_TRACES + _product_sweep()
    n_iter, bad, ledger_fail = 0, 0, 0
    for tr in traces:
        assert tr.s_exponent == 1.0
        ledger_fail += len(tr.failures())
        d = tr.defects
        c = tr.c
        for k, rec in enumerate(tr.iterations):
            n_iter += 1
            d_next = d[k + 1]
            ok = d_next <= 128 * c * c * rec.defect**2 + SLACK
            ok &= rec.step_distance <= 5 * c * rec.defect + d_next / 8 + SLACK
            bad += not ok
    ok = bad == 0 and ledger_fail == 0
    record_criterion(3, ok, f"{len(traces)} runs, {n_iter} iterations, {bad} recurrence violations, "
                            f"{ledger_fail} ledger failures")
    assert bad == 0 and ledger_fail == 0
