"""Seeded experiment suites behind the command line runner.

Every task is a pure function of (config, epsilon index, seed); tasks may run
in a process pool and results are assembled in task order, so CSV output is
byte-identical across runs and worker counts.
"""

from __future__ import annotations

import io
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .blocksum import diagonal_sum_experiment
from .config import ExperimentConfig
from .groups import FiniteGroup, ProductStructure, find_generator, make_semidirect, make_subgroup_chain
from .linalg import FiniteMean, InvertibilityError, random_unitary
from .limits import ChainFamily, ClusterError, chain_limit_report, mixture_defect_bound_check
from .repmap import CalibrationError, UMap, calibrate_perturbation, random_representation, sup_distance
from .stabilizer import (HolderOracle, KazhdanOracle, StabilizerTrace, product_stabilize,
                         semidirect_stabilize, stabilize_single)

__all__ = ["ModulusScanResult", "RunResult", "modulus_scan", "output_dir", "run_experiment"]

RNG_NAME = "numpy.random.PCG64"
OUTPUT_ROOT_ENV = "ULAMSTAB_OUTPUT_ROOT"


def _f(x: float) -> str:
    return f"{x:.17g}"


@dataclass
class TaskResult:
    files: dict[str, str] = field(default_factory=dict)
    rows: list[list[str]] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    ledger: dict[str, int] = field(default_factory=lambda: {"pass": 0, "fail": 0, "na": 0})


def _rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(list(key)))


def _perturbed(group: FiniteGroup, d: int, eps: float, seed: int, ei: int, tag: int = 0):
    rho = random_representation(group, d, _rng(seed, ei, tag, 0))
    f, _ = calibrate_perturbation(rho, eps, [seed, ei, tag, 1])
    return rho, f


def _corrupt(group: FiniteGroup, iteration: int, magnitude: float, n: int, m: UMap) -> UMap:
    if n != iteration or group.order < 2:
        return m
    vals = np.array(m.values)
    vals[1] = vals[1] * np.exp(1j * magnitude)
    return UMap(group, vals)


def _hook(cfg: ExperimentConfig, group: FiniteGroup):
    if cfg.inject_corruption is None:
        return None
    ic = cfg.inject_corruption
    return partial(_corrupt, group, ic["iteration"], ic["magnitude"])


def _trace_result(tr: StabilizerTrace, name: str, eps: float, seed: int, res: TaskResult,
                  cfg: ExperimentConfig) -> None:
    res.files[name] = tr.to_csv()
    for r in tr.iterations:
        for e in r.ledger:
            res.ledger[e.verdict] += 1
    for n, e in tr.failures():
        res.failures.append({"kind": "ledger", "id": e.id, "iteration": n, "lhs": e.lhs, "rhs": e.rhs,
                             "eps": eps, "seed": seed})
    if not tr.converged:
        res.failures.append({"kind": "nonconvergence", "eps": eps, "seed": seed,
                             "final_defect": tr.final_defect, "max_iter": cfg.max_iter})
    res.rows.append([_f(eps), str(seed), _f(tr.initial_defect), str(len(tr.iterations)),
                     _f(tr.final_defect), _f(tr.final_distance), _f(tr.cumulative_distance),
                     str(tr.converged).lower(), str(len(tr.failures()))])


SUMMARY_HEADER = ["eps", "seed", "initial_defect", "iterations", "final_defect", "final_distance",
                  "cumulative", "converged", "ledger_failures"]


def _oracles(cfg: ExperimentConfig, seed: int):
    if cfg.oracle == "holder":
        return HolderOracle(cfg.c, cfg.s_exponent, 2 * seed), HolderOracle(cfg.c, cfg.s_exponent, 2 * seed + 1)
    return KazhdanOracle(), KazhdanOracle()


def _structure(cfg: ExperimentConfig):
    g = cfg.group_object()
    if cfg.experiment == "stabilize_semidirect" and isinstance(g, ProductStructure):
        G, H = g.left, g.right
        return make_semidirect(G, H, np.tile(np.arange(G.order), (H.order, 1)), name=g.name)
    return g


def _base_group(g) -> FiniteGroup:
    return g if isinstance(g, FiniteGroup) else g.base


def _task(cfg: ExperimentConfig, ei: int, eps: float, seed: int) -> TaskResult:
    res = TaskResult()
    kind = cfg.experiment
    struct = _structure(cfg)
    G = _base_group(struct)
    tag = f"e{ei}_s{seed}"
    try:
        if kind in ("stabilize_single", "stabilize_product", "stabilize_semidirect"):
            _, f = _perturbed(G, cfg.dim, eps, seed, ei)
            kw = dict(max_iter=cfg.max_iter, tol=cfg.tol, fatal=False, tolerances=cfg.tolerances,
                      hook=_hook(cfg, G))
            if kind == "stabilize_single":
                tr = stabilize_single(f, **kw)
            else:
                oG, oH = _oracles(cfg, seed)
                run = product_stabilize if kind == "stabilize_product" else semidirect_stabilize
                tr = run(f, struct, cfg.c, cfg.s_exponent, oracle_G=oG, oracle_H=oH, **kw)
            _trace_result(tr, f"trace_{tag}.csv", eps, seed, res, cfg)
        elif kind == "mixture":
            _mixture_task(cfg, G, ei, eps, seed, res)
        elif kind == "chain":
            _chain_task(cfg, G, ei, eps, seed, res)
        elif kind == "blocksum":
            _, f1 = _perturbed(G, cfg.dim, eps, seed, ei, 1)
            _, f2 = _perturbed(G, cfg.dim, eps, seed, ei, 2)
            rep = diagonal_sum_experiment(f1, f2, cfg.c, cfg.L, cfg.Lprime, cfg.s_exponent, eps)
            res.files[f"blocksum_{tag}.csv"] = rep.to_csv()
            od = rep.offdiag
            if od.precondition_ok and not (od.upper_ok and od.lower_ok):
                res.failures.append({"kind": "block_inequality", "eps": eps, "seed": seed})
            res.rows.append([_f(eps), str(seed), _f(rep.achieved_distance), _f(rep.factor_distances[0]),
                             _f(rep.factor_distances[1]), _f(od.norm_C12), _f(od.norm_C21),
                             _f(rep.rho1_defect), _f(rep.threshold), str(od.precondition_ok).lower()])
        elif kind == "modulus_scan":
            _scan_task(cfg, G, ei, eps, seed, res)
    except (CalibrationError, InvertibilityError, ClusterError) as exc:
        res.failures.append({"kind": type(exc).__name__, "eps": eps, "seed": seed, "message": str(exc)})
    return res


def _mixture_task(cfg, G, ei, eps, seed, res):
    for t in range(cfg.trials):
        rng = _rng(seed, ei, t, 7)
        base = random_representation(G, cfg.dim, rng)
        reps = []
        for _ in range(cfg.support):
            if rng.random() < 0.5:
                U = random_unitary(cfg.dim, rng)
                vals = U.conj().T[None] @ base.values @ U[None]
                vals[0] = np.eye(cfg.dim)
                reps.append(UMap.snapped(G, vals, 1e-12))
            else:
                reps.append(random_representation(G, cfg.dim, rng))
        w = rng.dirichlet(np.ones(cfg.support))
        w = w / w.sum()
        rep = mixture_defect_bound_check(reps, FiniteMean(np.arange(cfg.support), w))
        if not rep.passed:
            res.failures.append({"kind": "mixture_bound", "seed": seed, "trial": t,
                                 "lhs": rep.lhs, "rhs": rep.rhs})
        res.rows.append([str(seed), str(t), _f(rep.lhs), _f(rep.rhs), str(rep.passed).lower()])


def _chain_task(cfg, G, ei, eps, seed, res):
    chain = make_subgroup_chain(G, [list(level) for level in cfg.chain_generators])
    _, f = _perturbed(G, cfg.dim, eps, seed, ei)
    oracle = KazhdanOracle()
    fam = ChainFamily.from_oracle(f, chain, lambda m: oracle(m, 0))
    lim = chain_limit_report(fam, cfg.eps_net)
    tag = f"e{ei}_s{seed}"
    res.files[f"chain_{tag}.csv"] = lim.to_csv(fam)
    dist = sup_distance(lim.rho, f)
    slack = cfg.tolerances.ledger_slack
    if lim.defect > 2 * cfg.eps_net + slack:
        res.failures.append({"kind": "chain_defect", "eps": eps, "seed": seed, "defect": lim.defect})
    if dist > max(fam.oracle_distances) + cfg.eps_net + slack:
        res.failures.append({"kind": "chain_distance", "eps": eps, "seed": seed, "distance": dist})
    res.rows.append([_f(eps), str(seed), _f(lim.defect), _f(dist), _f(max(fam.oracle_distances)),
                     " ".join(map(str, lim.cluster))])


def _scan_task(cfg, G, ei, eps, seed, res):
    if cfg.include_exact:
        rho = random_representation(G, cfg.dim, _rng(seed, ei, 0, 0))
        tr = stabilize_single(rho, tol=cfg.tol, max_iter=cfg.max_iter, fatal=False)
        res.rows.append([_f(eps), str(seed), "exact", _f(0.0), _f(tr.final_distance),
                         _f(tr.final_distance / eps), str(tr.converged).lower()])
    for t in range(cfg.trials):
        try:
            _, f = _perturbed(G, cfg.dim, eps, seed, ei, t + 1)
        except CalibrationError as exc:
            res.failures.append({"kind": "calibration", "eps": eps, "seed": seed, "trial": t,
                                 "message": str(exc), "fatal": False})
            continue
        tr = stabilize_single(f, tol=cfg.tol, max_iter=cfg.max_iter, fatal=False)
        for (n, e) in tr.failures():
            res.failures.append({"kind": "ledger", "id": e.id, "iteration": n, "lhs": e.lhs,
                                 "rhs": e.rhs, "eps": eps, "seed": seed, "trial": t})
        for r in tr.iterations:
            for e in r.ledger:
                res.ledger[e.verdict] += 1
        res.rows.append([_f(eps), str(seed), f"trial{t}", _f(tr.initial_defect), _f(tr.final_distance),
                         _f(tr.final_distance / eps), str(tr.converged).lower()])


def _csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(r) + "\n")
    return buf.getvalue()


def _run_tasks(cfg: ExperimentConfig) -> list[TaskResult]:
    jobs = [(ei, eps, seed) for ei, eps in enumerate(cfg.epsilons) for seed in cfg.seeds]
    fn = partial(_run_one, cfg)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _run_one(cfg: ExperimentConfig, job) -> TaskResult:
    return _task(cfg, *job)


# ---------------------------------------------------------------------------
# modulus scan

@dataclass
class ModulusScanResult:
    epsilons: tuple[float, ...]
    best: tuple[float, ...]  # min achieved distance over perturbed trials
    worst: tuple[float, ...]  # max achieved distance over perturbed trials
    trials: tuple[int, ...]
    converged: tuple[int, ...]
    seeds: tuple[int, ...]
    rows: list[list[str]]  # per-trial rows, exact-representation rows included

    @property
    def best_ratios(self) -> tuple[float, ...]:
        return tuple(b / e for b, e in zip(self.best, self.epsilons))

    @property
    def worst_ratios(self) -> tuple[float, ...]:
        return tuple(w / e for w, e in zip(self.worst, self.epsilons))

    def to_csv(self) -> str:
        rows = [[_f(e), str(n), str(c), _f(b), _f(w), _f(b / e), _f(w / e)]
                for e, b, w, n, c in zip(self.epsilons, self.best, self.worst, self.trials, self.converged)]
        return _csv(["eps", "trials", "converged", "best_distance", "worst_distance", "best_ratio",
                     "worst_ratio"], rows)

    def trials_csv(self) -> str:
        return _csv(["eps", "seed", "trial", "defect", "distance", "ratio", "converged"], self.rows)


def _assemble_scan(cfg: ExperimentConfig, results: list[TaskResult]) -> ModulusScanResult:
    rows = [r for res in results for r in res.rows]
    best, worst, counts, conv = [], [], [], []
    for eps in cfg.epsilons:
        key = _f(eps)
        ds = [float(r[4]) for r in rows if r[0] == key and r[2] != "exact"]
        cs = [r[6] == "true" for r in rows if r[0] == key and r[2] != "exact"]
        best.append(min(ds) if ds else float("nan"))
        worst.append(max(ds) if ds else float("nan"))
        counts.append(len(ds))
        conv.append(sum(cs))
    return ModulusScanResult(tuple(cfg.epsilons), tuple(best), tuple(worst), tuple(counts), tuple(conv),
                             tuple(cfg.seeds), rows)


def modulus_scan(config: ExperimentConfig) -> ModulusScanResult:
    if config.experiment != "modulus_scan":
        config = replace(config, experiment="modulus_scan")
    return _assemble_scan(config, _run_tasks(config))


# ---------------------------------------------------------------------------
# runner

@dataclass
class RunResult:
    exit_status: int
    output_dir: Path
    artifacts: list[str]
    failures: list[dict]
    manifest: dict


def output_dir(cfg: ExperimentConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    out = Path(cfg.output)
    if root:
        return Path(root) / (out.name if out.is_absolute() else out)
    return out


_HEADERS = {
    "mixture": ["seed", "trial", "lhs", "rhs", "passed"],
    "chain": ["eps", "seed", "defect", "distance", "max_oracle_distance", "cluster"],
    "blocksum": ["eps", "seed", "achieved_distance", "factor1_distance", "factor2_distance", "norm_C12",
                 "norm_C21", "rho1_defect", "threshold", "precondition_ok"],
}


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Execute the configured suite and write CSV files plus manifest.json."""
    start = time.perf_counter()
    results = _run_tasks(config)
    files: dict[str, str] = {}
    for res in results:
        files.update(res.files)
    failures = [f for res in results for f in res.failures]
    if config.experiment == "modulus_scan":
        scan = _assemble_scan(config, results)
        files["modulus_scan.csv"] = scan.to_csv()
        files["modulus_trials.csv"] = scan.trials_csv()
        if find_generator(_base_group(_structure(config))) is not None:
            for e, b in zip(scan.epsilons, scan.best):
                if e <= 0.01 and b > 2 * e + config.tolerances.ledger_slack:
                    failures.append({"kind": "scan_window", "eps": e, "best_distance": b})
    else:
        header = _HEADERS.get(config.experiment, SUMMARY_HEADER)
        files["summary.csv"] = _csv(header, [r for res in results for r in res.rows])
    hard = [f for f in failures if f.get("fatal", True)]
    ledger = {k: sum(res.ledger[k] for res in results) for k in ("pass", "fail", "na")}
    status = 0 if not hard else 1

    out = output_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (out / name).write_text(text)
    manifest = {
        "config": config.to_dict(),
        "versions": {"ulamstab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "jsonschema": _version_of(jsonschema)},
        "rng": RNG_NAME,
        "wall_time_s": time.perf_counter() - start,
        "ledger": ledger,
        "failures": failures,
        "exit_status": status,
        "artifacts": sorted(files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))
    return RunResult(status, out, sorted(files), failures, manifest)


def _version_of(mod) -> str:
    try:
        from importlib.metadata import version
        return version(mod.__name__)
    except Exception:
        return getattr(mod, "__version__", "unknown")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    return str(o)


def failure_record(result: RunResult) -> str:
    """One-line JSON failure record for stderr."""
    ids = sorted({f["id"] for f in result.failures if f.get("kind") == "ledger"})
    return json.dumps({"status": "failed", "exit_status": result.exit_status, "ledger_ids": ids,
                       "failures": result.failures[:50]}, sort_keys=True, default=_jsonable)
