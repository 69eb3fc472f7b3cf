"""Batch experiments behind the CLI.

Every experiment streams rows to a CSV file (rates in bits) and writes a
JSON manifest next to it.  The CSV holds only quantities that are a pure
function of the experiment settings and seed; wall time and environment go in the manifest.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import bitalloc as ba
from .det_sinr import det_sum_rate
from .montecarlo import ergodic_sum_rate, trial_seed
from .regopt import golden_section_alpha, optimize_alpha
from .scenario import Scenario, build_scenario

LOG2E = 1.0 / math.log(2.0)
FAILED = "FAILED"


class ExperimentError(RuntimeError):
    pass


def bits(nats: float) -> float:
    return nats * LOG2E


@dataclass
class ExperimentSpec:
    name: str
    scenario: dict | None = None
    sweep: dict[str, Any] = field(default_factory=dict)
    trials: int = 500
    master_seed: int = 0
    out_dir: str = "results"
    workers: int = 1

    def validate(self) -> None:
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; known: {sorted(EXPERIMENTS)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must fit in 64 bits")
        for key, grid in self.sweep.items():
            if isinstance(grid, list) and grid and all(isinstance(v, (int, float)) for v in grid):
                if np.any(np.diff(grid) <= 0):
                    raise ValueError(f"sweep axis {key!r} must be strictly increasing")
            if isinstance(grid, list) and not grid:
                raise ValueError(f"sweep axis {key!r} is empty")

    def axis(self, key: str):
        return self.sweep.get(key, EXPERIMENTS[self.name].defaults[key])


@dataclass
class ExperimentResult:
    name: str
    columns: list[str]
    rows: list[dict]
    csv_path: Path
    manifest_path: Path
    ok: bool = True
    error: str | None = None


class CsvSink:
    """Row-at-a-time CSV writer; rows are flushed as they arrive."""

    def __init__(self, path: Path, columns: list[str]):
        self.path = path
        self.columns = columns
        self.rows: list[dict] = []
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.DictWriter(self._fh, fieldnames=columns, lineterminator="\n")
        self._w.writeheader()

    def add(self, **row) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"row is missing {sorted(missing)}")
        self._w.writerow({k: _fmt(row[k]) for k in self.columns})
        self._fh.flush()
        self.rows.append(row)

    def fail(self, msg: str) -> None:
        marker = {k: "" for k in self.columns}
        marker[self.columns[0]] = FAILED
        marker[self.columns[-1]] = msg.replace("\n", " ")
        self._w.writerow(marker)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class Experiment:
    columns: list[str]
    defaults: dict[str, Any]
    run: Callable[[ExperimentSpec, CsvSink], None]
    check: Callable[[list[dict]], list[tuple[str, bool, str]]]


EXPERIMENTS: dict[str, Experiment] = {}


def experiment(name: str, columns: list[str], **defaults):
    def deco(fn):
        EXPERIMENTS[name] = Experiment(columns, defaults, fn, lambda rows: [])
        return fn
    return deco


def checker(name: str):
    def deco(fn):
        EXPERIMENTS[name].check = fn
        return fn
    return deco


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    spec.validate()
    exp = EXPERIMENTS[spec.name]
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{spec.name}.csv"
    manifest_path = out / f"{spec.name}.manifest.json"
    sink = CsvSink(csv_path, exp.columns)
    t0 = time.perf_counter()
    err = None
    try:
        exp.run(spec, sink)
    except Exception as e:  # flush what we have, then surface the failure
        err = f"{type(e).__name__}: {e}"
        sink.fail(err)
    finally:
        sink.close()
    manifest = {
        "experiment": spec.name,
        "status": "failed" if err else "ok",
        "error": err,
        "spec": asdict(spec),
        "csv": csv_path.name,
        "rows": len(sink.rows),
        "wall_time_s": time.perf_counter() - t0,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    res = ExperimentResult(spec.name, exp.columns, sink.rows, csv_path, manifest_path, err is None, err)
    if err:
        raise ExperimentError(f"experiment {spec.name} failed: {err}")
    return res


# ---------------------------------------------------------------------------
# helpers


def _seed(spec: ExperimentSpec, point: int, tag: int) -> int:
    return trial_seed(spec.master_seed, point, tag)


def _mc(s: Scenario, alpha: float, spec: ExperimentSpec, seed: int):
    return ergodic_sum_rate(s, alpha, spec.trials, seed, workers=spec.workers)


def _mc_cols(est) -> dict:
    return dict(mc_bits=bits(est.mean), mc_se_bits=bits(est.stderr), trials=est.trials,
                power_excess=est.max_power_excess, binding_gap=est.max_binding_gap)


def _naive_alpha(s: Scenario) -> float:
    return 1.0 / (s.M * s.rho * float(np.min(s.beta)))


def _bits_str(b: np.ndarray) -> str:
    return ";".join("-".join(str(int(x)) for x in row) for row in np.asarray(b))


def _case_label(t) -> str:
    return "-".join(repr(float(x)) for x in t) if isinstance(t, list) else repr(float(t))


MC_COLS = ["mc_bits", "mc_se_bits", "seed", "trials", "power_excess", "binding_gap"]


# ---------------------------------------------------------------------------
# deterministic equivalent vs Monte-Carlo


@experiment("fig2", ["case", "snr_db", "policy", "alpha", "det_bits", *MC_COLS],
            snr_db=[0.0, 5.0, 10.0, 15.0, 20.0], tau2_cases=[0.0, 0.1, 0.2, 0.3, [0.0, 0.1, 0.2, 0.3]],
            policies=["opt", "naive"])
def _fig2(spec, sink):
    base = spec.scenario or {"M": 4, "N": [8] * 4, "K": 32, "correlation": {"kind": "identity"}}
    point = 0
    for case in spec.axis("tau2_cases"):
        for snr in spec.axis("snr_db"):
            cfg = {k: v for k, v in base.items() if k != "rho"}
            s = build_scenario({**cfg, "snr_db": snr, "tau2": case})
            for policy in spec.axis("policies"):
                a = optimize_alpha(s).alpha_opt if policy == "opt" else _naive_alpha(s)
                seed = _seed(spec, point, 2)
                est = _mc(s, a, spec, seed)
                sink.add(case=_case_label(case), snr_db=float(snr), policy=policy, alpha=a,
                         det_bits=bits(det_sum_rate(s, a)), seed=seed, **_mc_cols(est))
                point += 1


def agreement_ok(det: float, mc: float, se: float, rel: float = 0.03, nsig: float = 3.0) -> bool:
    return abs(mc - det) <= max(nsig * se, rel * det)


@checker("fig2")
def _fig2_check(rows):
    out = []
    for case, policy in dict.fromkeys((r["case"], r["policy"]) for r in rows):
        sub = [r for r in rows if r["case"] == case and r["policy"] == policy]
        gap = max(abs(r["mc_bits"] - r["det_bits"]) / r["det_bits"] for r in sub)
        ok = all(agreement_ok(r["det_bits"], r["mc_bits"], r["mc_se_bits"]) for r in sub)
        out.append((f"tau2={case} alpha={policy}: max relative gap {gap:.4f}", ok, "<= max(3 se, 3%)"))
    return out


def fig3_scenario(N1: int, tau_case: str, seed: int) -> Scenario:
    return build_scenario({
        "M": 2, "N": [N1, N1], "K": 2 * N1, "snr_db": 20.0, "seed": seed,
        "correlation": {"kind": "random_exp", "r_range": [0.0, 0.9], "gain_range": [0.5, 2.0]},
        "tau2": {"kind": "uniform_random"} if tau_case == "rand" else 0.0,
    })


@experiment("fig3", ["tau_case", "N1", "draw", "alpha", "det_bits", "rel_err", *MC_COLS],
            N1=[4, 8, 16, 32], draws=20, tau_cases=["zero", "rand"])
def _fig3(spec, sink):
    point = 0
    for case in spec.axis("tau_cases"):
        for N1 in spec.axis("N1"):
            for d in range(int(spec.axis("draws"))):
                s = fig3_scenario(int(N1), case, _seed(spec, point, 3))
                a = golden_section_alpha(s).alpha_opt
                det = det_sum_rate(s, a)
                seed = _seed(spec, point, 2)
                est = _mc(s, a, spec, seed)
                sink.add(tau_case=case, N1=int(N1), draw=d, alpha=a, det_bits=bits(det),
                         rel_err=(est.mean - det) / est.mean, seed=seed, **_mc_cols(est))
                point += 1


def mean_abs_rel_err(rows, case) -> list[tuple[int, float]]:
    sizes = list(dict.fromkeys(r["N1"] for r in rows if r["tau_case"] == case))
    return [(n, float(np.mean([abs(r["rel_err"]) for r in rows
                               if r["tau_case"] == case and r["N1"] == n]))) for n in sizes]


@checker("fig3")
def _fig3_check(rows):
    out = []
    for case in dict.fromkeys(r["tau_case"] for r in rows):
        seq = mean_abs_rel_err(rows, case)
        vals = [v for _, v in seq]
        ok = all(b < a for a, b in zip(vals, vals[1:]))
        out.append((f"tau={case}: mean |rel err| " + ", ".join(f"N1={n}:{v:.4f}" for n, v in seq),
                    ok, "strictly decreasing"))
    return out


@experiment("alpha_compare", ["label", "alpha", "det_bits", *MC_COLS],
            alpha=list(np.geomspace(1e-3, 10.0, 13)))
def _alpha_compare(spec, sink):
    base = spec.scenario or {
        "M": 2, "N": [4, 4], "K": 4, "snr_db": 10.0, "seed": _seed(spec, 0, 3),
        "correlation": {"kind": "random_exp", "r_range": [0.0, 0.9], "gain_range": [0.5, 2.0]},
        "tau2": {"kind": "uniform_random"},
    }
    s = build_scenario(base)
    seed = _seed(spec, 0, 2)  # common random numbers across alpha
    a_opt = golden_section_alpha(s).alpha_opt
    pts = [("grid", float(a)) for a in spec.axis("alpha")] + [("det_opt", a_opt), ("naive", _naive_alpha(s))]
    for label, a in pts:
        est = _mc(s, a, spec, seed)
        sink.add(label=label, alpha=a, det_bits=bits(det_sum_rate(s, a)), seed=seed, **_mc_cols(est))


@checker("alpha_compare")
def _alpha_compare_check(rows):
    best = max((r for r in rows if r["label"] == "grid"), key=lambda r: r["mc_bits"])
    opt = next(r for r in rows if r["label"] == "det_opt")
    ok = opt["mc_bits"] >= best["mc_bits"] - 3 * best["mc_se_bits"] - 0.01 * best["mc_bits"]
    return [(f"ergodic rate at deterministic optimum {opt['mc_bits']:.4f} vs grid best "
             f"{best['mc_bits']:.4f} (alpha={best['alpha']:.4g})", ok, "within 1% + 3 se")]


# ---------------------------------------------------------------------------
# bit allocation


def _two_cell(N, gains, snr_db: float, K: int = 4) -> Scenario:
    return build_scenario({"M": 2, "N": list(N), "K": K, "snr_db": snr_db,
                           "correlation": [{"kind": "identity", "gain": g} for g in gains], "tau2": 0.0})


def _alloc_rows(spec, sink, s, B, point, extra, mc=True):
    opt = ba.search_allocation(s, B, "full", workers=spec.workers)
    uni = np.array([ba.uniform_allocation(B, s.M, opt.ranking.order[k]) for k in range(s.K)])
    r_uni, a_uni = ba.evaluate_allocation(s, uni)
    for name, b, a, r in (("opt", opt.allocation.bits, opt.alpha, opt.sum_rate_nats), ("uniform", uni, a_uni, r_uni)):
        row = dict(extra, budget=B, allocation=name, bits=_bits_str(b), alpha=a, det_bits=bits(r))
        if mc:
            seed = _seed(spec, point, 2)
            est = _mc(s.with_tau2(ba.tau2_matrix(b, s.N)), a, spec, seed)
            row.update(seed=seed, **_mc_cols(est))
        else:
            row.update(mc_bits="", mc_se_bits="", seed="", trials=0, power_excess="", binding_gap="")
        sink.add(**row)


ALLOC_COLS = ["budget", "allocation", "bits", "alpha", "det_bits", *MC_COLS]


@experiment("fig4", ["snr_db", *ALLOC_COLS], snr_db=[0.0, 10.0, 20.0, 30.0], budget=8, gain_ratio=0.0125)
def _fig4(spec, sink):
    for p, snr in enumerate(spec.axis("snr_db")):
        s = _two_cell((4, 4), (1.0, float(spec.axis("gain_ratio"))), snr)
        _alloc_rows(spec, sink, s, int(spec.axis("budget")), p, {"snr_db": float(snr)})


@experiment("fig5", ["ratio_db", *ALLOC_COLS], ratio_db=[0.0, 5.0, 10.0, 15.0, 20.0], budgets=[4, 8, 16])
def _fig5(spec, sink):
    for B in spec.axis("budgets"):
        for r in spec.axis("ratio_db"):
            s = _two_cell((4, 4), (1.0, 10.0 ** (-r / 10.0)), 10.0)
            _alloc_rows(spec, sink, s, int(B), 0, {"ratio_db": float(r)}, mc=False)


@experiment("fig6", ["antenna_ratio", *ALLOC_COLS], antenna_ratio=[1, 2, 3, 4], budgets=[8, 16, 48])
def _fig6(spec, sink):
    p = 0
    for B in spec.axis("budgets"):
        for q in spec.axis("antenna_ratio"):
            s = _two_cell((4, 4 * int(q)), (1.0, 1.0), 10.0)
            _alloc_rows(spec, sink, s, int(B), p, {"antenna_ratio": int(q)})
            p += 1


def _opt_vs_uniform(rows, key):
    out = []
    for B in dict.fromkeys(r["budget"] for r in rows):
        pts = dict.fromkeys(r[key] for r in rows if r["budget"] == B)
        worst = min(
            next(r["det_bits"] for r in rows if r["budget"] == B and r[key] == x and r["allocation"] == "opt")
            - next(r["det_bits"] for r in rows if r["budget"] == B and r[key] == x and r["allocation"] == "uniform")
            for x in pts)
        out.append((f"B={B}: min deterministic gain of optimal over uniform {worst:.4g} bits", worst >= -1e-9, ">= 0"))
    return out


for _name, _key in (("fig4", "snr_db"), ("fig5", "ratio_db"), ("fig6", "antenna_ratio")):
    EXPERIMENTS[_name].check = (lambda k: lambda rows: _opt_vs_uniform(rows, k))(_key)


@experiment("fig7", ["budget", "M", "full", "restricted"], budget=list(range(21)), M=[3, 5])
def _fig7(spec, sink):
    for M in spec.axis("M"):
        for B in spec.axis("budget"):
            sink.add(budget=int(B), M=int(M), full=len(ba.enumerate_full(int(B), int(M))),
                     restricted=len(ba.enumerate_restricted(int(B), int(M))))


@checker("fig7")
def _fig7_check(rows):
    out = []
    for M, full, res in ((5, 715, 23), (3, 55, 12)):
        r = next((r for r in rows if r["budget"] == 9 and r["M"] == M), None)
        got = (r["full"], r["restricted"]) if r else None
        out.append((f"B=9, M={M}: {got}", got == (full, res), f"== ({full}, {res})"))
    return out


FIG8_GAINS_DB = (0.0, 5.0, -10.0)  # BS 1 is 5 dB below BS 2 and 10 dB above BS 3


def fig8_scenario(seed: int, N: int = 3, K: int = 3, snr_db: float = 20.0) -> Scenario:
    """Per-BS random exponential correlation shared by all users."""
    rng = np.random.default_rng(seed)
    corr = [{"kind": "exp", "r": float(rng.uniform(0.0, 0.9)), "gain": 10.0 ** (g / 10.0)} for g in FIG8_GAINS_DB]
    return build_scenario({"M": 3, "N": [N] * 3, "K": K, "snr_db": snr_db, "correlation": corr, "tau2": 0.0})


@experiment("fig8", ["draw", "space", "bits", "alpha", "det_bits", "evaluated", "space_size", *MC_COLS],
            draws=20, budget=9)
def _fig8(spec, sink):
    B = int(spec.axis("budget"))
    for d in range(int(spec.axis("draws"))):
        s = fig8_scenario(_seed(spec, d, 3))
        for space in ("full", "restricted"):
            r = ba.search_allocation(s, B, space, workers=spec.workers)
            seed = _seed(spec, d, 2)
            est = _mc(s.with_tau2(r.allocation.tau2(s.N)), r.alpha, spec, seed)
            sink.add(draw=d, space=space, bits=_bits_str(r.allocation.bits), alpha=r.alpha,
                     det_bits=bits(r.sum_rate_nats), evaluated=r.evaluated, space_size=r.space_size,
                     seed=seed, **_mc_cols(est))


@checker("fig8")
def _fig8_check(rows):
    full = {r["draw"]: r for r in rows if r["space"] == "full"}
    res = {r["draw"]: r for r in rows if r["space"] == "restricted"}
    ratio = min(res[d]["det_bits"] / full[d]["det_bits"] for d in full)
    frac = max(res[d]["evaluated"] / full[d]["evaluated"] for d in full)
    return [(f"worst restricted/full deterministic rate {ratio:.5f}", ratio >= 0.99, ">= 0.99"),
            (f"restricted/full candidates {frac:.4f}", frac <= 12 / 55 + 1e-12, "<= 12/55")]


# ---------------------------------------------------------------------------
# report


def emit_report(results: list[ExperimentResult]) -> str:
    if not results:
        raise ValueError("no experiments completed")
    lines = ["# Experiment report", ""]
    for res in results:
        lines.append(f"## {res.name}")
        lines.append(f"csv: {res.csv_path}  rows: {len(res.rows)}")
        if not res.ok:
            lines.append(f"FAILED: {res.error}")
        for desc, ok, crit in EXPERIMENTS[res.name].check(res.rows):
            lines.append(f"- [{'PASS' if ok else 'FAIL'}] {desc} ({crit})")
        lines.append("")
    return "\n".join(lines)
