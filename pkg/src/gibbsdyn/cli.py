"""Command-line entry point and artifact persistence.

Commands:

* ``sample``   -- run Gibbs chains, write the binary sample dump and
                  diagnostics sidecar;
* ``validate`` -- statistical identity suites (GNZ, second-order GNZ,
                  free-case oracles, correlation bounds, partition algebra);
                  exits nonzero on any failure;
* ``dynamics`` -- jump-process runs plus stationarity comparison;
* ``scaling``  -- the full generator-convergence study, one per s value;
* ``report``   -- re-render the CSV/JSON artifacts of a previous scaling
                  run from its raw results, without recomputing.

Exit codes: 0 success, 1 validation/configuration failure, 2 runtime error.
All CSV cells are written with ``repr`` so a rerun with the same
configuration and seed is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_config
from .correlation import (
    check_ruelle,
    count_partitions,
    estimate_k1,
    estimate_k1_gnz,
    estimate_k2_radial,
    k_to_u,
    laplace_series,
    empirical_laplace,
    u_to_k,
    CallableCorrelation,
    PoissonCorrelation,
    write_radial_csv,
)
from .dynamics import simulate_glauber, simulate_kawasaki, stationarity_test, write_trajectory_csv
from .functions import ExpCylinderFunction, ScaledKernel
from .gibbs import (
    PairWindowCylinderFunctional,
    PairWindowFunctional,
    DeathPairFunctional,
    DeathIntensityFunctional,
    SampleSet,
    WindowCylinderFunctional,
    WindowFunctional,
    double_gnz_residual,
    gnz_residual,
    run_chains,
    write_samples,
)
from .potential import PairPotential, ModelParams
from .scaling import ScalingStudy, StudyReport, run_study
from .statsutil import poisson_chisquare


class ValidationFailure(RuntimeError):
    pass


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _manifest(out: Path, cfg: RunConfig, command: str, t0: float, extra=None) -> None:
    payload = {
        "command": command,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "versions": {"gibbsdyn": __version__, "numpy": np.__version__},
        "wall_time_s": time.time() - t0,
    }
    if extra:
        payload.update(extra)
    _write_json(out / "manifest.json", payload)


def _prepare_out(cfg: RunConfig, args) -> Path:
    out = Path(args.out if args.out else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.raw)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_sample(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _prepare_out(cfg, args)
    model = cfg.model(cfg.s_values[0])
    samples = run_chains(model, cfg.sampler, cfg.n_samples, threads=args.threads)
    write_samples(out / "samples.bin", samples)
    _manifest(out, cfg, "sample", t0, {"n_samples": len(samples)})
    print(f"wrote {len(samples)} samples to {out / 'samples.bin'}")
    return 0


def _functional_suite(model, f):
    c = model.torus.wrap(f.center + 0.0)
    singles = [
        ("window", WindowFunctional(model, center=c, radius=3.0 * f.radius)),
        ("window*cyl", WindowCylinderFunctional(model, center=c, radius=2.0 * f.radius, f=f)),
        ("death-intensity", DeathIntensityFunctional(model, center=c, radius=f.radius, f=f)),
    ]
    pairs = [
        ("pair-window", PairWindowFunctional(model, center=c, radius=3.0 * f.radius)),
        ("pair-window*cyl", PairWindowCylinderFunctional(model, center=c, radius=2.0 * f.radius, f=f)),
        ("death-pair", DeathPairFunctional(model, center=c, radius=f.radius, f=f)),
    ]
    return singles, pairs


def cmd_validate(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _prepare_out(cfg, args)
    rows = []

    def record(name, ok, detail):
        rows.append({"check": name, "passed": bool(ok), "detail": detail})

    # partition algebra (exact)
    bells = [count_partitions(n) for n in range(1, 7)]
    record("bell-numbers", bells == [1, 2, 5, 15, 52, 203], f"{bells}")
    rng = np.random.default_rng(cfg.seed)
    ok = True
    for n in (2, 3, 4, 5):
        u_tables = [CallableCorrelation(m, lambda p, m=m: 0.2 + 0.1 * math.cos(float(np.sum(p)) + m))
                    for m in range(1, n + 1)]
        k_tables = [CallableCorrelation(m, lambda p: u_to_k(u_tables, p)) for m in range(1, n + 1)]
        pts = rng.uniform(0, cfg.torus.side, size=(n, cfg.torus.dimension))
        direct = u_tables[n - 1].evaluate(pts)
        ok &= abs(k_to_u(k_tables, pts) - direct) <= 1e-12 * max(1.0, abs(direct))
    record("ursell-roundtrip", ok, "n=2..5 at 1e-12")

    f = cfg.test_function()
    vspec = cfg.validate_spec
    n_samples = vspec["samples"]

    # free-case suite against closed-form oracles
    free_pot = PairPotential("soft-disk", theta=0.0, r0=cfg.potential.r0)
    free = ModelParams(z=cfg.activity, s=cfg.s_values[0], potential=free_pot,
                       torus=cfg.torus)
    free_samples = run_chains(free, cfg.sampler, n_samples, threads=args.threads)
    lam = free.z * free.volume
    _, pval = poisson_chisquare(free_samples.counts, lam)
    record("free-case-count-distribution", pval > 0.01, f"chi-square p={pval:.4f}")
    k1 = estimate_k1(free_samples)
    record("free-case-k1", abs(k1.value - free.z) <= 3 * k1.stderr,
           f"k1={k1.value:.5f}+-{k1.stderr:.5f} vs z={free.z}")
    k2 = estimate_k2_radial(free_samples, vspec["k2_bin_width"], vspec["k2_r_max"])
    live = ~k2.missing
    zs = np.abs(k2.values[live] - free.z ** 2) / k2.stderrs[live]
    record("free-case-k2-flat", bool(np.all(zs <= 3.0)), f"max |z|={zs.max():.2f}")
    emp = empirical_laplace(free_samples, f)
    series = laplace_series([PoissonCorrelation(free.z)] * 6, f, order=6,
                            grid_per_axis=vspec["gnz_grid"])
    record("free-case-laplace", abs(emp.value - series.value) <= 3 * emp.stderr,
           f"empirical={emp.value:.5f}+-{emp.stderr:.5f} series={series.value:.5f}")

    # interacting model: GNZ suites and correlation bound
    model = cfg.model(cfg.s_values[0])
    samples = run_chains(model, cfg.sampler, n_samples, threads=args.threads)
    singles, pairs = _functional_suite(model, f)
    for name, fn in singles:
        res = gnz_residual(samples, fn, grid_per_axis=vspec["gnz_grid"])
        record(f"gnz[{name}]", abs(res.z_score) <= 3.0 and not res.vacuous,
               f"z={res.z_score:.2f}")
    for name, fn in pairs:
        res = double_gnz_residual(samples, fn, grid_per_axis=vspec["pair_grid"])
        record(f"double-gnz[{name}]", abs(res.z_score) <= 3.0 and not res.vacuous,
               f"z={res.z_score:.2f}")
    k1i = estimate_k1(samples)
    k1g = estimate_k1_gnz(samples)
    se = math.hypot(k1i.stderr, k1g.stderr)
    record("k1-gnz-crosscheck", abs(k1i.value - k1g.value) <= 3 * se,
           f"{k1i.value:.5f} vs {k1g.value:.5f}")
    k2i = estimate_k2_radial(samples, vspec["k2_bin_width"], vspec["k2_r_max"])
    ruelle = check_ruelle(k1i, k2i, xi=model.z * math.exp(2 * model.potential.stability_b))
    record("ruelle-bound", ruelle.satisfied,
           f"max violation {ruelle.max_violation:.2f} sigma at {ruelle.worst}")
    write_radial_csv(out / "k2.csv", k2i)

    _write_json(out / "validate_report.json", {"checks": rows})
    _manifest(out, cfg, "validate", t0)
    failed = [r for r in rows if not r["passed"]]
    for r in rows:
        print(f"[{'PASS' if r['passed'] else 'FAIL'}] {r['check']}: {r['detail']}")
    if failed:
        raise ValidationFailure(f"{len(failed)} validation check(s) failed")
    return 0


def cmd_dynamics(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _prepare_out(cfg, args)
    dspec = cfg.dynamics_spec
    model = cfg.model(cfg.s_values[0])
    f = cfg.test_function()
    samples = run_chains(model, cfg.sampler, cfg.n_samples, threads=args.threads)

    traj = simulate_glauber(model, horizon=dspec["glauber_horizon"],
                            grid_points=dspec["grid_points"], f=f, seed=cfg.seed)
    write_trajectory_csv(out / "glauber_trajectory.csv", traj)
    rows_g = stationarity_test(traj, samples, f=f, burn_time=dspec["burn_time"])

    kernel = ScaledKernel(cfg.kernel, dspec["eps"], cfg.torus)
    trajs = []
    for r in range(dspec["kawasaki_replicas"]):
        pos = samples.samples[(89 * r) % len(samples)]
        start = model.new_configuration()
        for p in pos:
            start.insert(p)
        trajs.append(simulate_kawasaki(model, kernel, horizon=dspec["kawasaki_horizon"],
                                       grid_points=101, f=f, start=start,
                                       seed=cfg.seed + 10_000 + r))
    write_trajectory_csv(out / "kawasaki_trajectory.csv", trajs[0])
    rows_k = stationarity_test(trajs, samples, f=f,
                               burn_time=0.2 * dspec["kawasaki_horizon"])

    report = {"glauber": rows_g, "kawasaki": rows_k,
              "glauber_events": len(traj.events), "glauber_rejected": traj.rejected}
    _write_json(out / "dynamics_report.json", report)
    _manifest(out, cfg, "dynamics", t0)
    bad = [r for r in rows_g + rows_k if abs(r["z_score"]) > 3.0]
    for label, rows in (("glauber", rows_g), ("kawasaki", rows_k)):
        for r in rows:
            print(f"[{'PASS' if abs(r['z_score']) <= 3 else 'FAIL'}] {label}/{r['observable']}: "
                  f"z={r['z_score']:.2f}")
    if bad:
        raise ValidationFailure(f"{len(bad)} stationarity check(s) failed")
    return 0


_NORM_HEADER = ["s", "eps", "m2", "m2_stderr", "heps_sq", "heps_sq_stderr",
                "cross", "cross_stderr", "h0_sq", "h0_sq_stderr", "mc_noise"]
_CC_HEADER = ["s", "term", "eps", "direct", "direct_stderr", "reduced",
              "reduced_stderr", "z_score"]
_FACT_HEADER = ["s", "eps", "separation", "vacuous", "lhs", "lhs_stderr",
                "rhs", "gap", "gap_stderr", "z_score"]
_NREC_HEADER = ["s", "c", "c_stderr", "mass", "amplitude"]


def _render_scaling(out: Path, raws: list[dict]) -> None:
    norm_rows, cc_rows, fact_rows, nrec_rows = [], [], [], []
    for raw in raws:
        s = raw["s"]
        r = raw["normalization"]
        nrec_rows.append([s, r["c"], r["c_stderr"], r["mass"], r["amplitude"]])
        for row in raw["norms"]:
            norm_rows.append([s] + [row[k] for k in _NORM_HEADER[1:]])
        for row in raw["crosscheck"]:
            cc_rows.append([s] + [row[k] for k in _CC_HEADER[1:]])
        for row in raw["factorization"]:
            fact_rows.append([s] + [row[k] for k in _FACT_HEADER[1:]])
    _write_csv(out / "norms.csv", _NORM_HEADER, norm_rows)
    _write_csv(out / "normalization.csv", _NREC_HEADER, nrec_rows)
    _write_csv(out / "crosscheck.csv", _CC_HEADER, cc_rows)
    _write_csv(out / "factorization.csv", _FACT_HEADER, fact_rows)
    _write_json(out / "summary.json",
                {"studies": [{"s": raw["s"], "verdicts": raw["verdicts"]} for raw in raws]})


def cmd_scaling(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = _prepare_out(cfg, args)
    F = ExpCylinderFunction(cfg.test_function())
    spec = cfg.study_spec
    quad = cfg.quadrature()
    model0 = cfg.model(cfg.s_values[0])
    samples = run_chains(model0, cfg.sampler, spec["samples"], threads=args.threads)
    raws = []
    for s in cfg.s_values:
        model = cfg.model(s)
        study = ScalingStudy(model=model, F=F, kernel=cfg.kernel,
                             epsilons=tuple(spec["epsilons"]),
                             sampler=cfg.sampler, n_samples=spec["samples"],
                             quad=quad, crosscheck_grid=spec["crosscheck_grid"],
                             threads=args.threads)
        report = run_study(study, samples=SampleSet(
            model=model, samples=samples.samples, chain_ids=samples.chain_ids,
            diagnostics=samples.diagnostics))
        raws.append(report.to_raw())
        v = report.verdicts
        print(f"s={s}: monotone={v['monotone_beyond_1sigma']} "
              f"ratio={v['ratio_last_to_first']:.4f} (<=0.25: {v['ratio_ok']}) "
              f"crosscheck max|z|={v['crosscheck_max_abs_z']:.2f}")
    _write_json(out / "raw_results.json", {"studies": raws})
    _render_scaling(out, raws)
    _manifest(out, cfg, "scaling", t0, {"n_samples": spec["samples"]})
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    raw_path = run_dir / "raw_results.json"
    if not raw_path.exists():
        raise ConfigError(f"no raw_results.json under {run_dir}")
    with open(raw_path) as fh:
        raws = json.load(fh)["studies"]
    _render_scaling(run_dir, raws)
    print(f"re-rendered scaling artifacts in {run_dir}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbsdyn",
                                description="equilibrium particle dynamics workbench")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("sample", "validate", "dynamics", "scaling"):
        q = sub.add_parser(name)
        q.add_argument("--config", required=True, help="JSON run configuration")
        q.add_argument("--out", default=None, help="output directory override")
        q.add_argument("--seed", type=int, default=None, help="seed override")
        q.add_argument("--threads", type=int, default=1)
        q.add_argument("--budget-scale", type=float, default=1.0,
                       help="uniformly scale sample/quadrature budgets")
    r = sub.add_parser("report")
    r.add_argument("--run", required=True, help="previous scaling run directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = load_config(args.config, seed_override=args.seed,
                          budget_scale=args.budget_scale)
        return {"sample": cmd_sample, "validate": cmd_validate,
                "dynamics": cmd_dynamics, "scaling": cmd_scaling}[args.command](cfg, args)
    except (ConfigError, ValidationFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
