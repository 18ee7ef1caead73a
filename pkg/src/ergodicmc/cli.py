"""Command line front end.

Subcommands: price (one long control-variate run), figure1 (replicated
normalized-error experiment on the Heston barrier), clt (generic
model/functional experiment), check-schedule, bs-ref (closed-form barrier
price plus its Monte Carlo oracle).  Every output file embeds the resolved
configuration and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict

from . import cltlab, heston
from .schemes import make_model
from .pathfun import make_functional
from .stepgrid import check_conditions, schedule_from_config


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _schedule(cfg: dict, args) -> "StepSchedule":
    sched_cfg = dict(cfg.get("schedule", {"family": "poly", "gamma1": 1.0, "rho": 0.6}))
    return schedule_from_config(sched_cfg), sched_cfg


def _heston_config(cfg: dict) -> heston.HestonConfig:
    fields = {k: v for k, v in cfg.get("model_params", cfg).items()
              if k in heston.HestonConfig.__dataclass_fields__}
    return heston.HestonConfig(**fields) if fields else heston.DEFAULT_CONFIG


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)
    print(f"wrote {path}")


def _write_csv(path: str, header: list[str], rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {path}")


def _cmd_price(args) -> int:
    cfg = _load_config(args.config)
    schedule, sched_cfg = _schedule(cfg, args)
    hcfg = _heston_config(cfg)
    out = heston.price_stationary_heston(
        hcfg,
        schedule,
        n_steps=args.steps,
        seed=args.seed,
        control_variate=not args.no_control_variate,
        n_replicates=args.replicates,
        trace_every=args.trace_every,
    )
    summary = {k: v for k, v in out.items() if k not in ("per_replicate", "trace")}
    summary["schedule"] = sched_cfg
    _write_json(os.path.join(args.out_dir, "price_summary.json"), summary)
    if out["trace"]:
        c_bs = out["bs_closed_form"]
        rows = [
            (k, g, raw if math.isnan(bs) else raw - bs + c_bs)
            for (k, g, raw, bs) in out["trace"]
        ]
        _write_csv(os.path.join(args.out_dir, "price_trace.csv"), ["n", "Gamma_n", "value"], rows)
    print(f"price = {out['price']:.6f}  (raw {out['raw_value']:.6f}, "
          f"cv adjustment {out['cv_adjustment']:+.6f})")
    return 0


def _experiment_outputs(exp: cltlab.CltExperiment, out_dir: str, sched_cfg, extra: dict) -> None:
    summary = {
        "sigma2_hat": exp.sigma2_hat,
        "ks_stat": exp.stats.ks_stat if exp.stats else None,
        "ks_critical_1pct": cltlab.ks_critical(0.01, exp.M),
        "skewness": exp.stats.skewness if exp.stats else None,
        "kurtosis": exp.stats.excess_kurtosis if exp.stats else None,
        "M": exp.M,
        "N": exp.N,
        "Gamma_N": exp.gamma_terms,
        "terms": exp.terms,
        "h": exp.h,
        "seed": exp.seed,
        "schedule": sched_cfg,
        **extra,
        **exp.meta,
    }
    _write_json(os.path.join(out_dir, "experiment_summary.json"), summary)
    _write_csv(
        os.path.join(out_dir, "samples.csv"),
        ["replicate", "normalized_error"],
        list(enumerate(exp.samples.tolist())),
    )
    _write_csv(
        os.path.join(out_dir, "density.csv"),
        ["x", "f_hat"],
        exp.density_grid.tolist(),
    )


def _cmd_figure1(args) -> int:
    cfg = _load_config(args.config)
    schedule, sched_cfg = _schedule(cfg, args)
    hcfg = _heston_config(cfg)
    exp = heston.run_figure1(
        hcfg,
        schedule,
        N=args.steps,
        M=args.replicates,
        seed=args.seed,
        reference=cfg.get("reference"),
    )
    _experiment_outputs(exp, args.out_dir, sched_cfg, {})
    print(f"sigma_F^2 ~= {exp.sigma2_hat:.4f}, KS = {exp.stats.ks_stat:.4f} "
          f"(1% critical {cltlab.ks_critical(0.01, exp.M):.4f})")
    return 0


def _cmd_clt(args) -> int:
    cfg = _load_config(args.config)
    schedule, sched_cfg = _schedule(cfg, args)
    model_name = cfg.get("model", "ou")
    if model_name == "heston":
        return _cmd_figure1(args)
    model = make_model(model_name, **cfg.get("model_params", {}))
    fn_cfg = dict(cfg.get("functional", {"name": "marginal", "which": "start"}))
    fn_name = fn_cfg.pop("name")
    horizon = fn_cfg.pop("horizon", cfg.get("horizon", 1.0))
    functional = make_functional(fn_name, horizon, **fn_cfg)
    target = cfg.get("target")
    if target is None:
        raise SystemExit("config must provide 'target' (the true stationary value)")
    exp = cltlab.run_clt_experiment(
        model,
        functional,
        schedule,
        target=float(target),
        M=args.replicates,
        N=args.steps,
        seed=args.seed,
        scheme=cfg.get("scheme", "genuine"),
        strict_schedule=args.strict_schedule,
    )
    _experiment_outputs(exp, args.out_dir, sched_cfg, {"target": target})
    print(f"sigma^2_hat = {exp.sigma2_hat:.5f} over M={exp.M} replicates "
          f"(Gamma ~= {exp.gamma_terms:.1f})")
    return 0


def _cmd_check_schedule(args) -> int:
    cfg = _load_config(args.config)
    schedule, sched_cfg = _schedule(cfg, args)
    reports = {
        "functional_2_14": check_conditions(schedule, delta=0.0, condition="functional"),
        f"stepwise_2_17_delta_{args.delta}": check_conditions(
            schedule, delta=args.delta, condition="functional"
        ),
        "marginal_2_11": check_conditions(schedule, condition="marginal"),
    }
    payload = {"schedule": sched_cfg}
    for name, rep in reports.items():
        payload[name] = {
            "converges": rep.converges,
            "partial_sum": rep.partial_sum,
            "fitted_tail_exponent": rep.fitted_tail_exponent,
            "analytic_verdict": rep.analytic,
        }
        print(f"{name}: converges={rep.converges} "
              f"(partial sum {rep.partial_sum:.4f}, tail exponent {rep.fitted_tail_exponent:.3f})")
    if args.out_dir:
        _write_json(os.path.join(args.out_dir, "schedule_report.json"), payload)
    return 0


def _cmd_bs_ref(args) -> int:
    cfg = _load_config(args.config)
    hcfg = _heston_config(cfg)
    sigma = math.sqrt(hcfg.theta)
    closed = heston.bs_barrier_price(hcfg.s0, hcfg.r, sigma, hcfg.T, hcfg.K, hcfg.L)
    print(f"closed form: {closed:.6f}")
    if not args.skip_oracle:
        mc, se = heston.mc_bs_barrier_oracle(
            hcfg.s0, hcfg.r, sigma, hcfg.T, hcfg.K, hcfg.L,
            n_paths=args.paths, seed=args.seed,
        )
        print(f"mc oracle:   {mc:.6f} +- {se:.6f}  (|diff| = {abs(mc - closed):.6f})")
    if args.out_dir:
        payload = {"closed_form": closed, "config": asdict(hcfg), "seed": args.seed}
        if not args.skip_oracle:
            payload.update({"mc_oracle": mc, "mc_stderr": se, "mc_paths": args.paths})
        _write_json(os.path.join(args.out_dir, "bs_ref.json"), payload)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ergodicmc",
        description="stationary-diffusion Monte Carlo with decreasing-step schemes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, steps, reps):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--steps", type=int, default=steps)
        p.add_argument("--replicates", type=int, default=reps)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--strict-schedule", action="store_true", default=True)
        p.add_argument("--no-strict-schedule", dest="strict_schedule", action="store_false")

    p = sub.add_parser("price", help="one long stationary-Heston barrier run")
    common(p, steps=1_000_000, reps=1)
    p.add_argument("--no-control-variate", action="store_true")
    p.add_argument("--trace-every", type=int, default=1000)
    p.set_defaults(func=_cmd_price)

    p = sub.add_parser("figure1", help="replicated normalized-error experiment (Heston barrier)")
    common(p, steps=100_000, reps=2000)
    p.set_defaults(func=_cmd_figure1)

    p = sub.add_parser("clt", help="generic model/functional CLT experiment")
    common(p, steps=100_000, reps=2000)
    p.set_defaults(func=_cmd_clt)

    p = sub.add_parser("check-schedule", help="step-sequence condition report")
    common(p, steps=0, reps=0)
    p.add_argument("--delta", type=float, default=0.1)
    p.set_defaults(func=_cmd_check_schedule)

    p = sub.add_parser("bs-ref", help="Black-Scholes barrier reference price")
    common(p, steps=0, reps=0)
    p.add_argument("--paths", type=int, default=2_000_000)
    p.add_argument("--skip-oracle", action="store_true")
    p.set_defaults(func=_cmd_bs_ref)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
