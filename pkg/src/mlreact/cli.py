"""Command-line front end: ``mlreact <command> --config cfg.json --out DIR``.

Structured options come from a JSON config; flags cover paths, seed,
verbosity and the thread cap.  Every command prints a readable table and
writes machine-readable files.  Exit codes: 0 ok, 2 invalid input,
3 numerical failure.
"""

import argparse
from dataclasses import replace
import json
import logging
from pathlib import Path
import sys

from . import __version__
from .data import PanelDataset
from .equilibrium import (
    EquilibriumParams,
    curve_csv,
    curve_shape,
    default_A_grid,
    run_numerical_example,
)
from .errors import ConfigError, NumericError, ValidationError
from .gbrt import GbrtHyperParams
from .harness import (
    ForecasterSpec,
    evaluate_forecasts,
    run_rolling_forecasts,
    with_analyst_feature,
    yearly_mse_ratio,
)
from .overreact import LR_GRID, compare_forecasters, decompose_errors, learning_rate_sweep
from .synth import SynthParams, generate_analyst_forecasts, generate_synthetic_panel, shock_proxy

log = logging.getLogger("mlreact")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

# allowed top-level keys per command
SCHEMA = {
    "synth": {"synth", "analyst"},
    "forecast": {"synth", "panel_csv", "analyst", "forecaster", "horizons", "window_years",
                 "analyst_feature"},
    "overreact": {"synth", "panel_csv", "analyst", "hyper", "forecasters", "proxy", "fe",
                  "window_years", "analyst_feature", "bias_correction"},
    "sweep-lr": {"synth", "panel_csv", "analyst", "hyper", "gammas", "proxy", "analyst_feature",
                 "window_years", "bias_correction"},
    "decompose": {"synth", "panel_csv", "analyst", "hyper", "forecaster", "analyst_feature",
                  "window_years"},
    "equilibrium": {"params", "A_grid", "lambdas", "eps_prev", "xbar_prev"},
    "repro-all": {"synth", "analyst", "hyper", "gammas", "equilibrium", "bias_correction"},
}
ANALYST_KEYS = {"theta", "theta_tech", "delta_hat", "private_signal", "private_noise"}
FORECASTER_KEYS = {"kind", "hyper", "features", "label"}
EQ_KEYS = {"params", "A_grid", "lambdas", "eps_prev", "xbar_prev"}
GRID_KEYS = {"lo", "hi", "step"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def load_config(path, command):
    if path is None:
        cfg = {}
    else:
        try:
            cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    _check_keys(cfg, SCHEMA[command], "config")
    return validate_config(cfg, command)


def _hyper(d):
    if d is None:
        return GbrtHyperParams()
    _check_keys(d, GbrtHyperParams.__dataclass_fields__, "hyper")
    return GbrtHyperParams(**d)


def _forecaster(d, default_hyper):
    d = dict(d or {})
    _check_keys(d, FORECASTER_KEYS, "forecaster")
    hyper = _hyper(d["hyper"]) if "hyper" in d else default_hyper
    feats = d.get("features")
    return ForecasterSpec(d.get("kind", "gbrt"), hyper, None if feats is None else tuple(feats),
                          d.get("label"))


def _eq_config(d):
    d = dict(d or {})
    _check_keys(d, EQ_KEYS, "equilibrium")
    params = EquilibriumParams.from_dict(d.get("params", {}))
    grid = d.get("A_grid")
    if grid is None:
        grid = default_A_grid()
    elif isinstance(grid, dict):
        _check_keys(grid, GRID_KEYS, "A_grid")
        grid = default_A_grid(**{k: float(v) for k, v in grid.items()})
    else:
        grid = tuple(float(a) for a in grid)
    return {
        "params": params,
        "A_grid": grid,
        "lambdas": tuple(float(x) for x in d.get("lambdas", (0.0, 0.9))),
        "eps_prev": float(d.get("eps_prev", 10.0)),
        "xbar_prev": float(d.get("xbar_prev", 1000.0)),
    }


def validate_config(cfg, command):
    """Parse every section into library objects before any computation."""
    out = dict(cfg)
    if "synth" in SCHEMA[command]:
        out["synth"] = SynthParams.from_dict(cfg.get("synth", {}))
    if "analyst" in SCHEMA[command]:
        a = dict(cfg.get("analyst", {}))
        _check_keys(a, ANALYST_KEYS, "analyst")
        out["analyst"] = a
    if "hyper" in SCHEMA[command]:
        out["hyper"] = _hyper(cfg.get("hyper"))
    if command == "forecast":
        out["forecaster"] = _forecaster(cfg.get("forecaster"), GbrtHyperParams())
    if command == "decompose":
        out["forecaster"] = str(cfg.get("forecaster", "analyst"))
        if out["forecaster"] not in ("analyst", "gbrt", "linear"):
            raise ConfigError("decompose forecaster must be analyst, gbrt or linear")
    if command == "overreact":
        fs = cfg.get("forecasters", ["rational", "analyst", "analyst_tech", "gbrt", "linear"])
        bad = set(fs) - {"rational", "analyst", "analyst_tech", "gbrt", "linear"}
        if bad or not fs:
            raise ConfigError(f"unknown forecasters {sorted(bad)}")
        out["forecasters"] = list(fs)
    if "gammas" in SCHEMA[command]:
        g = cfg.get("gammas", list(LR_GRID))
        out["gammas"] = tuple(float(x) for x in g)
        for x in out["gammas"]:
            replace(GbrtHyperParams(), learning_rate=x)
    if "proxy" in SCHEMA[command]:
        out["proxy"] = cfg.get("proxy", "news")
        if out["proxy"] not in ("news", "investment", "latent_eps"):
            raise ConfigError(f"unknown proxy {out['proxy']!r}")
    if command == "equilibrium":
        out.update(_eq_config(cfg))
    if command == "repro-all":
        out["equilibrium"] = _eq_config(cfg.get("equilibrium"))
    if "fe" in SCHEMA[command]:
        out["fe"] = cfg.get("fe", "both")
        if out["fe"] not in ("both", "firm", "year", "none"):
            raise ConfigError(f"unknown fe option {out['fe']!r}")
    if "bias_correction" in SCHEMA[command]:
        out["bias_correction"] = cfg.get("bias_correction", "jackknife")
        if out["bias_correction"] not in (None, "jackknife"):
            raise ConfigError("bias_correction must be null or \"jackknife\"")
    for key in ("window_years",):
        if key in SCHEMA[command]:
            out[key] = int(cfg.get(key, 5))
    if command == "forecast":
        out["horizons"] = tuple(int(h) for h in cfg.get("horizons", range(12, 24)))
    for key in ("analyst_feature",):
        if key in SCHEMA[command]:
            out[key] = bool(cfg.get(key, True))
    return out


# -- shared pipeline pieces --------------------------------------------------------

def _panel(cfg, seed):
    params = cfg["synth"]
    if seed is not None:
        params = replace(params, seed=seed)
    if cfg.get("panel_csv"):
        panel = PanelDataset.from_csv(cfg["panel_csv"])
        # CSV headers are positional (feat_k); restore the synthetic names
        names = ("x", "x_lag", "z") + tuple(f"noise_{k}" for k in range(params.n_features_noise))
        if len(names) == len(panel.feature_names):
            panel = replace(panel, feature_names=names)
        panel = replace(panel, provenance=params)
    else:
        panel = generate_synthetic_panel(params)
    return params, panel


def _analysts(panel, params, acfg):
    theta = float(acfg.get("theta", params.theta))
    theta_tech = float(acfg.get("theta_tech", params.theta_tech))
    delta_hat = float(acfg.get("delta_hat", params.delta))
    ps = float(acfg.get("private_signal", 0.0))
    pn = float(acfg.get("private_noise", 1.0))
    kw = dict(private_signal=ps, private_noise=pn)
    return {
        "analyst": generate_analyst_forecasts(panel, theta, delta_hat, params.f_spec, **kw),
        "analyst_tech": generate_analyst_forecasts(panel, theta_tech, delta_hat, params.f_spec,
                                                   forecaster="analyst_tech", **kw),
        "rational": generate_analyst_forecasts(panel, 0.0, params.delta, params.f_spec,
                                               forecaster="rational"),
    }


def _ml(panel, analyst, kind, hyper, threads, window_years=5, use_analyst=True, label=None,
        features=None):
    train = with_analyst_feature(panel, analyst) if use_analyst else panel
    spec = ForecasterSpec(kind, hyper, features, label)
    return run_rolling_forecasts(train, spec, window_years=window_years, threads=threads)


def _write(out, name, text):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")
    log.info("wrote %s", out / name)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _print_metrics(metrics):
    print(f"{'forecaster':<16}{'N':>8}{'MSE':>12}{'R2_OOS':>10}")
    for n, r in metrics["forecasters"].items():
        print(f"{n:<16}{r['n_obs']:>8d}{r['mse']:>12.4f}{r['oos_r2']:>10.4f}")
    for pair, d in metrics["diebold_mariano"].items():
        if d is None:
            print(f"DM {pair}: n/a")
        else:
            print(f"DM {pair}: {d['dm_stat']:.3f} [p={d['p_value']:.4f}]")


# -- commands --------------------------------------------------------------------

def cmd_synth(cfg, out, seed, threads):
    params, panel = _panel(cfg, seed)
    an = _analysts(panel, params, cfg["analyst"])
    _write(out, "panel.csv", panel.to_csv())
    _write(out, "synth_params.json", params.to_json() + "\n")
    fp = an["analyst"].merge(an["analyst_tech"])
    _write(out, "analyst_forecasts.csv", fp.to_csv())
    print(f"panel: {len(panel.firms)} firms x {len(panel.years)} years, {panel.n_obs} monthly rows")
    print(f"features: {', '.join(panel.feature_names)}")
    print(f"analyst records: {fp.n_records}")


def cmd_forecast(cfg, out, seed, threads):
    params, panel = _panel(cfg, seed)
    an = _analysts(panel, params, cfg["analyst"])["analyst"]
    spec = cfg["forecaster"]
    train = with_analyst_feature(panel, an) if cfg["analyst_feature"] else panel
    res = run_rolling_forecasts(train, spec, cfg["horizons"], cfg["window_years"], analyst=an,
                                threads=threads)
    fp = res.forecasts if spec.kind == "analyst" else res.forecasts.merge(an)
    _write(out, "forecasts.csv", fp.to_csv())
    _write(out, "consensus.csv", fp.consensus_csv())
    metrics = evaluate_forecasts(fp)
    _write(out, "metrics.json", _dump(metrics))
    print(f"{len(res.fit_logs)} fits, look-ahead audit passed")
    _print_metrics(metrics)


def _forecast_errors(panel, params, cfg, names, threads, hyper):
    an = _analysts(panel, params, cfg["analyst"])
    errors = {}
    for n in names:
        if n in an:
            errors[n] = an[n].errors(n)
        else:
            res = _ml(panel, an["analyst"], n, hyper, threads, cfg.get("window_years", 5),
                      cfg.get("analyst_feature", True))
            errors[n] = res.forecasts.errors(n)
    return errors


def cmd_overreact(cfg, out, seed, threads):
    params, panel = _panel(cfg, seed)
    errors = _forecast_errors(panel, params, cfg, cfg["forecasters"], threads, cfg["hyper"])
    base = cfg["forecasters"][0]
    table = compare_forecasters(errors, base, shock_proxy(panel, cfg["proxy"]), fe=cfg["fe"],
                                bias_correction=cfg["bias_correction"])
    _write(out, "overreaction.csv", table.to_csv())
    _write(out, "overreaction.json", table.to_json() + "\n")
    print(f"error_(t+1) on {cfg['proxy']}_t, FE={cfg['fe']}, firm-clustered t, "
          f"bias correction={cfg['bias_correction']}; Wald vs {base}")
    print(table.format())


def cmd_sweep_lr(cfg, out, seed, threads):
    params, panel = _panel(cfg, seed)
    an = _analysts(panel, params, cfg["analyst"])["analyst"]
    table, revisions = learning_rate_sweep(
        panel, cfg["gammas"], shock_proxy(panel, cfg["proxy"]),
        an if cfg["analyst_feature"] else None, cfg["hyper"], threads,
        bias_correction=cfg["bias_correction"],
    )
    _write(out, "sweep_lr.csv", table.to_csv())
    _write(out, "sweep_lr.json", _dump({"table": table.to_dict(), "revision_magnitude": revisions}))
    print(table.format())
    print("mean |monthly revision|: " + ", ".join(f"{k}={v:.4f}" for k, v in revisions.items()))


def cmd_decompose(cfg, out, seed, threads):
    params, panel = _panel(cfg, seed)
    name = cfg["forecaster"]
    errors = _forecast_errors(panel, params, cfg, [name], threads, cfg["hyper"])[name]
    dec = decompose_errors(errors)
    _write(out, "decomposition.csv", dec.to_csv())
    summary = dec.summary()
    _write(out, "decomposition_summary.json", _dump(summary))
    for k, v in summary.items():
        print(f"{k:<28}{v}")


def cmd_equilibrium(cfg, out, seed, threads):
    rows = run_numerical_example(cfg["params"], cfg["A_grid"], cfg["lambdas"], cfg["eps_prev"],
                                 cfg["xbar_prev"])
    _write(out, "curve.csv", curve_csv(rows))
    report, below = curve_shape(rows, cfg["params"].f_tilde_rule.mu_A)
    _write(out, "curve_shape.json", _dump({"per_lambda": {repr(k): v for k, v in report.items()},
                                           "higher_lambda_strictly_below": below}))
    _write(out, "params.json", cfg["params"].to_json() + "\n")
    print(f"{'lambda':>7}{'A':>8}{'xbar':>14}  branch")
    for r in rows:
        print(f"{r.lam:>7.2f}{r.A:>8.3f}{r.xbar:>14.3f}  {r.branch}")
    for lam, rep in report.items():
        print(f"lambda={lam:g}: jump at mu_A {rep['jump']:.3f}; decreasing below/above: "
              f"{rep['decreasing_below']}/{rep['decreasing_above']}")
    print(f"higher lambda strictly below: {below}")


def cmd_repro_all(cfg, out, seed, threads):
    """Every synthetic result (accuracy, overreaction tables, sweeps, decomposition,
    issuance curve) in one directory."""
    params, panel = _panel(cfg, seed)
    an = _analysts(panel, params, cfg["analyst"])
    hyper = cfg["hyper"]
    gbrt = _ml(panel, an["analyst"], "gbrt", hyper, threads)
    linear = _ml(panel, an["analyst"], "linear", hyper, threads)
    fp = an["analyst"].merge(gbrt.forecasts, linear.forecasts)
    _write(out, "panel.csv", panel.to_csv())
    _write(out, "forecasts.csv", fp.to_csv())
    _write(out, "consensus.csv", fp.consensus_csv())

    # accuracy, incl. GBRT without the analyst feature
    gbrt_public = _ml(panel, an["analyst"], "gbrt", hyper, threads, use_analyst=False,
                      label="gbrt_public")
    metrics = evaluate_forecasts(fp.merge(gbrt_public.forecasts))
    _write(out, "accuracy.json", _dump(metrics))

    # yearly MSE ratio analyst / GBRT
    ratio = yearly_mse_ratio(fp, "analyst", "gbrt")
    _write(out, "mse_ratio_by_year.csv",
           "year,mse_ratio_analyst_over_gbrt\n" + "".join(f"{y},{v!r}\n" for y, v in ratio))

    # overreaction of analyst, GBRT and linear forecasts
    proxy = shock_proxy(panel)
    errors = {k: fp.errors(k) for k in ("analyst", "gbrt", "linear")}
    bc = cfg["bias_correction"]
    t2 = compare_forecasters(errors, "analyst", proxy, bias_correction=bc)
    _write(out, "overreaction.csv", t2.to_csv())
    _write(out, "overreaction.json", t2.to_json() + "\n")

    # feature-set variants
    t3_errors = {
        "gbrt_all": gbrt.forecasts.errors("gbrt"),
        "gbrt_public": gbrt_public.forecasts.errors("gbrt_public"),
        "gbrt_no_noise": _ml(panel, an["analyst"], "gbrt", hyper, threads, label="gbrt_no_noise",
                             features=("x", "x_lag", "z", "analyst")).forecasts.errors("gbrt_no_noise"),
    }
    t3 = compare_forecasters(t3_errors, "gbrt_all", proxy, bias_correction=bc)
    _write(out, "feature_sets.csv", t3.to_csv())

    # learning-rate sweep
    t4, revisions = learning_rate_sweep(panel, cfg["gammas"], proxy, an["analyst"], hyper, threads,
                                        bias_correction=bc)
    _write(out, "learning_rate.csv", t4.to_csv())
    _write(out, "learning_rate.json", _dump({"table": t4.to_dict(), "revision_magnitude": revisions}))

    # market vs firm-specific errors
    lines = []
    for k in ("analyst", "gbrt"):
        s = decompose_errors(fp.errors(k)).summary()
        lines.append(_dump({k: s}))
    _write(out, "decomposition.json", "".join(lines))

    # tech vs non-tech analysts
    t_tech = compare_forecasters({"analyst": an["analyst"].errors("analyst"),
                                  "analyst_tech": an["analyst_tech"].errors("analyst_tech")},
                                 "analyst", proxy, bias_correction=bc)
    _write(out, "tech_vs_nontech.csv", t_tech.to_csv())

    # issuance curve of the equilibrium model
    e = cfg["equilibrium"]
    rows = run_numerical_example(e["params"], e["A_grid"], e["lambdas"], e["eps_prev"], e["xbar_prev"])
    _write(out, "issuance_curve.csv", curve_csv(rows))
    report, below = curve_shape(rows, e["params"].f_tilde_rule.mu_A)
    _write(out, "issuance_shape.json", _dump({"per_lambda": {repr(k): v for k, v in report.items()},
                                             "higher_lambda_strictly_below": below}))
    _write(out, "config.json", _dump({"synth": params.to_dict(), "hyper": hyper.to_dict(),
                                      "gammas": list(cfg["gammas"]),
                                      "equilibrium": e["params"].to_dict()}))

    _print_metrics(metrics)
    print()
    print("Overreaction by forecaster")
    print(t2.format())
    print()
    print("Learning-rate sweep")
    print(t4.format())
    print()
    print(f"Issuance curve: {len(rows)} points written; higher lambda strictly below: {below}")


COMMANDS = {
    "synth": cmd_synth,
    "forecast": cmd_forecast,
    "overreact": cmd_overreact,
    "sweep-lr": cmd_sweep_lr,
    "decompose": cmd_decompose,
    "equilibrium": cmd_equilibrium,
    "repro-all": cmd_repro_all,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="mlreact", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mlreact {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default=f"out-{name}", help="output directory")
        sp.add_argument("--seed", type=int, help="override the synthetic seed")
        sp.add_argument("--threads", type=int, default=1, help="worker cap for model fits")
        sp.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, args.command)
        COMMANDS[args.command](cfg, Path(args.out), args.seed, args.threads)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
