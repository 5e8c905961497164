"""Command-line surface: simulate, fit, predict, block-predict, benchmark,
and an oracle cross-check, all file-to-file with no shared in-memory state."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time

import numpy as np
from scipy.stats import norm

from . import __version__
from .covariance import FactorizationError, Theta
from .estimate import (
    SpatialDataset,
    FittedModel,
    _make_partition,
    assemble_q,
    fit_covariance,
    fit_fixed_effects,
    fit_full_oracle,
    set_num_threads,
    var_beta_alt1,
    var_beta_alt2,
    var_beta_exact,
)
from .evaluate import ExperimentSpec, run_experiment
from .geometry import NeighborIndex
from .modelfile import read_model, rebuild_fitted_model, write_model
from .predict import block_predict, predict_dense, predict_point_local, predict_points_global
from .simulate import SimConfig, simulate_realization

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

logger = logging.getLogger("spatpart")


class DataError(Exception):
    """Malformed or inconsistent input files."""


# ---------------------------------------------------------------- file I/O


def _read_csv(path, required: list[str]) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError(f"{path}: empty file, expected a header row")
            missing = [c for c in required if c not in reader.fieldnames]
            if missing:
                raise DataError(
                    f"{path}: missing column(s) {missing}; found {reader.fieldnames}"
                )
            cols = {c: [] for c in required}
            for lineno, row in enumerate(reader, start=2):
                for c in required:
                    raw = row.get(c)
                    if raw is None or raw == "":
                        raise DataError(f"{path}:{lineno}: empty value in column {c!r}")
                    try:
                        cols[c].append(float(raw))
                    except ValueError:
                        raise DataError(
                            f"{path}:{lineno}: cannot parse {raw!r} in column {c!r}"
                        ) from None
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not cols[required[0]]:
        raise DataError(f"{path}: no data rows")
    return {c: np.asarray(v) for c, v in cols.items()}


def _write_csv(path, header: list[str], rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


def _load_dataset(path, response: str, covariates: list[str]):
    cols = _read_csv(path, ["x", "y", response, *covariates])
    points = np.column_stack([cols["x"], cols["y"]])
    x = np.column_stack([np.ones(points.shape[0])] + [cols[c] for c in covariates])
    data = SpatialDataset(points=points, y=cols[response], X=x)
    return data, ["(intercept)", *covariates]


def _load_sites(path, covariates: list[str]):
    cols = _read_csv(path, ["x", "y", *covariates])
    points = np.column_stack([cols["x"], cols["y"]])
    x = np.column_stack([np.ones(points.shape[0])] + [cols[c] for c in covariates])
    return points, x


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    theta = None
    if args.method == "geostat":
        theta = Theta(args.tau2, args.nugget, args.range, model=args.sim_model)
    cfg = SimConfig(
        method=args.method, n=args.n, grid_side=args.grid_side, theta=theta, seed=args.seed
    )
    real = simulate_realization(cfg)
    obs_rows = [
        [_fmt(p[0]), _fmt(p[1]), _fmt(y), _fmt(x[1]), _fmt(x[2])]
        for p, y, x in zip(real.points_obs, real.y_obs, real.X_obs)
    ]
    _write_csv(f"{args.out_prefix}_obs.csv", ["x", "y", "z", "x1", "x2"], obs_rows)
    grid_rows = [
        [_fmt(p[0]), _fmt(p[1]), _fmt(x[1]), _fmt(x[2])]
        for p, x in zip(real.points_grid, real.X_grid)
    ]
    _write_csv(f"{args.out_prefix}_grid.csv", ["x", "y", "x1", "x2"], grid_rows)
    truth = {
        "method": args.method,
        "n": args.n,
        "grid_side": args.grid_side,
        "seed": args.seed,
        "beta": [float(b) for b in real.beta_true],
        "theta": None
        if theta is None
        else {"partial_sill": theta.partial_sill, "nugget": theta.nugget, "range": theta.range_},
        "grid_z": [float(v) for v in real.y_grid],
    }
    with open(f"{args.out_prefix}_truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(
        "wrote %s_obs.csv (%d rows), %s_grid.csv (%d rows), %s_truth.json",
        args.out_prefix, len(obs_rows), args.out_prefix, len(grid_rows), args.out_prefix,
    )
    return EXIT_OK


def cmd_fit(args) -> int:
    covariates = args.covariates.split(",") if args.covariates else []
    data, coef_names = _load_dataset(args.data, args.response, covariates)
    rank = np.linalg.matrix_rank(data.X)
    if rank < data.n_coef:
        raise DataError(f"design matrix is rank-deficient (rank {rank} < {data.n_coef})")
    rng = np.random.default_rng(args.seed)
    part_points = data.points
    if args.standardize_coords:
        sd = part_points.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        part_points = (part_points - part_points.mean(axis=0)) / sd
    part_data = dataclasses.replace(data, points=part_points) if args.standardize_coords else data

    cope = _make_partition(args.partition, part_data, args.part_size, rng)
    t0 = time.perf_counter()
    cov_fit = fit_covariance(data, cope, model=args.model, max_iter=args.max_iter)
    t_cov = time.perf_counter() - t0
    fe_scheme = args.fe_partition or args.partition
    fe_size = args.fe_part_size or args.part_size
    if fe_scheme == args.partition and fe_size == args.part_size:
        fefe = cope
    else:
        fefe = _make_partition(fe_scheme, part_data, fe_size, rng)
    t0 = time.perf_counter()
    beta, cache = fit_fixed_effects(data, fefe, cov_fit.theta)
    if args.var_method == "exact":
        cov_beta = var_beta_exact(data, fefe, cov_fit.theta, cache)
    elif args.var_method == "empirical":
        cov_beta = var_beta_alt1(cache, beta)
    else:
        cov_beta = var_beta_alt2(cache)
    t_fe = time.perf_counter() - t0
    fit = FittedModel(
        theta_hat=cov_fit.theta,
        beta_hat=beta,
        cov_beta=cov_beta,
        variance_method=args.var_method,
        partition=fefe,
        block_cache=cache,
        reml_value=cov_fit.reml_value,
        converged=cov_fit.converged,
        timings={"covariance_s": t_cov, "fixed_effects_s": t_fe},
        coef_names=coef_names,
    )
    write_model(
        args.out,
        fit,
        partition_meta={
            "cope_scheme": args.partition,
            "cope_size": args.part_size,
            "fefe_scheme": fe_scheme,
            "fefe_size": fe_size,
        },
        seed=args.seed,
    )
    theta = cov_fit.theta
    print(
        f"covariance model: {theta.model}  "
        f"partial_sill={theta.partial_sill:.6g} nugget={theta.nugget:.6g} "
        f"range={theta.range_:.6g}"
        + ("" if cov_fit.converged else "  [not converged]")
    )
    print(f"{'effect':<14}{'estimate':>12}{'se':>12}{'z':>10}{'p':>12}")
    se = np.sqrt(np.diag(cov_beta))
    for name, b, s in zip(coef_names, beta, se):
        z = b / s
        p = 2.0 * norm.sf(abs(z))
        print(f"{name:<14}{b:>12.4f}{s:>12.4f}{z:>10.3f}{p:>12.3g}")
    logger.info("model written to %s", args.out)
    return EXIT_OK


def _load_model_and_data(args):
    doc = read_model(args.model)
    covariates = doc.get("coef_names")
    if not covariates:
        raise DataError(f"{args.model}: missing coefficient names")
    covariates = covariates[1:]  # drop intercept
    data, _ = _load_dataset(args.data, args.response, covariates)
    fit = rebuild_fitted_model(doc, data)
    return fit, data, covariates


def cmd_predict(args) -> int:
    fit, data, covariates = _load_model_and_data(args)
    sites, x_sites = _load_sites(args.sites, covariates)
    index = NeighborIndex(data.points)
    m = args.neighbors if args.neighbors is not None else min(50, data.n)
    if m > data.n:
        raise DataError(f"--neighbors {m} exceeds the {data.n} available observations")
    if args.beta_mode == "global":
        res = predict_points_global(fit, data, index, sites, x_sites, m)
        values, variances = res.values, res.variances
    else:
        values = np.empty(sites.shape[0])
        variances = np.empty_like(values)
        for j in range(sites.shape[0]):
            values[j], variances[j] = predict_point_local(
                fit.theta_hat, data, index, sites[j], x_sites[j], m
            )
    rows = [
        [_fmt(s[0]), _fmt(s[1]), _fmt(v), _fmt(w)]
        for s, v, w in zip(sites, values, variances)
    ]
    _write_csv(args.out, ["x", "y", "pred", "pred_var"], rows)
    logger.info("wrote %d predictions to %s", len(rows), args.out)
    return EXIT_OK


def cmd_block_predict(args) -> int:
    fit, data, covariates = _load_model_and_data(args)
    grid, x_grid = _load_sites(args.grid, covariates)
    index = NeighborIndex(data.points)
    m = args.neighbors if args.neighbors is not None else min(50, data.n)
    if m > data.n:
        raise DataError(f"--neighbors {m} exceeds the {data.n} available observations")
    res = block_predict(
        fit, data, index, grid, x_grid, m, subsample_cap=args.subsample_cap, seed=args.seed
    )
    gap = float(np.max(np.abs(res.unbiasedness_gap)))
    _write_csv(
        args.out,
        ["estimate", "variance", "n_grid", "subsampled", "max_unbiasedness_gap"],
        [[_fmt(res.value), _fmt(res.variance), res.n_grid, int(res.subsampled), _fmt(gap)]],
    )
    print(f"block estimate {res.value:.6g}  variance {res.variance:.6g}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {args.spec}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.spec}: invalid JSON: {exc}") from exc
    valid = {f.name for f in dataclasses.fields(ExperimentSpec)}
    unknown = set(doc) - valid
    if unknown:
        raise DataError(f"{args.spec}: unknown field(s) {sorted(unknown)}; valid: {sorted(valid)}")
    for key in ("methods", "cope", "fefe", "neighbors", "geostat_n", "sumsine_n", "rho_range"):
        if key in doc:
            doc[key] = tuple(tuple(v) if isinstance(v, list) else v for v in doc[key])
    try:
        spec = ExperimentSpec(**doc)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{args.spec}: {exc}") from exc
    summaries = run_experiment(spec)
    rows = [s.as_row() for s in summaries]
    header = list(rows[0].keys())
    _write_csv(
        args.out,
        header,
        [[r[h] if h in ("config", "n_reps", "n_failed") else _fmt(r[h]) for h in header] for r in rows],
    )
    for r in rows:
        print(
            f"{r['config']}: rmse1={r['rmse_0']:.4g} rmse2={r['rmse_1']:.4g} "
            f"rmspe={r['rmspe']:.4g} ci90=({r['ci90_0']:.3f},{r['ci90_1']:.3f}) "
            f"pi90={r['pi90']:.3f} failed={r['n_failed']}"
        )
    logger.info("results written to %s", args.out)
    return EXIT_OK


def cmd_compare_oracle(args) -> int:
    covariates = args.covariates.split(",") if args.covariates else []
    data, _ = _load_dataset(args.data, args.response, covariates)
    if data.n > args.max_n:
        raise DataError(f"oracle comparison capped at n={args.max_n}, got n={data.n}")
    theta = Theta(args.tau2, args.nugget, args.range, model=args.model)
    rng = np.random.default_rng(args.seed)
    part = _make_partition(args.partition, data, args.part_size, rng)

    beta_bd, cache = fit_fixed_effects(data, part, theta)
    oracle = fit_full_oracle(data, model=args.model, theta=theta, max_n=args.max_n)
    beta_dev = float(np.linalg.norm(beta_bd - oracle.beta_hat))

    from .covariance import build_cov_matrix

    cov_exact = var_beta_exact(data, part, theta, cache)
    q = assemble_q(data, cache)
    sigma = build_cov_matrix(data.points, data.points, theta)
    qsq = q @ sigma @ q.T
    cov_dev = float(np.linalg.norm(cov_exact - qsq) / np.linalg.norm(qsq))

    fit_bd = FittedModel(
        theta_hat=theta,
        beta_hat=beta_bd,
        cov_beta=cov_exact,
        variance_method="exact",
        partition=part,
        block_cache=cache,
    )
    side = 5
    ticks = (np.arange(side) + 0.5) / side
    xs, ys = np.meshgrid(ticks, ticks)
    lo = data.points.min(axis=0)
    span = data.points.max(axis=0) - lo
    sites = np.column_stack([lo[0] + xs.ravel() * span[0], lo[1] + ys.ravel() * span[1]])
    x_sites = np.tile(data.X.mean(axis=0), (sites.shape[0], 1))
    index = NeighborIndex(data.points)
    nn = predict_points_global(fit_bd, data, index, sites, x_sites, data.n)
    fit_dense = FittedModel(
        theta_hat=theta,
        beta_hat=oracle.beta_hat,
        cov_beta=oracle.cov_beta,
        variance_method="exact",
        partition=oracle.partition,
        block_cache=oracle.block_cache,
    )
    dense = predict_dense(fit_dense, data, sites, x_sites)
    pred_dev = float(np.max(np.abs(nn.values - dense.values)))

    print(f"beta deviation (L2):             {beta_dev:.3e}")
    print(f"exact-variance vs Q Sigma Q' (rel Frobenius): {cov_dev:.3e}")
    print(f"max point-prediction deviation (m=n vs dense): {pred_dev:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _positive_int(value):
    iv = int(value)
    if iv <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return iv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatpart",
        description="Partitioned spatial linear models: fit, predict, benchmark.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
        p.add_argument("--threads", type=_positive_int, default=1, help="worker pool cap")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--method", choices=["geostat", "sumsine"], required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--grid-side", type=_positive_int, default=40)
    p.add_argument("--tau2", type=float, default=10.0)
    p.add_argument("--nugget", type=float, default=0.1)
    p.add_argument("--range", type=float, default=0.5)
    p.add_argument("--sim-model", choices=["exponential", "spherical"], default="spherical")
    p.add_argument("--out-prefix", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit covariance and fixed effects")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--response", default="z")
    p.add_argument("--covariates", default="x1,x2", help="comma-separated column names")
    p.add_argument("--model", choices=["exponential", "spherical"], default="exponential")
    p.add_argument("--partition", choices=["random", "compact", "mixed"], default="compact")
    p.add_argument("--part-size", type=_positive_int, default=50)
    p.add_argument("--fe-partition", choices=["random", "compact", "mixed"], default=None)
    p.add_argument("--fe-part-size", type=_positive_int, default=None)
    p.add_argument("--var-method", choices=["exact", "empirical", "pooled"], default="exact")
    p.add_argument("--standardize-coords", action="store_true")
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="point predictions at sites")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sites", required=True)
    p.add_argument("--response", default="z")
    p.add_argument("--neighbors", type=_positive_int, default=None)
    p.add_argument("--beta-mode", choices=["global", "local"], default="global")
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("block-predict", help="predict the average over a gridded region")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--response", default="z")
    p.add_argument("--neighbors", type=_positive_int, default=None)
    p.add_argument("--subsample-cap", type=_positive_int, default=5000)
    p.add_argument("--out", default="block_prediction.csv")
    p.set_defaults(func=cmd_block_predict)

    p = sub.add_parser("benchmark", help="run a simulation experiment from a JSON spec")
    common(p)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", default="benchmark.csv")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("compare-oracle", help="check block-path identities against dense algebra")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--response", default="z")
    p.add_argument("--covariates", default="x1,x2")
    p.add_argument("--tau2", type=float, required=True)
    p.add_argument("--nugget", type=float, required=True)
    p.add_argument("--range", type=float, required=True)
    p.add_argument("--model", choices=["exponential", "spherical"], default="spherical")
    p.add_argument("--partition", choices=["random", "compact", "mixed"], default="compact")
    p.add_argument("--part-size", type=_positive_int, default=50)
    p.add_argument("--max-n", type=_positive_int, default=3000)
    p.set_defaults(func=cmd_compare_oracle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    set_num_threads(args.threads)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    # LinAlgError subclasses ValueError, so the numeric branch must come first
    except (FactorizationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
