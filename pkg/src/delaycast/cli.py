"""Command-line surface for the forecasting pipeline.

Subcommands: generate, embed, train, finetune, forecast, evaluate, tda,
koopman, attn, aggregate.  Exit codes: 0 success, 1 user or data error,
2 internal invariant violation.  All numeric CSV output uses 17 significant
digits; every artifact goes to caller-specified paths.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import MIConfig
from .data import (
    DataError,
    GENERATORS,
    NAN_POLICIES,
    Series,
    WindowSpec,
    load_csv,
    save_csv,
    zscore_apply,
    zscore_fit,
)
from .embedding import DelayConfig, build_hankel, partition_patches
from .encoder import EncoderConfig, ForecastModel, high_attention_tokens, load_model, save_model
from .koopman import (
    export_latents_csv,
    export_spectrum_csv,
    extract_latent_trajectory,
    fit_koopman,
    spectrum,
)
from .pipeline import aggregate_forecast, forecast_channel
from .topology import (
    PatchGrid,
    cluster_tokens,
    export_diagram_csv,
    export_distance_matrix_csv,
    patch_diagrams,
    token_distance_matrix,
)
from .training import TrainConfig, evaluate, finetune, train


class UsageError(ValueError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; user errors are exit 1
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fmt(v: float) -> str:
    return format(v, ".17g")


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return cfg


def _read_series(args, path=None) -> Series:
    return load_csv(
        path if path is not None else args.infile,
        nan_policy=args.nan_policy,
        skip_first_column=getattr(args, "skip_first_column", False),
    )


def _delay_from(cfg: dict, args) -> DelayConfig:
    section = dict(cfg.get("delay", {}))
    for key in ("m", "tau", "p", "q"):
        val = getattr(args, key, None)
        if val is not None:
            section[key] = val
    return DelayConfig(**section)


def _encoder_from(cfg: dict, seed, horizon=None) -> EncoderConfig:
    section = dict(cfg.get("encoder", {}))
    if seed is not None:
        section["seed"] = seed
    if horizon is not None:
        section["horizon"] = horizon
    return EncoderConfig(**section)


def _train_from(cfg: dict, args, seed) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if seed is not None:
        section["seed"] = seed
    for key in ("lr", "epochs", "batch_size", "data_fraction"):
        val = getattr(args, key.replace("data_fraction", "fraction"), None)
        if val is not None:
            section[key] = val
    return TrainConfig(**section)


def _window_from(cfg: dict, default_horizon=96) -> WindowSpec:
    section = dict(cfg.get("window", {}))
    section.setdefault("horizon", default_horizon)
    return WindowSpec(**section)


def _mi_from(cfg: dict, topk=None, bins=None) -> MIConfig:
    section = dict(cfg.get("mi", {}))
    if topk is not None:
        section["top_k"] = topk
        section.setdefault("w_self", 0.9)
        section["w_neighbor"] = (1.0 - section["w_self"]) / topk
    if bins is not None:
        section["n_bins"] = bins
    return MIConfig(**section)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_generate(args) -> int:
    gen = GENERATORS[args.kind]
    kwargs = {}
    if args.kind == "periodic":
        freqs = tuple(args.freq) if args.freq else (0.01,)
        amps = tuple(args.amp) if args.amp else (1.0,) * len(freqs)
        if len(amps) != len(freqs):
            raise UsageError("--amp must be given once per --freq")
        kwargs = {"freqs": freqs, "amps": amps, "noise_std": args.noise_std}
    elif args.kind == "sparse-pulse":
        kwargs = {"rate": args.rate, "amplitude": args.amplitude}
    series = gen(args.length, seed=args.seed, **kwargs)
    save_csv(series, args.out)
    print(f"wrote {args.out}: {series.n_channels} channels x {series.length} steps")
    return 0


def _cmd_embed(args) -> int:
    series = _read_series(args)
    delay = DelayConfig(m=args.m, tau=args.tau, p=args.p, q=args.q)
    x = series.channel(args.channel)
    grid = partition_patches(build_hankel(x, delay), delay)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for j in range(grid.patch_count):
        name = f"patch_{j + 1:04d}.csv"
        with open(outdir / name, "w", encoding="utf-8", newline="\n") as fh:
            for row in grid.patches[j]:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        files.append(name)
    manifest = {
        "channel": args.channel,
        "m": delay.m,
        "tau": delay.tau,
        "p": delay.p,
        "q": delay.q,
        "U": grid.U,
        "V": grid.V,
        "count": grid.patch_count,
        "leftover_rows": grid.leftover_rows,
        "leftover_cols": grid.leftover_cols,
        "files": files,
    }
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {grid.patch_count} patches to {outdir}")
    return 0


def _load_corpus(args) -> list[Series]:
    return [_read_series(args, path=p) for p in args.data.split(",")]


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    corpus = _load_corpus(args)
    delay = _delay_from(cfg, args)
    window = _window_from(cfg)
    enc = _encoder_from(cfg, args.seed, horizon=window.horizon)
    tcfg = _train_from(cfg, args, args.seed)
    model = ForecastModel(delay, enc, window.lookback)
    report = train(model, corpus, tcfg, window=WindowSpec(window.lookback, window.horizon, tcfg.stride))
    save_model(model, args.out)
    if args.report:
        report.to_csv(args.report)
    print(report.summary())
    print(f"wrote checkpoint {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    model = load_model(args.model)
    series = _read_series(args)
    section = dict(cfg.get("train", {}))
    section["freeze_encoder"] = True
    section.setdefault("lr", 5e-5)
    if args.seed is not None:
        section["seed"] = args.seed
    if args.lr is not None:
        section["lr"] = args.lr
    if args.epochs is not None:
        section["epochs"] = args.epochs
    if args.fraction is not None:
        section["data_fraction"] = args.fraction
    tcfg = TrainConfig(**section)
    report = finetune(model, series, tcfg)
    save_model(model, args.out)
    if args.report:
        report.to_csv(args.report)
    print(report.summary())
    print(f"wrote checkpoint {args.out}")
    return 0


def _parse_aggregate_flag(text: str) -> dict:
    out = {}
    for part in text.split():
        if "=" not in part:
            raise UsageError(f"--aggregate expects key=value pairs, got {part!r}")
        key, val = part.split("=", 1)
        out[key] = val
    if "target" not in out:
        raise UsageError("--aggregate requires target=<channel>")
    return out


def _cmd_forecast(args) -> int:
    model = load_model(args.model)
    series = _read_series(args)
    channels = [args.channel] if args.channel else list(series.names)
    agg_info = None
    columns = {}
    for name in channels:
        columns[name] = forecast_channel(model, series, name)
    if args.aggregate:
        spec = _parse_aggregate_flag(args.aggregate)
        topk = int(spec.get("topk", 5))
        cfg = _mi_from(_load_config(args.config), topk=topk)
        result = aggregate_forecast(model, series, spec["target"], cfg)
        columns[spec["target"]] = result.forecast
        agg_info = result
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in zip(*columns.values()):
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    print(f"wrote {args.out}: horizon {model.cfg.horizon}, channels {list(columns)}")
    if agg_info is not None:
        names = [series.names[j] for j in agg_info.neighbors]
        print(
            "aggregation: target weight "
            f"{agg_info.weights['self']}, neighbors {names} "
            f"(weight {agg_info.weights['neighbor']} each)"
        )
    return 0


def _cmd_evaluate(args) -> int:
    model = load_model(args.model)
    series = _read_series(args)
    horizon = args.horizon if args.horizon is not None else model.cfg.horizon
    if horizon != model.cfg.horizon:
        raise UsageError(
            f"--horizon {horizon} does not match the checkpoint horizon "
            f"{model.cfg.horizon}"
        )
    spec = WindowSpec(lookback=model.lookback, horizon=horizon, stride=args.stride)
    result = evaluate(model, series, spec)
    result.to_csv(args.out)
    print(f"wrote {args.out}: average MSE {result.mse:.6g}, MAE {result.mae:.6g}")
    return 0


def _cmd_tda(args) -> int:
    series = _read_series(args)
    delay = DelayConfig(m=args.m, tau=args.tau, p=args.p, q=args.q)
    x = series.channel(args.channel)
    grid = partition_patches(build_hankel(x, delay), delay)
    if args.max_patches and grid.patch_count > args.max_patches:
        grid = PatchGrid(
            patches=grid.patches[: args.max_patches],
            U=grid.U, V=grid.V, p=grid.p, q=grid.q,
            leftover_rows=grid.leftover_rows, leftover_cols=grid.leftover_cols,
        )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    diagrams = patch_diagrams(grid)
    with open(outdir / "diagrams.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("token,dim,birth,death\n")
        for j, dg in enumerate(diagrams):
            for dim, b, d in dg.features:
                death = "inf" if np.isinf(d) else _fmt(d)
                fh.write(f"token_{j + 1},{dim},{_fmt(b)},{death}\n")
    dm = token_distance_matrix(grid, metric=args.metric)
    export_distance_matrix_csv(dm, outdir / "distance_matrix.csv")
    if args.clusters:
        labels = cluster_tokens(dm, args.clusters)
        with open(outdir / "clusters.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("token,cluster\n")
            for j, lab in enumerate(labels):
                fh.write(f"token_{j + 1},{lab}\n")
    print(f"wrote TDA artifacts for {grid.patch_count} tokens to {outdir}")
    return 0


def _cmd_koopman(args) -> int:
    model = load_model(args.model)
    series = _read_series(args)
    stats = zscore_fit(series)
    norm = zscore_apply(series, stats)
    traj = extract_latent_trajectory(norm, args.channel, model, window_stride=args.stride)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    export_latents_csv(traj, outdir / "latents.csv")
    fit = fit_koopman(traj)
    export_spectrum_csv(spectrum(fit.K), outdir / "spectrum.csv")
    with open(outdir / "fit.json", "w", encoding="utf-8") as fh:
        json.dump(
            {"residual": fit.residual, "diagonalizable": fit.diagonalizable,
             "latent_dim": traj.latent_dim, "n_states": len(traj.states)},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {len(traj.states)} latent states and spectrum to {outdir}")
    return 0


def _cmd_attn(args) -> int:
    model = load_model(args.model)
    series = _read_series(args)
    stats = zscore_fit(series)
    norm = zscore_apply(series, stats)
    x = norm.channel(args.channel)
    if len(x) < model.lookback + args.start:
        raise DataError(
            f"channel too short for a window of {model.lookback} at offset {args.start}"
        )
    latent = model.encode_window(
        x[args.start : args.start + model.lookback], retain_attention=True
    )
    flags = high_attention_tokens(latent)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "flags.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("token,count\n")
        for j, c in enumerate(flags.histogram):
            fh.write(f"token_{j + 1},{c}\n")
    with open(outdir / "per_head.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,head,token\n")
        for layer, head, idxs in flags.per_head:
            for j in idxs:
                fh.write(f"{layer},{head},token_{j + 1}\n")
    print(
        f"wrote attention flags to {outdir}; "
        f"{int(flags.histogram.sum())} flags over "
        f"{len(flags.per_head)} heads"
    )
    return 0


def _cmd_aggregate(args) -> int:
    model = load_model(args.model)
    series = _read_series(args)
    cfg = _mi_from(_load_config(args.config), topk=args.topk, bins=args.bins)
    result = aggregate_forecast(model, series, args.target, cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "forecast.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("blended,baseline\n")
        for b, o in zip(result.forecast, result.baseline):
            fh.write(f"{_fmt(b)},{_fmt(o)}\n")
    with open(outdir / "neighbors.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rank,channel,nmi,weight\n")
        for rank, (j, score) in enumerate(zip(result.neighbors, result.neighbor_nmi), 1):
            fh.write(f"{rank},{series.names[j]},{_fmt(score)},{_fmt(cfg.w_neighbor)}\n")
    print(
        f"wrote aggregated forecast for {args.target!r} to {outdir} "
        f"(self weight {cfg.w_self})"
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> Parser:
    parser = Parser(prog="delaycast", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, model=False, infile=True):
        if model:
            p.add_argument("--model", required=True, help="checkpoint path")
        if infile:
            p.add_argument("--in", dest="infile", required=True, help="input CSV path")
        p.add_argument(
            "--nan-policy", choices=NAN_POLICIES, default="reject",
            help="how to treat NaNs in input CSVs",
        )
        p.add_argument(
            "--skip-first-column", action="store_true",
            help="ignore a leading timestamp column",
        )

    p = sub.add_parser("generate", help="write a synthetic series to CSV")
    p.add_argument("--kind", choices=sorted(GENERATORS), required=True)
    p.add_argument("--length", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--freq", type=float, action="append", default=None,
                   help="sinusoid frequency (repeatable; periodic only)")
    p.add_argument("--amp", type=float, action="append", default=None,
                   help="sinusoid amplitude (repeatable; periodic only)")
    p.add_argument("--noise-std", type=float, default=0.0, help="additive noise (periodic)")
    p.add_argument("--rate", type=float, default=0.05, help="pulse rate (sparse-pulse)")
    p.add_argument("--amplitude", type=float, default=5.0, help="pulse height (sparse-pulse)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("embed", help="export delay-embedding patches for one channel")
    add_common(p)
    p.add_argument("--channel", required=True)
    p.add_argument("--m", type=int, required=True, help="embedding dimension")
    p.add_argument("--tau", type=int, default=1, help="delay step")
    p.add_argument("--p", type=int, required=True, help="patch rows")
    p.add_argument("--q", type=int, required=True, help="patch columns")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("train", help="train a model on one or more CSV series")
    p.add_argument("--data", required=True, help="comma-separated CSV paths")
    p.add_argument("--config", help="JSON config path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--report", help="per-epoch report CSV path")
    p.add_argument("--nan-policy", choices=NAN_POLICIES, default="reject")
    p.add_argument("--skip-first-column", action="store_true",
                   help="ignore a leading timestamp column")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="head-only adaptation of a checkpoint")
    add_common(p, model=True)
    p.add_argument("--config", help="JSON config path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--fraction", type=float, default=None,
                   help="fraction of training windows to use (0 = zero-shot)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--report", help="per-epoch report CSV path")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("forecast", help="forecast beyond the end of a series")
    add_common(p, model=True)
    p.add_argument("--channel", help="forecast one channel (default: all)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--aggregate", help="'target=<channel> topk=<k>' enables MI blending")
    p.add_argument("--config", help="JSON config path (mi section)")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("evaluate", help="test-split MSE/MAE per channel")
    add_common(p, model=True)
    p.add_argument("--horizon", type=int, default=None,
                   help="must match the checkpoint horizon (validation only)")
    p.add_argument("--stride", type=int, default=1, help="test window stride")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("tda", help="persistence diagrams and token distances")
    add_common(p)
    p.add_argument("--channel", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--max-patches", type=int, default=81,
                   help="analyze at most this many leading tokens (0 = all)")
    p.add_argument("--metric", choices=("wasserstein", "twwd"), default="wasserstein")
    p.add_argument("--clusters", type=int, default=0,
                   help="agglomerative cluster count (0 = skip)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_tda)

    p = sub.add_parser("koopman", help="latent trajectory, operator fit, spectrum")
    add_common(p, model=True)
    p.add_argument("--channel", required=True)
    p.add_argument("--stride", type=int, default=1, help="window stride")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_koopman)

    p = sub.add_parser("attn", help="high-attention token analysis for one window")
    add_common(p, model=True)
    p.add_argument("--channel", required=True)
    p.add_argument("--start", type=int, default=0, help="window start offset")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_attn)

    p = sub.add_parser("aggregate", help="MI-guided blended forecast for a target")
    add_common(p, model=True)
    p.add_argument("--target", required=True, help="target channel name")
    p.add_argument("--topk", type=int, default=5, help="neighbor count")
    p.add_argument("--bins", type=int, default=None, help="NMI histogram bins")
    p.add_argument("--config", help="JSON config path (mi section)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_aggregate)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal invariant violations
        print(f"internal-error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
