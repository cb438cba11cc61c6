"""
crpa-rope Main Entry Point
Command-line surface over the RoPE, phase-kernel, probe and simulation modules.
Data goes to stdout or --out, diagnostics to stderr.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import Callable, Optional

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from config import Config
from errors import DomainError, IngestionError
from helper import DEFAULT_SCHEMES, SCHEMES, TOOL_NAME, TOOL_VERSION, provenance_line, write_csv
from logging_setup import setup_logging
from mixed_attention import pairwise_phase_errors, toy_layout
from phase_kernel import decompose, dominant_frequencies, kernel_to_records
from position_maps import (
    NtkParams,
    YarnParams,
    build_piecewise_map,
    ntk_rescale,
    toy_segments,
    unify_regions,
    yarn_rescale,
)
from probe import (
    HeadProbe,
    delta_grid,
    export_curves,
    kappa_by_dominance,
    kappa_curve,
    rds_score,
    rope_only_curve,
    samples_from_dumps,
)
from rope_core import make_frequencies
from schemas import CliConfig
from sim import (
    ScheduleConfig,
    SimSettings,
    build_synthetic_model,
    compare_schemes,
    load_layout,
    load_schedule,
    make_target,
    ratio_sweep,
    reports_frame,
    sim_model_for_grid,
    sweep_frame,
)
from tensor_io import read_tensor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


class _Run:
    """Validated flags plus the loaded configuration of one invocation"""

    def __init__(self, cli: CliConfig, cfg: Config, argv: list[str]):
        self.cli = cli
        self.cfg = cfg
        self.argv = argv

    @property
    def seed(self) -> int:
        return self.cli.seed if self.cli.seed is not None else self.cfg.seed

    def pick(self, name: str, default):
        val = getattr(self.cli, name)
        return default if val is None else val

    def emit_csv(self, frame: pd.DataFrame) -> None:
        write_csv(frame, self.cli.out or sys.stdout, provenance_line([TOOL_NAME] + self.argv))

    def emit_text(self, text: str) -> None:
        if self.cli.out:
            with open(self.cli.out, "w") as f:
                f.write(text)
        else:
            sys.stdout.write(text)


# ---- subcommands ----


def cmd_freqs(run: _Run) -> int:
    dim = run.pick("dim", run.cfg.rope_dim)
    fs = make_frequencies(dim, run.pick("base", run.cfg.rope_base))
    frame = pd.DataFrame({"i": np.arange(fs.num_pairs), "omega": fs.omega})
    if run.cli.ntk_s is not None:
        ntk = NtkParams(run.cli.ntk_s)
        frame["omega_ntk"] = ntk_rescale(fs, ntk).omega
        frame["ntk_lambda"] = ntk.lam(dim)
    if run.cli.yarn_s is not None:
        yarn = run.cfg.yarn_params
        params = YarnParams(
            train_length=run.pick("yarn_length", yarn["train_length"]),
            extension_factor=run.cli.yarn_s,
            alpha=run.pick("yarn_alpha", yarn["alpha"]),
            beta=run.pick("yarn_beta", yarn["beta"]),
            temperature=run.pick("yarn_temperature", yarn["temperature"]),
        )
        frame["omega_yarn"] = yarn_rescale(fs, params).omega
    run.emit_csv(frame)
    return EXIT_OK


def _load_pair_dumps(run: _Run) -> tuple[np.ndarray, np.ndarray]:
    if not run.cli.q or not run.cli.k:
        raise IngestionError("--q and --k dumps are required unless --synthetic or --rope-only is given")
    return read_tensor(run.cli.q), read_tensor(run.cli.k)


def cmd_probe(run: _Run) -> int:
    cfg = run.cfg
    deltas = delta_grid(run.pick("delta_min", cfg.probe_delta_min), run.pick("delta_max", cfg.probe_delta_max))
    axis = run.cli.axis
    base = run.pick("base", cfg.rope_base)
    if run.cli.rope_only:
        curves = [rope_only_curve(make_frequencies(run.pick("dim", cfg.rope_dim), base), deltas, axis=axis)]
    elif run.cli.synthetic:
        model = build_synthetic_model(
            run.pick("num_heads", cfg.probe_num_heads),
            run.pick("dim", cfg.rope_dim),
            run.pick("sharpness", cfg.probe_sharpness),
            run.seed,
            base=base,
        )
        samples = model.sample_pairs(run.pick("pairs", cfg.probe_pairs), run.seed)
        curves = [kappa_curve(samples, model.groups[0].schedule, deltas, axis=axis)]
    else:
        q, k = _load_pair_dumps(run)
        if q.ndim == 3:
            if not (run.cli.weights or run.cli.key_weights):
                raise IngestionError("per-head dumps [heads, n, dim] need --weights or --key-weights [heads, dim, model_dim]")
            weights = _projection_rows(run)
            if weights.ndim != 3 or weights.shape[0] != q.shape[0]:
                raise IngestionError(f"weights shape {weights.shape} does not match {q.shape[0]} heads")
            heads = [HeadProbe(tuple(samples_from_dumps(q[h], k[h])), weights[h]) for h in range(q.shape[0])]
            fs = make_frequencies(q.shape[-1], base)
            split = kappa_by_dominance(heads, fs, deltas, run.pick("threshold", cfg.probe_threshold), axis=axis)
            curves = [replace(c, axis=f"{axis}:{name}") for name, c in split.items()]
        else:
            samples = samples_from_dumps(q, k)
            curves = [kappa_curve(samples, make_frequencies(q.shape[1], base), deltas, axis=axis)]
    export_curves(curves, run.cli.out or sys.stdout, provenance_line([TOOL_NAME] + run.argv))
    return EXIT_OK


def _projection_rows(run: _Run) -> np.ndarray:
    """Query (--weights) or key (--key-weights) projection rows, per --projection or probe.weights"""
    which = run.pick("projection", run.cfg.probe_weights)
    path = run.cli.weights if which == "query" else run.cli.key_weights
    if not path:
        flag = "--weights" if which == "query" else "--key-weights"
        raise IngestionError(f"{flag} is required for {which} projection rows")
    logger.debug(f"{which} projection rows from {path}")
    return read_tensor(path)


def cmd_rds(run: _Run) -> int:
    weights = _projection_rows(run)
    stack = weights[None] if weights.ndim == 2 else weights
    threshold = run.pick("threshold", run.cfg.probe_threshold)
    rows = []
    for h, rows_h in enumerate(stack):
        stats = rds_score(rows_h, threshold)
        rows.append({"head": h, "rds": stats.rds, "dominant": stats.is_rope_dominant})
    run.emit_csv(pd.DataFrame(rows, columns=["head", "rds", "dominant"]))
    return EXIT_OK


def cmd_kernel(run: _Run) -> int:
    base = run.pick("base", run.cfg.rope_base)
    if run.cli.q or run.cli.k:
        q, k = _load_pair_dumps(run)
        q, k = q.reshape(-1), k.reshape(-1)
    else:
        dim = run.pick("dim", run.cfg.rope_dim)
        rng = np.random.default_rng(run.seed)
        q, k = rng.standard_normal(dim), rng.standard_normal(dim)
    kernel = decompose(q, k, make_frequencies(len(q), base))
    top = dominant_frequencies(kernel, run.pick("top_n", run.cfg.kernel_top_n))
    doc = {
        "terms": kernel_to_records(kernel),
        "dominant": [{"omega": w, "amplitude": a} for w, a in top],
    }
    run.emit_text(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_aliasing_demo(run: _Run) -> int:
    layout = toy_layout(2)
    params = run.cfg.scheme_params
    tokens = np.arange(layout.num_tokens)
    segments = toy_segments(layout.ratio)
    fractional = build_piecewise_map(unify_regions(segments, "fractional"), "fractional")
    integerized = build_piecewise_map(unify_regions(segments, "integerized"), "integerized")
    frame = pd.DataFrame(
        {
            "token": tokens,
            "physical": layout.physical[:, 0],
            "region": np.where(layout.is_hr, "hr", "lr"),
            "fractional": fractional(tokens),
            "integerized": integerized(tokens),
        }
    )
    for scheme in ("pi-lr", "pi-hr", "crpa"):
        errs = pairwise_phase_errors(layout, scheme, params)
        frame[f"err_{scheme.replace('-', '_')}"] = errs.max(axis=(1, 2))
    run.emit_csv(frame)
    return EXIT_OK


def _schedule(run: _Run) -> ScheduleConfig:
    """--schedule file as is, otherwise config defaults with step and ratio flags applied"""
    if run.cli.schedule:
        return load_schedule(run.cli.schedule)
    raw = dict(run.cfg.sim_schedule)
    for key in ("coarse_steps", "mixed_steps", "fine_steps"):
        if getattr(run.cli, key) is not None:
            raw[key] = getattr(run.cli, key)
    raw["total_steps"] = raw["coarse_steps"] + raw["mixed_steps"] + raw["fine_steps"]
    raw["hr_token_ratio"] = run.pick("ratio", raw["hr_token_ratio"])
    return ScheduleConfig.model_validate(raw)


def _sim_inputs(run: _Run):
    cfg = run.cfg
    grid = run.pick("grid", cfg.sim_grid)
    layout = load_layout(run.cli.layout) if run.cli.layout else None
    if layout is not None:
        grid = layout.axes[0]
    model = sim_model_for_grid(
        grid,
        ratio=cfg.sim_upsample,
        num_heads=cfg.sim_num_heads,
        head_dim=cfg.sim_head_dim,
        kernel_width=cfg.sim_kernel_width,
        base=run.pick("base", cfg.rope_base),
        seed=run.seed,
        eta=cfg.sim_eta,
        target_pull=cfg.sim_target_pull,
    )
    target = make_target(model, grid, cfg.sim_upsample, cfg.sim_channels, run.seed)
    settings = SimSettings(
        n_pad_lr=run.pick("n_pad_lr", cfg.boundary_n_pad_lr),
        n_pad_hr=run.pick("n_pad_hr", cfg.boundary_n_pad_hr),
        boundary=cfg.boundary_enabled and not run.cli.no_boundary,
        pool=run.pick("pool", cfg.pool_mode),
        params=cfg.scheme_params,
        sigma_shift=cfg.sim_sigma_shift,
    )
    return model, target, settings, layout


def cmd_simulate(run: _Run) -> int:
    model, target, settings, layout = _sim_inputs(run)
    scheme = run.pick("scheme", "crpa")
    reports = compare_schemes(model, target, _schedule(run), [scheme], layout, settings, run.seed)
    run.emit_csv(reports_frame(reports, run.cli.timings))
    return EXIT_OK


def cmd_compare(run: _Run) -> int:
    model, target, settings, layout = _sim_inputs(run)
    schemes = run.pick("schemes", run.cfg.sim_schemes)
    reports = compare_schemes(model, target, _schedule(run), schemes, layout, settings, run.seed)
    run.emit_csv(reports_frame(reports, run.cli.timings))
    return EXIT_OK


def cmd_sweep(run: _Run) -> int:
    model, target, settings, _ = _sim_inputs(run)
    ratios = run.pick("ratios", run.cfg.sim_ratios)
    reports = ratio_sweep(model, target, _schedule(run), ratios, run.pick("scheme", "crpa"), settings, run.seed)
    run.emit_csv(sweep_frame(reports))
    return EXIT_OK


# ---- parser ----


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--seed", type=int, help="global seed (overrides config and CRPA_SEED)")
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    return p


def _rope_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, help="head dimension (even)")
    p.add_argument("--base", type=float, help="frequency base")


def _projection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--key-weights", help="key projection rows, same layout as --weights")
    p.add_argument("--projection", choices=["query", "key"], help="which projection the rds score reads")


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--coarse-steps", type=int)
    p.add_argument("--mixed-steps", type=int)
    p.add_argument("--fine-steps", type=int)
    p.add_argument("--n-pad-lr", type=int, help="LR band width in LR tokens")
    p.add_argument("--n-pad-hr", type=int, help="HR band width in fine tokens")
    p.add_argument("--no-boundary", action="store_true", help="disable expand-and-replace")
    p.add_argument("--pool", choices=["mean", "stride0"], help="HR key pooling for LR queries")
    p.add_argument("--grid", type=int, help="LR grid extent per axis")
    p.add_argument("--layout", help="layout JSON with HR boxes")
    p.add_argument("--schedule", help="schedule JSON (ScheduleConfig)")
    p.add_argument("--base", type=float, help="frequency base")
    p.add_argument("--timings", action="store_true", help="fill the seconds column (output is then not reproducible)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Mixed-resolution RoPE analysis and CRPA toolkit")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("freqs", parents=[common], help="frequency table, optionally NTK/YaRN rescaled")
    _rope_flags(p)
    p.add_argument("--ntk-s", type=float, help="NTK extension factor")
    p.add_argument("--yarn-s", type=float, help="YaRN extension factor")
    p.add_argument("--yarn-length", type=float)
    p.add_argument("--yarn-alpha", type=float)
    p.add_argument("--yarn-beta", type=float)
    p.add_argument("--yarn-temperature", type=float)
    p.set_defaults(handler=cmd_freqs)

    p = sub.add_parser("probe", parents=[common], help="kappa(delta) curves")
    _rope_flags(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="use the synthetic head bank")
    src.add_argument("--rope-only", action="store_true", help="content-free baseline curve")
    p.add_argument("--q", help="query dump [n, dim] or [heads, n, dim]")
    p.add_argument("--k", help="key dump, same shape as --q")
    p.add_argument("--weights", help="query projection rows [heads, dim, model_dim] for the dominance split")
    _projection_flags(p)
    p.add_argument("--delta-min", type=int)
    p.add_argument("--delta-max", type=int)
    p.add_argument("--pairs", type=int)
    p.add_argument("--num-heads", type=int)
    p.add_argument("--sharpness", type=float)
    p.add_argument("--axis", help="axis label written to the CSV")
    p.add_argument("--threshold", type=float)
    p.set_defaults(handler=cmd_probe)

    p = sub.add_parser("rds", parents=[common], help="RoPE-dominance score of projection rows")
    p.add_argument("--weights", help="query projection rows, [dim, model_dim] or [heads, dim, model_dim]")
    _projection_flags(p)
    p.add_argument("--threshold", type=float)
    p.set_defaults(handler=cmd_rds)

    p = sub.add_parser("kernel", parents=[common], help="phase-kernel decomposition of one (q, k) pair as JSON")
    _rope_flags(p)
    p.add_argument("--q", help="query vector dump")
    p.add_argument("--k", help="key vector dump")
    p.add_argument("--top-n", type=int)
    p.set_defaults(handler=cmd_kernel)

    p = sub.add_parser("aliasing-demo", parents=[common], help="index sequences and phase errors on the 11-token layout")
    p.set_defaults(handler=cmd_aliasing_demo)

    p = sub.add_parser("simulate", parents=[common], help="one scheme through the toy pipeline")
    _sim_flags(p)
    p.add_argument("--scheme", choices=sorted(SCHEMES))
    p.add_argument("--ratio", type=float, help="HR token ratio")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("compare", parents=[common], help="several schemes against one reference")
    _sim_flags(p)
    p.add_argument("--schemes", nargs="+", help=f"default: {' '.join(DEFAULT_SCHEMES)}")
    p.add_argument("--ratio", type=float, help="HR token ratio")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("sweep", parents=[common], help="deviation over HR token ratios")
    _sim_flags(p)
    p.add_argument("--scheme", choices=sorted(SCHEMES))
    p.add_argument("--ratios", nargs="+", type=float)
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    flags = {k: v for k, v in vars(args).items() if k != "handler" and v is not None}
    handler: Callable[[_Run], int] = args.handler
    setup_logging(verbose=bool(flags.get("verbose")))
    try:
        cli = CliConfig.model_validate(flags)
    except ValidationError as e:
        logger.error(f"invalid arguments: {e}")
        return EXIT_USAGE

    cfg = Config()
    try:
        cfg.load_from_yaml(cli.config)
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (ValueError, yaml.YAMLError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    setup_logging(cfg.logging_config, cli.verbose, run_name=cli.command)

    try:
        return handler(_Run(cli, cfg, argv))
    except DomainError as e:
        logger.error(str(e))
        return EXIT_DOMAIN
    except (IngestionError, FileNotFoundError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except ValidationError as e:
        logger.error(f"invalid input: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
