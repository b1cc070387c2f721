"""Configuration-driven command line entry points.

Subcommands: sample | smallball | concentration | fit-density |
fit-classify | study | check.  Every command reads a line-oriented config
file (section.key = value), honors --seed/--out/--threads overrides, and
writes deterministic outputs under the output directory (given the seed;
wall-clock columns are the one documented exception).
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .checks import reference_spec, run_battery, zero_targets
from .concentration import (
    BrownianMotionModel,
    MCBudget,
    concentration_csv,
    ordering_deep_check,
    phi_deep,
    smallball_splitting,
)
from .config import ConfigError, RunConfig, load_config
from .experiments import (
    StudyConfig,
    contraction_study,
    make_truth_classif,
    make_truth_holder,
    sample_classif_data,
    sample_data,
)
from .grids import GridSpec
from .inference import posterior_radius, run_mcmc, save_chain
from .sampling import rejection_sample_layer


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgplab",
        description="constrained deep Gaussian process laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("sample", "draw constrained prior samples onto CSV grids"),
        ("smallball", "estimate Brownian small-ball probabilities"),
        ("concentration", "evaluate the deep concentration function"),
        ("fit-density", "posterior sampling for density estimation"),
        ("fit-classify", "posterior sampling for classification"),
        ("study", "contraction-rate study over a sample-size schedule"),
        ("check", "run the identity/inequality battery"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run configuration")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=None, help="override run.out output directory")
        p.add_argument("--threads", type=int, default=None, help="override run.threads")
    return parser


def _load(args) -> tuple[RunConfig, str]:
    config = load_config(args.config)
    if args.seed is not None:
        config.override("run.seed", int(args.seed))
    if args.out is not None:
        config.override("run.out", args.out)
    if args.threads is not None:
        config.override("run.threads", int(args.threads))
    out = config["run.out"]
    os.makedirs(out, exist_ok=True)
    return config, out


def _prior_spec(config):
    from .kernels import KernelSpec
    from .sampling import LayerSpec
    from .composition import DeepGPSpec

    family = config["prior.family"]
    params = config["prior.layer_params"]
    K = config["prior.deriv_bound"]
    d = config["prior.d"]
    m = config["prior.grid_m"]
    H = len(params)
    if H < 2:
        raise ConfigError("prior.layer_params needs at least two layers")
    layers = []
    for h, param in enumerate(params, start=1):
        d_in = d if h == 1 else 1
        grid = GridSpec(d_in, m)
        if family == "ibm":
            kern = KernelSpec.ibm(int(param))
        elif family == "rl":
            kern = KernelSpec.rl(float(param))
        else:
            kern = KernelSpec.matern(float(param), d_in)
        layers.append(
            LayerSpec(
                d_in=d_in,
                d_out=1,
                kernels=(kern,),
                grid=grid,
                value_bound_active=h < H,
                deriv_bounds=None if h == 1 else ((K,) * d_in,),
            )
        )
    return DeepGPSpec(tuple(layers))


def cmd_sample(config, out) -> int:
    spec = _prior_spec(config)
    seed = config["run.seed"]
    count = config["sample.count"]
    lines = ["sample,layer,component,attempts,file"]
    for k in range(count):
        for h, layer in enumerate(spec.layers):
            comps, attempts = rejection_sample_layer(
                layer, seed + 7919 * k + 101 * h, max_attempts=config["sample.max_attempts"]
            )
            for i, fn in enumerate(comps):
                name = f"sample_{k:03d}_layer{h + 1}_comp{i + 1}.csv"
                fn.to_csv(os.path.join(out, name))
                lines.append(f"{k},{h + 1},{i + 1},{attempts},{name}")
    _write(os.path.join(out, "samples_index.csv"), "\n".join(lines) + "\n")
    print(f"wrote {count} constrained sample(s) to {out}")
    return 0


def cmd_smallball(config, out) -> int:
    seed = config["run.seed"]
    model = BrownianMotionModel(
        m=config["smallball.m"],
        bridge_correction=config["smallball.bridge_correction"],
    )
    rows = ["eps,logp,se,levels,n_total"]
    for eps in config["smallball.eps"]:
        est = smallball_splitting(
            model,
            float(eps),
            config["smallball.levels"],
            config["smallball.n_per_level"],
            seed,
            n_batches=config["smallball.batches"],
        )
        rows.append(f"{eps!r},{est.logp!r},{est.se!r},{est.levels_used},{est.n_total}")
        print(f"eps={eps}: log P = {est.logp:.4f} +- {est.se:.4f} ({est.levels_used} levels)")
    _write(os.path.join(out, "smallball.csv"), "\n".join(rows) + "\n")
    return 0


def cmd_concentration(config, out) -> int:
    seed = config["run.seed"]
    spec = _prior_spec(config)
    z0 = zero_targets(spec)
    budget = MCBudget(
        n_mc=config["concentration.n_mc"],
        n_per_level=config["concentration.n_per_level"],
        batches=config["concentration.batches"],
        max_levels=config["concentration.max_levels"],
    )
    estimates = []
    report_lines = []
    failures = 0
    for eps in config["concentration.eps"]:
        est = phi_deep(spec, z0, float(eps), budget, seed)
        estimates.append(est)
        print(f"eps={eps}: Phi_c = {est.total:.3f} +- {est.total_se:.3f}")
        if config["concentration.ordering"]:
            rep = ordering_deep_check(spec, z0, float(eps), budget, seed)
            ok = rep.lemma_ordering_holds and rep.theorem_ordering_holds
            failures += 0 if ok else 1
            report_lines.append(
                f"eps={eps}: phi={rep.phi.value:.3f}+-{rep.phi.se:.3f} "
                f"phi_c={rep.phi_c.value:.3f}+-{rep.phi_c.se:.3f} "
                f"Phi_c={rep.phi_deep_total:.3f}+-{rep.phi_deep_se:.3f} "
                f"ordering={'ok' if ok else 'VIOLATED'}"
            )
    _write(os.path.join(out, "concentration.csv"), concentration_csv(estimates))
    if report_lines:
        _write(os.path.join(out, "ordering.txt"), "\n".join(report_lines) + "\n")
        for line in report_lines:
            print(line)
    return 1 if failures else 0


def _fit(config, out, task: str) -> int:
    seed = config["run.seed"]
    spec = _prior_spec(config)
    beta = config["fit.beta"]
    n = config["fit.n"]
    d = config["prior.d"]
    if task == "density":
        truth, _ = make_truth_holder(beta, d, config["fit.truth_m"])
        data = sample_data(truth, n, seed)
    else:
        truth = make_truth_classif(beta, d, config["fit.truth_m"])
        data = sample_classif_data(truth, n, seed)
    chain = run_mcmc(
        spec,
        data,
        task,
        iters=config["fit.iters"],
        burnin=config["fit.burnin"],
        thin=config["fit.thin"],
        seed=seed,
    )
    radius = posterior_radius(chain, truth, config["fit.quantile"], task=task)
    save_chain(chain, os.path.join(out, "chain"))
    lines = [
        f"task = {task}",
        f"n = {n}",
        f"radius_q{config['fit.quantile']} = {radius!r}",
    ]
    for (h, i), rate in chain.acceptance.items():
        lines.append(f"acceptance_layer{h + 1}_comp{i + 1} = {rate:.4f}")
    _write(os.path.join(out, "fit_summary.txt"), "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_fit_density(config, out) -> int:
    return _fit(config, out, "density")


def cmd_fit_classify(config, out) -> int:
    return _fit(config, out, "classification")


def cmd_study(config, out) -> int:
    study = StudyConfig(
        family=config["prior.family"],
        layer_params=config["prior.layer_params"],
        beta=config["study.beta"],
        deriv_bound=config["prior.deriv_bound"],
        d=config["prior.d"],
        n_schedule=config["study.n_schedule"],
        replicates=config["study.replicates"],
        grid_m=config["prior.grid_m"],
        truth_m=config["study.truth_m"],
        mcmc_iters=config["study.iters"],
        mcmc_burnin=config["study.burnin"],
        mcmc_thin=config["study.thin"],
        quantile=config["study.quantile"],
        seed=config["run.seed"],
        threads=config["run.threads"],
    )
    result = contraction_study(study)
    _write(os.path.join(out, "study.csv"), result.csv_text())
    _write(os.path.join(out, "study_summary.txt"), result.summary_text())
    medians = result.median_radii()
    dat = "\n".join(f"{n} {r!r}" for n, r in medians.items()) + "\n"
    _write(os.path.join(out, "study_medians.dat"), dat)
    xs = [math.log10(n) for n in medians]
    ys = [math.log10(r) for r in medians.values()]
    _write(os.path.join(out, "study_medians.svg"), svg_line_plot(xs, ys,
           "log10 n", "log10 radius"))
    print(result.summary_text(), end="")
    if result.excluded:
        print(f"warning: {result.excluded} failed cell(s) excluded from the fit")
    return 0 if result.excluded == 0 else 1


def cmd_check(config, out) -> int:
    results = run_battery(config)
    lines = [res.line() for res in results]
    _write(os.path.join(out, "check_report.txt"), "\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0 if all(res.passed for res in results) else 1


def svg_line_plot(xs, ys, xlabel: str, ylabel: str, width: int = 480, height: int = 320) -> str:
    """Minimal standalone SVG polyline plot (no styling dependencies)."""
    pad = 50
    if len(xs) < 2:
        return "<svg xmlns='http://www.w3.org/2000/svg'/>"
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    sx = lambda x: pad + (x - x0) / (x1 - x0 or 1.0) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0 or 1.0) * (height - 2 * pad)
    points = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
    return (
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>"
        f"<rect width='100%' height='100%' fill='white'/>"
        f"<polyline points='{points}' fill='none' stroke='black' stroke-width='1.5'/>"
        f"<line x1='{pad}' y1='{height - pad}' x2='{width - pad}' y2='{height - pad}' stroke='black'/>"
        f"<line x1='{pad}' y1='{pad}' x2='{pad}' y2='{height - pad}' stroke='black'/>"
        f"<text x='{width // 2}' y='{height - 12}' font-size='12'>{xlabel}</text>"
        f"<text x='12' y='{height // 2}' font-size='12' transform='rotate(-90 12 {height // 2})'>"
        f"{ylabel}</text>"
        f"</svg>"
    )


def _write(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


COMMANDS = {
    "sample": cmd_sample,
    "smallball": cmd_smallball,
    "concentration": cmd_concentration,
    "fit-density": cmd_fit_density,
    "fit-classify": cmd_fit_classify,
    "study": cmd_study,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config, out = _load(args)
        return COMMANDS[args.command](config, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
