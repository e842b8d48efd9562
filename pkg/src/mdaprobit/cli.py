"""Command-line front end: ``simulate``, ``fit``, ``diagnose``, ``compare`` and ``rerun``.

Every command writes ``<output>.manifest.json`` next to its main output; the
manifest holds the fully resolved settings and input digests, and
``mdaprobit rerun <manifest>`` reproduces the outputs byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
stuck-chain error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DegenerateSeriesError, autocorrelation, compare_chains, effective_sample_size, summarize, transform_draws
from .distributions import SamplerStuckError, make_rng
from .experiments import CovariateBlock, SimStudyConfig, default_workers, generate_simulation
from .io import (
    ConfigError,
    ConfigReader,
    DataError,
    atomic_write,
    beta_from_params,
    choice_data_text,
    draws_text,
    fmt,
    read_choice_data,
    read_config,
    read_draws,
    read_json,
    sha256,
    sigma_from_params,
    write_json,
    _csv_text,
)
from .model import DegenerateTieError, Identification, PriorSpec, init_state, satisfies_identification
from .samplers import ChainFailure, ConfigurationError, SamplerConfig, check_compatibility, get_variant, run_chain

log = logging.getLogger("mdaprobit")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
ACF_LAGS = 50

SIMULATE_KEYS = {"n", "beta_true", "sigma_true", "seed"} | {f"block_{i}" for i in range(1, 100)}
FIT_KEYS = {"variant", "identification", "nu", "s", "alpha0_sq", "a", "beta0", "iterations", "burn_in",
            "thin", "seed", "max_rejections", "exact_fallback", "chains", "data_mode", "keep_latent", "init_beta", "init_sigma"}


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


def _entries_from(path, overrides: dict) -> dict:
    """Config entries ``{key: (value, line)}`` with command-line overrides applied (line 0)."""
    entries = read_config(path) if path else {}
    for key, value in overrides.items():
        if value is not None:
            entries[key] = (str(value), 0)
    return entries


# simulate ---------------------------------------------------------------

def resolve_simulation(reader: ConfigReader) -> SimStudyConfig:
    n = reader.int("n", 50)
    if n < 1:
        raise reader.error("n", f"must be at least 1, got {n}")
    beta = reader.floats("beta_true", np.array([-np.sqrt(2.0), 1.0]))
    q = beta.size
    Sigma = reader.floats("sigma_true", np.array([1.0, 0.5, 0.5, 1.0]))
    p = int(round(np.sqrt(Sigma.size)))
    if p * p != Sigma.size:
        raise reader.error("sigma_true", "needs p*p row-major values")
    blocks = []
    for i in range(1, 100):
        key = f"block_{i}"
        if not reader.has(key):
            break
        vals = reader.floats(key)
        if vals.size != 2 + 2 * q:
            raise reader.error(key, f"expected start, stop and {q} low/high pairs")
        try:
            blocks.append(CovariateBlock(int(vals[0]), int(vals[1]),
                                         tuple((vals[2 + 2 * j], vals[3 + 2 * j]) for j in range(q))))
        except ValueError as exc:
            raise reader.error(key, str(exc)) from None
    try:
        return SimStudyConfig(n=n, beta_true=tuple(beta), Sigma_true=tuple(map(tuple, Sigma.reshape(p, p))),
                              covariate_blocks=tuple(blocks) or None, seed=reader.int("seed", 0))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"{reader.source}: {exc}") from None


def do_simulate(entries: dict, output: Path, source: str):
    reader = ConfigReader(entries, source, SIMULATE_KEYS)
    return _simulate(resolve_simulation(reader), output)


def _simulate(cfg: SimStudyConfig, output: Path):
    sim = generate_simulation(cfg)
    atomic_write(output, choice_data_text(sim.data))
    truth = {
        "beta_true": [fmt(v) for v in np.asarray(cfg.beta_true)],
        "Sigma_true": [[fmt(v) for v in row] for row in np.asarray(cfg.Sigma_true)],
        "W_true": [[fmt(v) for v in row] for row in sim.W_true],
        "seed": cfg.seed,
    }
    truth_path = Path(str(output) + ".truth.json")
    write_json(truth_path, truth)
    return {"data": output, "truth": truth_path}, {}


# fit ----------------------------------------------------------------------

def resolve_fit(reader: ConfigReader, p: int, q: int):
    try:
        variant = get_variant(reader.raw("variant", "1.3"))
    except ConfigurationError as exc:
        raise reader.error("variant", str(exc)) from None
    ident_raw = reader.raw("identification")
    if ident_raw is None:
        ident = variant.identification
    else:
        try:
            ident = Identification(ident_raw.lower())
        except ValueError:
            raise reader.error("identification", "expected 'first_diagonal' or 'trace'") from None
        if ident is not variant.identification:
            raise reader.error("identification", f"algorithm {variant.name} requires "
                                                 f"{variant.identification.value} identification")
    nu = reader.float("nu", float(p))
    try:
        prior = PriorSpec(
            nu=nu,
            S=reader.matrix("s", p, np.eye(p)),
            alpha0_sq=reader.float("alpha0_sq", nu),
            A=reader.matrix("a", q, 100.0 * np.eye(q), allow_diagonal=True),
            beta0=reader.floats("beta0", np.zeros(q)),
            identification=ident,
        )
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"{reader.source}: prior: {exc}") from None
    try:
        config = SamplerConfig(
            iterations=reader.int("iterations", 15_000),
            burn_in=reader.int("burn_in", 5_000),
            thin=reader.int("thin", 1),
            seed=reader.int("seed", 0),
            max_rejections=reader.int("max_rejections", 1_000_000),
            exact_fallback=reader.flag("exact_fallback"),
            keep_latent=tuple(i - 1 for i in reader.ints("keep_latent")),
        )
    except ConfigurationError as exc:
        raise ConfigError(f"{reader.source}: {exc}") from None
    chains = reader.int("chains", 1)
    if chains < 1:
        raise reader.error("chains", "must be at least 1")
    return variant, prior, config, chains


def resolve_init(reader: ConfigReader, data, prior: PriorSpec):
    """Starting state: the Step-0 rule of :func:`init_state`, with optional beta and Sigma overrides."""
    state = init_state(data, prior)
    beta = reader.floats("init_beta")
    if beta is not None:
        if beta.size != data.q:
            raise reader.error("init_beta", f"expected {data.q} values, got {beta.size}")
        state.beta = beta
    Sigma = reader.matrix("init_sigma", data.p)
    if Sigma is not None:
        if not np.allclose(Sigma, Sigma.T) or np.any(np.linalg.eigvalsh(Sigma) <= 0):
            raise reader.error("init_sigma", "must be symmetric positive definite")
        if not satisfies_identification(Sigma, prior.identification):
            raise reader.error("init_sigma", f"must satisfy {prior.identification.value} identification")
        state.Sigma = Sigma
    return state


def _fit_one(args):
    variant, data, prior, config, stream, init = args
    return run_chain(variant, data, prior, config, rng=make_rng(config.seed, stream), init=init)


def do_fit(entries: dict, data_path: Path, output: Path, source: str):
    reader = ConfigReader(entries, source, FIT_KEYS)
    mode = reader.raw("data_mode", "wide")
    if mode not in ("wide", "prices"):
        raise reader.error("data_mode", "expected 'wide' or 'prices'")
    data = read_choice_data(data_path, mode)
    variant, prior, config, chains = resolve_fit(reader, data.p, data.q)
    if any(not 0 <= i < data.n for i in config.keep_latent):
        raise reader.error("keep_latent", f"indices must lie in 1..{data.n}")
    try:
        check_compatibility(variant, prior, data)
    except ConfigurationError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    init = resolve_init(reader, data, prior)
    jobs = [(variant, data, prior, config, c, init) for c in range(chains)]
    workers = min(default_workers(), chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_fit_one, jobs))
    else:
        outs = [_fit_one(j) for j in jobs]
    atomic_write(output, draws_text(outs))
    counters = Path(str(output) + ".counters.csv")
    rows = []
    for c, out in enumerate(outs):
        rows.extend((c, int(it), int(r), int(v)) for it, r, v in zip(out.iterations, out.rejections, out.violations))
    atomic_write(counters, _csv_text(["chain", "iteration", "rejections", "violation"], rows))
    extra = {
        "resolved": {
            "variant": variant.name,
            "identification": prior.identification.value,
            "nu": prior.nu,
            "S": prior.S.tolist(),
            "alpha0_sq": prior.alpha0_sq,
            "A": prior.A.tolist(),
            "beta0": prior.beta0.tolist(),
            "iterations": config.iterations,
            "burn_in": config.burn_in,
            "thin": config.thin,
            "seed": config.seed,
            "max_rejections": config.max_rejections,
            "exact_fallback": config.exact_fallback,
            "chains": chains,
            "data_mode": mode,
            "keep_latent": [i + 1 for i in config.keep_latent],
            "init_beta": init.beta.tolist(),
            "init_sigma": init.Sigma.tolist(),
        },
        "timing": {"chain_seconds": [o.seconds for o in outs]},
        "counters": {
            "total_rejections": [o.total_rejections for o in outs],
            "total_violations": [o.total_violations for o in outs],
            "retained_violation_fraction": [o.violation_fraction for o in outs],
        },
    }
    return {"draws": output, "counters": counters}, extra


# diagnose -----------------------------------------------------------------

def chain_transforms(params: dict) -> dict:
    return transform_draws(sigma_from_params(params), beta_from_params(params))


def do_diagnose(entries: dict, draws_path: Path, output: Path, source: str):
    chains = read_draws(draws_path)
    seconds = None
    mpath = manifest_path(draws_path)
    if mpath.exists():
        seconds = read_json(mpath).get("timing", {}).get("chain_seconds")
    if seconds is None:
        log.warning("no timing found for %s; ESS per second omitted", draws_path)
    header = (["chain", "parameter", "n", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5",
               "ess", "ess_per_second", "lag_cutoff"] + [f"acf_{k}" for k in range(ACF_LAGS + 1)])
    rows = []
    for c, chain in chains.items():
        series = chain_transforms(chain["params"])
        sec = seconds[c] if seconds is not None and c < len(seconds) else None
        for name, values in series.items():
            if values.size < 100:
                raise DataError(f"{draws_path}: chain {c} has {values.size} draws; at least 100 are needed")
            s = summarize(values)
            try:
                rep = effective_sample_size(values, sec)
                acf = autocorrelation(values, min(ACF_LAGS, values.size - 1))
                ess = [fmt(rep.ess), "" if rep.ess_per_second is None else fmt(rep.ess_per_second), str(rep.lag_cutoff)]
                acf_cells = [fmt(v) for v in acf]
            except DegenerateSeriesError:
                ess, acf_cells = ["", "", ""], []
            acf_cells += [""] * (ACF_LAGS + 1 - len(acf_cells))
            rows.append([str(c), name, str(values.size)] + [fmt(v) for v in s.values()] + ess + acf_cells)
    atomic_write(output, _csv_text(header, rows))
    return {"diagnostics": output}, {}


# compare --------------------------------------------------------------------

def _pooled(path) -> dict:
    pooled = {}
    for chain in read_draws(path).values():
        for name, values in chain_transforms(chain["params"]).items():
            pooled.setdefault(name, []).append(values)
    return {k: np.concatenate(v) for k, v in pooled.items()}


def do_compare(entries: dict, path_a: Path, path_b: Path, output: Path, source: str):
    a, b = _pooled(path_a), _pooled(path_b)
    if set(a) != set(b):
        only_a, only_b = sorted(set(a) - set(b)), sorted(set(b) - set(a))
        raise DataError(f"parameter sets differ: only in {path_a}: {only_a}; only in {path_b}: {only_b}")
    rows = []
    for name in a:
        cmp = compare_chains(a[name], b[name])
        rows.extend((name, fmt(pr), fmt(qa), fmt(qb), fmt(cmp.ks_statistic))
                    for pr, qa, qb in zip(cmp.probabilities, cmp.quantiles_a, cmp.quantiles_b))
    atomic_write(output, _csv_text(["parameter", "probability", "quantile_a", "quantile_b", "ks_statistic"], rows))
    return {"comparison": output}, {}


# plumbing -----------------------------------------------------------------

def _inputs(paths: dict) -> dict:
    out = {}
    for key, path in paths.items():
        try:
            out[key] = {"path": str(Path(path).resolve()), "sha256": sha256(path)}
        except OSError as exc:
            raise DataError(f"cannot read {key} file {path}: {exc}") from exc
    return out


def execute(command: str, entries: dict, inputs: dict, output: Path, source: str = "<config>") -> dict:
    """Run one command from config entries ``{key: (value, line)}`` and write its manifest."""
    start = time.perf_counter()
    input_record = _inputs(inputs)
    output = Path(output)
    if command == "simulate":
        outputs, extra = do_simulate(entries, output, source)
    elif command == "fit":
        outputs, extra = do_fit(entries, Path(inputs["data"]), output, source)
    elif command == "diagnose":
        outputs, extra = do_diagnose(entries, Path(inputs["draws"]), output, source)
    elif command == "compare":
        outputs, extra = do_compare(entries, Path(inputs["draws_a"]), Path(inputs["draws_b"]), output, source)
    else:
        raise ConfigError(f"unknown command {command!r}")
    manifest = {
        "tool": "mdaprobit",
        "version": __version__,
        "command": command,
        "settings": {k: v for k, (v, _) in entries.items()},
        "inputs": input_record,
        "output": str(Path(output).resolve()),
        "outputs": {k: {"path": str(Path(v).resolve()), "sha256": sha256(v)} for k, v in outputs.items()},
        "seconds": time.perf_counter() - start,
    }
    manifest.update(extra)
    write_json(manifest_path(output), manifest)
    return manifest


def rerun(manifest_file, output=None) -> dict:
    try:
        manifest = read_json(manifest_file)
        command, settings, inputs = manifest["command"], manifest["settings"], manifest["inputs"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{manifest_file}: not a readable manifest ({exc})") from None
    paths = {}
    for key, rec in inputs.items():
        if not Path(rec["path"]).exists() or sha256(rec["path"]) != rec["sha256"]:
            raise DataError(f"{manifest_file}: input {key} ({rec['path']}) is missing or has changed")
        paths[key] = rec["path"]
    entries = {k: (str(v), 0) for k, v in settings.items()}
    return execute(command, entries, paths, Path(output or manifest["output"]), str(manifest_file))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdaprobit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic choice dataset and its truth record")
    p.add_argument("--config", "-c")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o", required=True)

    p = sub.add_parser("fit", help="run a sampler and write long-format draws")
    p.add_argument("data")
    p.add_argument("--config", "-c")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant")
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)
    p.add_argument("--output", "-o", required=True)

    p = sub.add_parser("diagnose", help="summaries, autocorrelations and ESS for a draws file")
    p.add_argument("draws")
    p.add_argument("--output", "-o", required=True)

    p = sub.add_parser("compare", help="KS statistics and QQ pairs between two draws files")
    p.add_argument("draws_a")
    p.add_argument("draws_b")
    p.add_argument("--output", "-o", required=True)

    p = sub.add_parser("rerun", help="re-execute a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--output", "-o")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        if args.command == "rerun":
            rerun(args.manifest, args.output)
            return 0
        output = Path(args.output)
        if args.command == "simulate":
            entries = _entries_from(args.config, {"seed": args.seed})
            execute("simulate", entries, {}, output, args.config or "<defaults>")
        elif args.command == "fit":
            overrides = {"seed": args.seed, "variant": args.variant, "iterations": args.iterations,
                         "burn_in": args.burn_in, "thin": args.thin}
            entries = _entries_from(args.config, overrides)
            execute("fit", entries, {"data": args.data}, output, args.config or "<defaults>")
        elif args.command == "diagnose":
            execute("diagnose", {}, {"draws": args.draws}, output)
        elif args.command == "compare":
            execute("compare", {}, {"draws_a": args.draws_a, "draws_b": args.draws_b}, output)
    except ConfigError as exc:
        print(f"mdaprobit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"mdaprobit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerStuckError, ChainFailure, np.linalg.LinAlgError, DegenerateTieError) as exc:
        print(f"mdaprobit: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
