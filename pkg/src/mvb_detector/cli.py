"""Command-line front end: ``mvbd simulate | fit | summarize | bf | prior-check``.

Settings come from an optional flat ``key = value`` file (``--config``) and
are overridden by command-line flags of the same name, with dashes in flags
standing for underscores in keys. Exit codes: 0 success, 1 failed prior
check, 2 usage error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import AllowedSet, DataError, Dataset, compute_allowed_set, dataset_to_csv, parse_dataset
from .inference import (
    SampleWriter,
    alpha_rows,
    bayes_factor_json,
    beta_rows,
    bf_gamma_rows,
    bf_z_rows,
    cumhaz_rows,
    per_time_bayes_factors,
    prior_recovery,
    read_samples,
    summarize,
    write_rows,
)
from .mcmc import KernelConfig, run_chain
from .priors import Hyperparameters
from .rng import derive_seeds
from .simgen import PRESETS, generate_scenario, preset

log = logging.getLogger("mvb_detector")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3, 4
OUT_ENV = "MVBD_OUT"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "seed": 0,
    "iterations": 100_000,
    "burnin": 10_000,
    "thin": 1,
    "temperature": 1.0,
    "global_moves": True,
    "rw_sd": 1.0,
    "workers": 1,
    "chains": 1,
    "m": 3,
    "tmax": "auto",
    "mu_alpha": -9.0,
    "sigma2_alpha": 3.0,
    "sigma2_beta": 1.0,
    "pi_k": 0.5,
    "psi": "",
    "censor": 0.0,
    "profile": "",
    "split_log_bias": 0.0,
}


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment line."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_string("[run]\n" + fh.read())
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {v!r}")


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then config file values, then explicit command-line flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    for key, value in vars(args).items():
        if key in ("config", "func", "command") or value is None:
            continue
        settings[key] = value
    if settings.get("no_global_moves"):
        settings["global_moves"] = False
    settings.pop("no_global_moves", None)
    try:
        for key in ("seed", "iterations", "burnin", "thin", "workers", "chains", "m"):
            settings[key] = int(settings[key])
        for key in ("temperature", "rw_sd", "mu_alpha", "sigma2_alpha", "sigma2_beta", "pi_k", "censor",
                    "split_log_bias"):
            settings[key] = float(settings[key])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    settings["global_moves"] = _as_bool(settings["global_moves"])
    if settings["chains"] < 1:
        raise UsageError("--chains must be at least 1")
    return settings


def _out_dir(settings: dict) -> Path:
    out = settings.get("out") or os.environ.get(OUT_ENV) or "."
    path = Path(out)
    if not path.is_dir():
        raise FileNotFoundError(f"output directory {path} does not exist")
    return path


def _hyper(settings: dict) -> Hyperparameters:
    psi = tuple(float(v) for v in str(settings["psi"]).split(",") if v.strip())
    try:
        return Hyperparameters(
            m=settings["m"],
            mu_alpha=settings["mu_alpha"],
            sigma2_alpha=settings["sigma2_alpha"],
            sigma2_beta=settings["sigma2_beta"],
            pi_K=settings["pi_k"],
            psi=psi,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _kernel(settings: dict, seed: int | None = None) -> KernelConfig:
    try:
        return KernelConfig(
            iterations=settings["iterations"],
            burn_in=settings["burnin"],
            thin=settings["thin"],
            seed=settings["seed"] if seed is None else seed,
            global_moves_enabled=settings["global_moves"],
            likelihood_temperature=settings["temperature"],
            rw_sd=settings["rw_sd"],
            workers=settings["workers"],
            split_log_bias=settings["split_log_bias"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_data(settings: dict) -> Dataset:
    if not settings.get("data"):
        raise UsageError("--data is required")
    tmax = settings["tmax"]
    tmax = "auto" if str(tmax) == "auto" else int(tmax)
    return parse_dataset(settings["data"], settings["m"], tmax)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(settings: dict) -> int:
    out = _out_dir(settings)
    name = settings.get("preset")
    if not name:
        raise UsageError("--preset is required")
    try:
        spec = preset(name, seed=settings["seed"], censor=settings["censor"], n=settings.get("n"))
        sim = generate_scenario(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    stem = settings.get("name") or name
    data_path, truth_path = out / f"{stem}.csv", out / f"{stem}.truth.json"
    _atomic_write(data_path, dataset_to_csv(sim.dataset))
    _write_json(truth_path, sim.truth())
    print(f"wrote {data_path} ({sim.dataset.n} rows) and {truth_path}")
    return EXIT_OK


def _manifest(settings: dict, dataset: Dataset, hyper: Hyperparameters, allowed, seeds: list[int]) -> dict:
    return {
        "status": "incomplete",
        "version": __version__,
        "settings": {k: v for k, v in settings.items() if k != "func"},
        "hyperparameters": {**asdict(hyper), "psi": list(hyper.psi)},
        "data": {"path": str(settings.get("data")), "n": dataset.n, "m": dataset.m, "p": dataset.p,
                 "t_max": dataset.t_max},
        "allowed": list(allowed.allowed),
        "seeds": seeds,
        "chains": [],
    }


def _print_rates(label: str, rates: dict) -> None:
    parts = [f"{k}={'n/a' if v is None else f'{v:.3f}'}" for k, v in rates.items()]
    print(f"{label}: " + " ".join(parts))


def cmd_fit(settings: dict) -> int:
    out = _out_dir(settings)
    dataset = _load_data(settings)
    hyper = _hyper(settings).with_shape(dataset.m, dataset.p, dataset.t_max)
    allowed = compute_allowed_set(dataset)
    k = settings["chains"]
    seeds = [settings["seed"]] if k == 1 else derive_seeds(settings["seed"], k)
    kernels = [_kernel(settings, s) for s in seeds]

    manifest = _manifest(settings, dataset, hyper, allowed, seeds)
    manifest_path = out / "manifest.json"
    _write_json(manifest_path, manifest)
    started = time.time()
    for idx, cfg in enumerate(kernels, start=1):
        name = "samples.csv" if k == 1 else f"samples_chain{idx}.csv"
        with open(out / name, "w", newline="", encoding="utf-8") as fh:
            writer = SampleWriter(fh, dataset.m, dataset.t_max, dataset.p)
            result = run_chain(dataset, hyper, cfg, allowed=allowed, on_sample=writer.write)
        rm = result.manifest
        manifest["chains"].append({
            "sample_file": name,
            "n_samples": rm["samples"],
            "seed": rm["seed"],
            "kernel": rm["kernel"],
            "acceptance": rm["acceptance"],
            "wall_clock_seconds": rm["wall_clock_seconds"],
        })
        _write_json(manifest_path, manifest)
        _print_rates(f"chain {idx} acceptance", result.manifest["acceptance"]["rates"])
    manifest["status"] = "complete"
    manifest["wall_clock_seconds"] = time.time() - started
    _write_json(manifest_path, manifest)
    print(f"wrote {manifest_path}")
    return EXIT_OK


def _samples_path(settings: dict) -> Path:
    if settings.get("samples"):
        return Path(settings["samples"])
    return _out_dir(settings) / "samples.csv"


def _context(settings: dict, samples_path: Path):
    """Hyperparameters and allowed set: from --data if given, else the run manifest."""
    if settings.get("data"):
        dataset = _load_data(settings)
        return _hyper(settings).with_shape(dataset.m, dataset.p, dataset.t_max), compute_allowed_set(dataset), dataset
    manifest_path = Path(settings.get("manifest") or samples_path.parent / "manifest.json")
    if not manifest_path.is_file():
        raise UsageError("pass --data or keep manifest.json next to the samples")
    with open(manifest_path, encoding="utf-8") as fh:
        man = json.load(fh)
    hp = man["hyperparameters"]
    hp["psi"] = tuple(hp["psi"])
    # only the event-count length matters here: it fixes the mask size
    allowed = AllowedSet(tuple(man["allowed"]), (0,) * hp["t_max"])
    return Hyperparameters(**hp), allowed, None


def cmd_bf(settings: dict) -> int:
    path = _samples_path(settings)
    samples = read_samples(path)
    hyper, allowed, _ = _context(settings, path)
    report = per_time_bayes_factors(samples, hyper, allowed)
    out = _out_dir(settings)
    write_rows(bf_gamma_rows(report), out / "bf_gamma.csv")
    write_rows(bf_z_rows(report), out / "bf_z.csv")
    _write_json(out / "bayes_factor.json", {"samples": str(path), **bayes_factor_json(report)})
    sd = report.savage_dickey
    print(f"B(K=0) = {sd.B:.4g} (MC se {sd.mc_se:.2g}; posterior P(K=0) = {sd.posterior_freq:.4g}, "
          f"prior {sd.prior_prob:.4g})")
    return EXIT_OK


def cmd_summarize(settings: dict) -> int:
    path = _samples_path(settings)
    samples = read_samples(path)
    profile = [float(v) for v in str(settings["profile"]).split(",") if v.strip()] or None
    try:
        s = summarize(samples, profile=profile)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(settings)
    write_rows(alpha_rows(s), out / "alpha_summary.csv")
    write_rows(beta_rows(s), out / "beta_summary.csv")
    write_rows(cumhaz_rows(s), out / "cumhaz.csv")
    K = samples.K
    _write_json(out / "summary.json", {
        "samples": str(path),
        "n_samples": len(samples),
        "profile": s.profile,
        "K_mean": float(K.mean()),
        "K_distribution": {str(k): float(v) for k, v in enumerate(np.bincount(K) / len(K))},
    })
    print(f"summarized {len(samples)} draws into {out}")
    return EXIT_OK


def _shape_dataset(m: int, t_max: int) -> Dataset:
    """One event at every time 1..t_max, causes cycling, so every interior time is allowed."""
    t = np.arange(1, t_max + 1)
    return Dataset(t, (t - 1) % m + 1, np.zeros((t_max, 0)), m, t_max)


def cmd_prior_check(settings: dict) -> int:
    if settings.get("data"):
        dataset = _load_data(settings)
    else:
        tmax = settings["tmax"]
        t_max = 10 if str(tmax) == "auto" else int(tmax)
        if t_max < 1:
            raise UsageError("--tmax must be positive")
        dataset = _shape_dataset(settings["m"], t_max)
    settings = {**settings, "temperature": 0.0}
    hyper = _hyper(settings).with_shape(dataset.m, dataset.p, dataset.t_max)
    allowed = compute_allowed_set(dataset)
    result = run_chain(dataset, hyper, _kernel(settings), allowed=allowed)
    if len(result.samples) == 0:
        raise UsageError("no post-burn-in draws; raise --iterations")
    rec = prior_recovery(result.samples, hyper, allowed)
    ok = rec.passed()
    report = {
        "passed": ok,
        "tv_K": rec.tv_K,
        "K_empirical": rec.K_empirical,
        "K_prior": rec.K_prior,
        "gamma_ok": rec.gamma_ok(),
        "gamma_freq": dict(zip(map(str, rec.times.tolist()), rec.gamma_freq.tolist())),
        "p_gamma1": rec.p_gamma1,
        "z_given_gamma": rec.z_given_gamma,
        "z_prior": rec.z_prior,
        "allowed": list(allowed.allowed),
        "iterations": settings["iterations"],
        "acceptance": result.manifest["acceptance"],
    }
    if settings.get("out") or os.environ.get(OUT_ENV):
        _write_json(_out_dir(settings) / "prior_check.json", report)
    print(f"prior check {'PASS' if ok else 'FAIL'}: TV(K) = {rec.tv_K:.4f}, |T| = {len(allowed)}, "
          f"max |z - prior| = {np.max(np.abs(rec.z_given_gamma - rec.z_prior), initial=0.0):.4f}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset CSV: time,status,x1..xp")
    p.add_argument("--m", type=int, help="number of competing risks (default 3)")
    p.add_argument("--tmax", help="study horizon, or 'auto' for the largest observed time")
    p.add_argument("--mu-alpha", type=float)
    p.add_argument("--sigma2-alpha", type=float)
    p.add_argument("--sigma2-beta", type=float)
    p.add_argument("--pi-k", type=float)
    p.add_argument("--psi", help="comma-separated configuration probabilities, risk 1 = lowest bit")


def _sampler(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--temperature", type=float, help="likelihood temperature in [0, 1]")
    p.add_argument("--no-global-moves", action="store_true", default=None)
    p.add_argument("--rw-sd", type=float)
    p.add_argument("--workers", type=int, help="threads for the augmentation step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvbd", description="Bayesian change points in discrete competing-risks data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a preset scenario dataset and its truth")
    _common(p)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--censor", type=float, help="censoring fraction in [0, 1]")
    p.add_argument("--n", type=int, help="override the preset sample size")
    p.add_argument("--name", help="file stem (default: preset name)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the sampler and write samples plus a manifest")
    _common(p)
    _model(p)
    _sampler(p)
    p.add_argument("--chains", type=int)
    p.set_defaults(func=cmd_fit)

    for name, func, text in (("summarize", cmd_summarize, "posterior tables"), ("bf", cmd_bf, "Bayes factors")):
        p = sub.add_parser(name, help=f"{text} from a sample file")
        _common(p)
        p.add_argument("--samples", help="sample CSV (default OUT/samples.csv)")
        if name == "bf":
            _model(p)
            p.add_argument("--manifest", help="run manifest (default: next to the samples)")
        else:
            p.add_argument("--profile", help="comma-separated covariate row for cumulative hazards")
        p.set_defaults(func=func)

    p = sub.add_parser("prior-check", help="temperature-0 run compared with the analytic prior")
    _common(p)
    _model(p)
    _sampler(p)
    p.add_argument("--split-log-bias", type=float, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_prior_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    func = args.func
    ns = vars(args)
    ns.pop("verbose", None)
    try:
        settings = resolve(argparse.Namespace(**ns))
        return func(settings)
    except UsageError as exc:
        print(f"mvbd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mvbd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"mvbd: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
