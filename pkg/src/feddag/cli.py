"""Command-line entry point: ``feddag {gen,fit,sweep,analyze,serve-site,serve-center}``.

Settings come from, in increasing priority: built-in defaults, an INI
config file (``--config``) and command-line flags. In the config file the
``[estimator]`` section applies to every estimator and a section named after
an estimator (``[pfl]``, ``[sig]``, ...) refines it; ``[sweep]`` holds the
experiment grid and ``[synth]`` the generator settings.

Exit codes: 0 success, 2 configuration error, 3 solver did not converge,
4 transport failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys

from . import __version__
from .admm import Mode, fit
from .errors import FedDagError, ParseError, ProtocolViolation, TransportFailure
from .experiments import ExperimentSpec, analyze, build_config, ingest_csv_sites, read_site_csv, run_sweep
from .federation.transport import FileTransport, TcpTransport, file_site_loop, make_transport, tcp_site_loop
from .synth import SynthConfig, gen_problem

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_TRANSPORT = 0, 2, 3, 4

log = logging.getLogger("feddag")


class ConfigError(Exception):
    pass


def _number(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    low = text.strip().lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return text.strip()


def _list(text, cast=_number):
    return [cast(t) for t in str(text).replace(",", " ").split()]


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return cp


def estimator_settings(cp, estimator: str, args) -> dict:
    """Flat estimator settings: file [estimator], then file [<name>], then flags."""
    out = {}
    for section in ("estimator", Mode.parse(estimator).name.lower(), estimator.lower()):
        if cp.has_section(section):
            out.update({k: _number(v) for k, v in cp.items(section)})
    for key in ("lambda1", "lambda2", "admm_max_iter", "admm_tol", "edge_threshold", "inner_steps"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _section(cp, name) -> dict:
    return {k: _number(v) for k, v in cp.items(name)} if cp.has_section(name) else {}


# ---------------------------------------------------------------- commands

def cmd_gen(args, cp):
    params = _section(cp, "synth")
    for key in ("d", "K", "p_l", "n_total", "n_per_site", "noise_std"):
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    if args.seed is not None:
        params["seed"] = args.seed
    if "n_per_site" in params:
        params.pop("n_total", None)
    try:
        cfg = SynthConfig(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    problem = gen_problem(cfg)
    problem.export(args.out)
    print(f"wrote {cfg.K} sites (d={cfg.d}) to {args.out}")
    return EXIT_OK


def cmd_fit(args, cp):
    settings = estimator_settings(cp, args.estimator, args)
    config = build_config(args.estimator, settings, seed=args.seed or 0)
    datasets = ingest_csv_sites(args.data, standardize=not args.raw)
    kind = args.transport or "inproc"
    transport = make_transport(kind, directory=args.exchange_dir) if kind == "file" else make_transport(kind)
    if args.verbose:
        cb = lambda s: log.info("iter %(iteration)d primal %(primal_residual).3g dual %(dual_residual).3g", s)  # noqa: E731
    else:
        cb = None
    result = fit(datasets, config, transport=transport, callback=cb)
    _save_result(result, args.out)
    return _report(result)


def _save_result(result, out):
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    result.save(out)
    print(f"saved fit to {out}")


def _report(result):
    edges = ", ".join(str(g.n_edges) for g in result.graphs)
    print(f"{result.mode}: {result.iterations_used} iterations, edges per site [{edges}], "
          f"max h {max(result.h_values):.3g}, converged={result.converged}")
    if not result.converged:
        print("warning: solver did not reach the stopping tolerance", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sweep(args, cp):
    sw = _section(cp, "sweep")
    kind = args.kind or sw.get("kind", "sweep_d")
    grid = _list(args.grid) if args.grid else _list(sw.get("grid", "10 20 30"))
    reps = args.replicates if args.replicates is not None else int(sw.get("replicates", 10))
    ests = _list(args.estimators, str) if args.estimators else _list(sw.get("estimators", "pfl sig"), str)
    seed = args.seed if args.seed is not None else int(sw.get("seed", 0))
    shared = _section(cp, "estimator")
    per_est = {e: estimator_settings(cp, e, args) for e in ests}
    spec = ExperimentSpec(kind=kind, grid=grid, replicates=reps, estimators=ests, overrides=shared,
                          estimator_overrides=per_est, synth=_section(cp, "synth"), transport=args.transport or sw.get("transport", "inproc"),
                          out=args.out, seed=seed)

    def progress(rec):
        status = rec["status"] if rec["status"] != "ok" else f"error {rec['error']:.3f}"
        print(f"{rec['grid_var']}={rec['value']} rep {rec['replicate']} {rec['estimator']}: {status}", flush=True)

    out = run_sweep(spec, progress=None if args.quiet else progress)
    print(f"wrote {os.path.join(args.out, 'results.csv')} ({len(out['rows'])} rows)")
    failed = sum(1 for r in out["records"] if r["status"] != "ok")
    return EXIT_NONCONVERGED if failed else EXIT_OK


def cmd_analyze(args, cp):
    written = analyze(args.fit, args.labels, out=args.out, group_b=args.group_b, top=args.top,
                      pooled=not args.unpooled)
    for name, path in written.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_serve_center(args, cp):
    settings = estimator_settings(cp, args.estimator, args)
    config = build_config(args.estimator, settings, seed=args.seed or 0)
    if config.mode is Mode.AVG:
        raise ConfigError("the pooled baseline needs raw data and cannot run federated")
    kind = args.transport or "tcp"
    site_ids = _list(args.site_ids, str) if args.site_ids else None
    if kind == "tcp":
        transport = TcpTransport(args.bind, timeout=args.timeout, site_ids=site_ids)
        host, port = transport.listen()
        print(f"listening on {host}:{port}", flush=True)
        transport.open(n_sites=args.sites)
    elif kind == "file":
        if not (args.exchange_dir and site_ids and args.dim):
            raise ConfigError("file transport needs --exchange-dir, --site-ids and --dim")
        transport = FileTransport(args.exchange_dir, timeout=args.timeout)
        transport.open(site_ids=site_ids, dim=args.dim)
    else:
        raise ConfigError("serve-center supports the tcp and file transports")
    result = fit(None, config, transport=transport)
    _save_result(result, args.out)
    return _report(result)


def cmd_serve_site(args, cp):
    ds = read_site_csv(args.data, args.site_id, standardize=not args.raw)
    kind = args.transport or "tcp"
    if kind == "tcp":
        tcp_site_loop(ds, args.connect, timeout=args.timeout)
    elif kind == "file":
        if not args.exchange_dir:
            raise ConfigError("file transport needs --exchange-dir")
        file_site_loop(ds, args.exchange_dir, timeout=args.timeout)
    else:
        raise ConfigError("serve-site supports the tcp and file transports")
    print(f"site {ds.site_id} finished")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_estimator_flags(p):
    p.add_argument("--estimator", choices=["pfl", "sig", "avg", "admm"], default="pfl")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--admm-max-iter", dest="admm_max_iter", type=int)
    p.add_argument("--admm-tol", dest="admm_tol", type=float)
    p.add_argument("--edge-threshold", dest="edge_threshold", type=float)
    p.add_argument("--inner-steps", dest="inner_steps", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [estimator], [<estimator>], [sweep], [synth] sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--transport", choices=["inproc", "file", "tcp"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="feddag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"feddag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic multi-site problem")
    p.add_argument("--d", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--p-l", dest="p_l", type=float)
    p.add_argument("--n-total", dest="n_total", type=int)
    p.add_argument("--n-per-site", dest="n_per_site", type=int)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", parents=[common], help="fit site CSVs in a directory")
    p.add_argument("--data", required=True, help="directory holding site_*.csv")
    p.add_argument("--raw", action="store_true", help="skip per-site standardization")
    p.add_argument("--exchange-dir", help="frame directory for the file transport")
    p.add_argument("--out", default="fit.json")
    _add_estimator_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", parents=[common], help="run a synthetic benchmark sweep")
    p.add_argument("--kind", choices=["sweep_d", "sweep_K", "sweep_pl", "single_fit"])
    p.add_argument("--grid", help="grid values, comma separated")
    p.add_argument("--replicates", type=int)
    p.add_argument("--estimators", help="comma separated, e.g. pfl,sig,avg")
    p.add_argument("--out", default="results")
    p.add_argument("-q", "--quiet", action="store_true")
    _add_estimator_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", parents=[common], help="degree, overlap and site-specific tables")
    p.add_argument("--fit", nargs="+", required=True, help="saved fit result(s)")
    p.add_argument("--labels", help="text file with one node label per line")
    p.add_argument("--group-b", nargs="+", help="second group's fit result(s) for proportion tests")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--unpooled", action="store_true", help="unpooled variance in the proportion test")
    p.add_argument("--out", default="analysis")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve-center", parents=[common], help="run the center and wait for remote sites")
    p.add_argument("--bind", help="host:port (default FEDDAG_BIND_ADDR or 127.0.0.1:0)")
    p.add_argument("--sites", type=int, help="number of sites to wait for")
    p.add_argument("--site-ids", help="comma separated site ids, fixes their order")
    p.add_argument("--exchange-dir")
    p.add_argument("--dim", type=int, help="number of variables (file transport)")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--out", default="fit.json")
    _add_estimator_flags(p)
    p.set_defaults(func=cmd_serve_center)

    p = sub.add_parser("serve-site", parents=[common], help="serve one site's data to a center")
    p.add_argument("--data", required=True, help="CSV file with this site's samples")
    p.add_argument("--site-id")
    p.add_argument("--connect", help="center host:port")
    p.add_argument("--exchange-dir")
    p.add_argument("--raw", action="store_true")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_serve_site)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cp = read_config(args.config)
        return args.func(args, cp)
    except (ConfigError, ParseError, ValueError, TypeError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportFailure, ProtocolViolation, ConnectionError, TimeoutError) as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (FedDagError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
