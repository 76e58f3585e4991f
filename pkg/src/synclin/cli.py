"""Command-line front end: a thin HTTP client for the training service.

Every subcommand builds a JSON request and posts it to the service API.
Without ``--server`` the app is mounted in-process over ASGI, so everything
runs offline through the same code path a remote deployment would use; with
``--server http://host:port`` the same requests go to a running instance
(started via ``synclin serve``).

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

A config file (``--config``) holds ``key = value`` lines whose keys are the
long option names without the leading dashes (e.g. ``dataset = bench``,
``latency-ms = 16``); explicit flags override file values.  The default
output directory comes from $SYNCLIN_OUTPUT_DIR.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

OUTPUT_DIR_ENV = "SYNCLIN_OUTPUT_DIR"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


class ServiceClient:
    """HTTP client bound either to a live server or the in-process app."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise CliError(f"cannot reach the service: {exc}", EXIT_RUNTIME)
        return self._handle(response)

    def get(self, path: str) -> dict:
        try:
            response = self._client.get(path)
        except httpx.HTTPError as exc:
            raise CliError(f"cannot reach the service: {exc}", EXIT_RUNTIME)
        return self._handle(response)

    def _handle(self, response: httpx.Response) -> dict:
        if response.status_code == 404:
            raise CliError(_detail(response), EXIT_USAGE)
        if response.status_code in (400, 422):
            raise CliError(_detail(response), EXIT_USAGE)
        if response.status_code >= 500:
            raise CliError(_detail(response), EXIT_RUNTIME)
        return response.json()

    def close(self):
        self._client.close()


def _detail(response: httpx.Response) -> str:
    try:
        body = response.json()
    except ValueError:
        return response.text or f"service error {response.status_code}"
    detail = body.get("detail", body)
    if isinstance(detail, list):  # pydantic validation errors
        parts = []
        for item in detail:
            loc = ".".join(str(x) for x in item.get("loc", []) if x != "body")
            parts.append(f"{loc}: {item.get('msg')}")
        return "; ".join(parts)
    return str(detail)


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliError(f"{path}:{line_no}: expected 'key = value'", EXIT_USAGE)
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


_CONFIG_KEYS = {
    "dataset": str, "algorithm": str, "k": int, "h": str, "h-grid": str,
    "gamma": float, "lambda": float, "target": float, "backend": str,
    "latency-ms": float, "seed": int, "max-rounds": int, "out": str,
    "server": str,
}


def apply_config_defaults(args: argparse.Namespace, config: dict[str, str]) -> None:
    """File values fill in anything the command line left at None."""
    for key, value in config.items():
        if key not in _CONFIG_KEYS:
            raise CliError(f"unknown config key {key!r}", EXIT_USAGE)
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None:
            setattr(args, attr, _CONFIG_KEYS[key](value))


def experiment_payload(args: argparse.Namespace) -> dict:
    payload = {
        "dataset": args.dataset,
        "algorithm": args.algorithm or "cocoa",
        "k": args.k if args.k is not None else 1,
        "gamma": args.gamma if args.gamma is not None else 1.0,
        "lambda": getattr(args, "lambda") if getattr(args, "lambda") is not None else 1.0,
        "target": args.target if args.target is not None else 1e-3,
        "backend": args.backend or "inproc",
        "injected_latency_ms": args.latency_ms if args.latency_ms is not None else 0.0,
        "seed": args.seed if args.seed is not None else 0,
    }
    if args.max_rounds is not None:
        payload["max_rounds"] = args.max_rounds
    if payload["dataset"] is None:
        raise CliError("a dataset is required (flag --dataset or config file)", EXIT_USAGE)
    return payload


def output_dir(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get(OUTPUT_DIR_ENV) or "synclin-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def parse_h_grid(text: str) -> list[str]:
    grid = [tok.strip() for tok in text.split(",") if tok.strip()]
    if not grid:
        raise CliError("empty H grid", EXIT_USAGE)
    return grid


def parse_algo_token(token: str) -> dict:
    """``name[:h=H][:gamma=G]`` -> compare entry."""
    parts = token.split(":")
    entry: dict = {"algorithm": parts[0], "h": None, "gamma": 1.0}
    for part in parts[1:]:
        if "=" not in part:
            raise CliError(f"bad --algo component {part!r} (want h=... or gamma=...)",
                           EXIT_USAGE)
        key, _, value = part.partition("=")
        key = key.strip()
        if key == "h":
            entry["h"] = value.strip()
        elif key == "gamma":
            entry["gamma"] = float(value)
        else:
            raise CliError(f"unknown --algo key {key!r}", EXIT_USAGE)
    if entry["h"] is None:
        raise CliError(f"--algo {token!r} needs an h=... component", EXIT_USAGE)
    return entry


def _write_rounds_csv_from_response(path: Path, rounds: list[dict]) -> None:
    import csv

    from .reports import ROUNDS_COLUMNS

    cum = 0.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_COLUMNS)
        for r in rounds:
            cum += r["t_tot"]
            writer.writerow([
                r["round"], repr(r["t_worker"]), repr(r["t_master"]),
                repr(r["t_overhead"]), repr(cum), repr(r["objective"]),
                repr(r["suboptimality"]),
            ])


def _write_sweep_csv_from_response(path: Path, body: dict) -> None:
    import csv

    from .reports import SWEEP_COLUMNS

    fit = body.get("fit") or {}
    t1 = body.get("t1_seconds")
    t2 = body.get("t2_seconds")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for p in body["points"]:
            writer.writerow([
                p["h"],
                p["rounds_to_target"] if p["reached"] else "",
                repr(p["time_to_target_seconds"]) if p["reached"] else "",
                repr(t1 * 1e3) if t1 is not None else "nan",
                repr(t2 * 1e6) if t2 is not None else "nan",
                repr(fit.get("a", float("nan"))),
                repr(fit.get("b", float("nan"))),
                repr(fit.get("r_squared", float("nan"))),
                body.get("h_opt_predicted") or "",
            ])


def cmd_train(args, client: ServiceClient) -> int:
    payload = experiment_payload(args)
    if args.h is None:
        raise CliError("train needs --h", EXIT_USAGE)
    payload["h"] = args.h
    body = client.post("/train", payload)
    out = output_dir(args)
    _write_rounds_csv_from_response(out / "rounds.csv", body["rounds"])
    summary = dict(body["summary"])
    summary.update({
        "dataset": body["dataset"], "algorithm": body["algorithm"],
        "k": body["k"], "h": body["h"],
    })
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    status = summary["status"]
    print(f"{body['algorithm']} on {body['dataset']}: {status} after "
          f"{summary['rounds']} rounds; final suboptimality "
          f"{summary['final_suboptimality']:.3e}")
    if not summary["reached_target"] and status != "diverged":
        print("target suboptimality unreached within max rounds (flag in summary.json)")
    print(f"artifacts: {out / 'rounds.csv'}, {out / 'summary.json'}")
    return EXIT_OK


def cmd_sweep(args, client: ServiceClient) -> int:
    payload = experiment_payload(args)
    if args.h_grid is None:
        raise CliError("sweep needs --h-grid", EXIT_USAGE)
    payload["h_grid"] = parse_h_grid(args.h_grid)
    body = client.post("/sweep", payload)
    out = output_dir(args)
    _write_sweep_csv_from_response(out / "sweep.csv", body)
    reached = [p for p in body["points"] if p["reached"]]
    print(f"sweep over {len(body['points'])} H values ({len(reached)} reached target)")
    if body.get("warning"):
        print(f"warning: {body['warning']}")
    print(f"artifacts: {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_tune(args, client: ServiceClient) -> int:
    payload = experiment_payload(args)
    if args.h_grid is None:
        raise CliError("tune needs --h-grid with >= 3 points", EXIT_USAGE)
    grid = parse_h_grid(args.h_grid)
    if len(set(grid)) < 3:
        raise CliError("tune needs an H grid with at least 3 distinct points", EXIT_USAGE)
    payload["h_grid"] = grid
    body = client.post("/tune", payload)
    out = output_dir(args)
    _write_sweep_csv_from_response(out / "sweep.csv", body)
    (out / "tune.json").write_text(json.dumps(body, indent=2) + "\n")
    print(f"measured argmin H = {body['h_measured_argmin']}, "
          f"model-predicted H* = {body['h_opt_predicted']}"
          + (f" (ratio {body['prediction_ratio']:.2f})"
             if body.get("prediction_ratio") else ""))
    if body.get("warning"):
        print(f"warning: {body['warning']}")
    print(f"recommended H: {body['recommended_h']}")
    print(f"artifacts: {out / 'sweep.csv'}, {out / 'tune.json'}")
    return EXIT_OK


def cmd_compare(args, client: ServiceClient) -> int:
    payload = experiment_payload(args)
    if not args.algo:
        raise CliError("compare needs at least one --algo entry", EXIT_USAGE)
    payload["algos"] = [parse_algo_token(tok) for tok in args.algo]
    body = client.post("/compare", payload)
    out = output_dir(args)
    import csv

    from .reports import COMPARE_COLUMNS

    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        for r in body["rows"]:
            writer.writerow([
                r["algorithm"], r["h"], repr(r["gamma"]), r["status"],
                r["rounds_to_target"] if r["rounds_to_target"] is not None else "",
                repr(r["time_to_target_seconds"])
                if r["time_to_target_seconds"] is not None else "",
                repr(r["t_worker_total"]), repr(r["t_master_total"]),
                repr(r["t_overhead_total"]),
            ])
    header = f"{'algorithm':<10} {'H':>7} {'gamma':>9} {'status':<10} {'rounds':>7} {'time[s]':>10}"
    print(header)
    print("-" * len(header))
    for r in body["rows"]:
        rounds = str(r["rounds_to_target"]) if r["rounds_to_target"] is not None else "-"
        seconds = (f"{r['time_to_target_seconds']:.3f}"
                   if r["time_to_target_seconds"] is not None else "-")
        print(f"{r['algorithm']:<10} {r['h']:>7} {r['gamma']:>9.4g} {r['status']:<10} "
              f"{rounds:>7} {seconds:>10}")
    print(f"artifacts: {out / 'compare.csv'}")
    return EXIT_OK


def cmd_measure(args, client: ServiceClient) -> int:
    payload = experiment_payload(args)
    body = client.post("/measure", payload)
    print(f"payload dimension: {body['payload_dim']}")
    print(f"t1 (per-round overhead): {body['t1_seconds'] * 1e3:.3f} ms")
    print(f"t2 (per-update compute): {body['t2_seconds'] * 1e6:.3f} us")
    return EXIT_OK


def cmd_report(args, client: ServiceClient) -> int:
    from .reports import render_report

    directory = args.dir or args.out or os.environ.get(OUTPUT_DIR_ENV) or "synclin-out"
    if not Path(directory).is_dir():
        raise CliError(f"no such output directory: {directory}", EXIT_USAGE)
    print(render_report(directory))
    return EXIT_OK


def cmd_serve(args, client=None) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _add_experiment_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--dataset", help="bundled name (tiny/bench/digits/lesmis) or a LIBSVM file path")
    sub.add_argument("--algorithm", choices=["cocoa", "mb-scd", "mb-sgd"], default=None)
    sub.add_argument("--k", type=int, default=None, help="number of workers")
    sub.add_argument("--gamma", type=float, default=None, help="step size (mini-batch methods)")
    sub.add_argument("--lambda", dest="lambda", type=float, default=None,
                     help="ridge regularization strength")
    sub.add_argument("--target", type=float, default=None, help="target suboptimality")
    sub.add_argument("--backend", choices=["inproc", "tcp"], default=None)
    sub.add_argument("--latency-ms", dest="latency_ms", type=float, default=None,
                     help="injected per-round latency in milliseconds")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--max-rounds", dest="max_rounds", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synclin",
        description="Synchronous distributed ridge regression with H autotuning",
    )
    parser.add_argument("--server", default=None,
                        help="service URL; omitted = run the service in-process")
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--out", default=None,
                        help=f"output directory (default ${OUTPUT_DIR_ENV} or ./synclin-out)")
    subs = parser.add_subparsers(dest="command", required=True)

    train = subs.add_parser("train", help="run one training job, write rounds.csv + summary.json")
    _add_experiment_flags(train)
    train.add_argument("--h", help="updates per worker per round; absolute (500) or fraction (0.2x)")
    train.set_defaults(fn=cmd_train)

    sweep = subs.add_parser("sweep", help="run a grid of H values, write sweep.csv")
    _add_experiment_flags(sweep)
    sweep.add_argument("--h-grid", dest="h_grid", help="comma-separated H values (absolute or 0.2x)")
    sweep.set_defaults(fn=cmd_sweep)

    tune = subs.add_parser("tune", help="sweep + model fit + t1/t2 measurement + recommended H")
    _add_experiment_flags(tune)
    tune.add_argument("--h-grid", dest="h_grid", help="comma-separated H values (>= 3 distinct)")
    tune.set_defaults(fn=cmd_tune)

    compare = subs.add_parser("compare", help="run several algorithms at tuned parameters")
    _add_experiment_flags(compare)
    compare.add_argument("--algo", action="append", default=None,
                         metavar="NAME[:h=H][:gamma=G]",
                         help="repeatable; e.g. --algo cocoa:h=1x --algo mb-scd:h=64:gamma=0.05")
    compare.set_defaults(fn=cmd_compare)

    measure = subs.add_parser("measure", help="measure t1 (round trip) and t2 (per update)")
    _add_experiment_flags(measure)
    measure.set_defaults(fn=cmd_measure)

    report = subs.add_parser("report", help="summarize the artifacts in an output directory")
    report.add_argument("--dir", default=None, help="directory to summarize (default: --out)")
    report.set_defaults(fn=cmd_report)

    serve = subs.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8711)
    serve.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            if not Path(args.config).exists():
                raise CliError(f"config file not found: {args.config}", EXIT_USAGE)
            config = read_config_file(args.config)
            apply_config_defaults(args, config)
        if args.command == "serve":
            return cmd_serve(args)
        client = ServiceClient(args.server)
        try:
            return args.fn(args, client)
        finally:
            client.close()
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
