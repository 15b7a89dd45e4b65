"""Command-line entry points.

``simulate`` and ``make-cohort`` run the core package in-process; ``serve``
starts the HTTP service; the ``session`` subcommands are a thin client over
the service API.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import (
    CohortSpec,
    generate_synthetic_cohort,
    parse_case_file,
    serialize_cases,
    validate_case,
)
from .experiment import ExperimentConfig, SplitSpec, export_results, run_comparison
from .network import ModelConfig, gradient_check


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden1", type=int, default=32)
    p.add_argument("--hidden2", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--attention", choices=["full", "diagonal"], default="diagonal")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=60)


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        hidden1=args.hidden1,
        hidden2=args.hidden2,
        dropout_rate=args.dropout,
        attention=args.attention,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        epochs=args.epochs,
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    cases = parse_case_file(Path(args.cases).read_bytes())
    config = ExperimentConfig(
        split=SplitSpec(
            n_test=args.n_test, n_train=args.n_train, n_repeats=args.repeats, seed=args.seed
        ),
        model=_model_config(args),
        strategies=tuple(args.strategies.split(",")),
        iterations=args.iterations,
        projection_seed=args.projection_seed,
        embeddings=args.embeddings,
        smoothing_window=args.smoothing_window,
    )
    result = run_comparison(cases, config)
    csv_path, json_path = export_results(result, args.out)
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return 0


def cmd_make_cohort(args: argparse.Namespace) -> int:
    spec = CohortSpec(size=args.size, balance=args.balance)
    cases = generate_synthetic_cohort(spec, args.seed)
    out = Path(args.out)
    out.write_bytes(serialize_cases(cases))
    print(f"wrote {len(cases)} cases to {out}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    cases = parse_case_file(Path(args.cases).read_bytes())
    bad = 0
    for case in cases:
        report = validate_case(case, pair_cap=args.pair_cap)
        for err in report.errors:
            print(f"{case.id}: ERROR {err}")
            bad += 1
        for warning in report.warnings:
            print(f"{case.id}: WARNING {warning}")
    print(f"{len(cases)} cases, {bad} errors")
    return 1 if bad else 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = ModelConfig(
        input_dim=args.input_dim, hidden1=args.hidden1, hidden2=args.hidden2, attention=args.attention
    )
    worst = 0.0
    for seed in range(1, args.seeds + 1):
        err = gradient_check(cfg, seed, batch=args.batch)
        worst = max(worst, err)
        print(f"seed {seed}: max relative error {err:.3e}")
    print(f"worst: {worst:.3e} ({'OK' if worst < 1e-4 else 'FAIL'} at 1e-4)")
    return 0 if worst < 1e-4 else 1


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    uvicorn.run(create_app(args.sessions_dir), host=args.host, port=args.port)
    return 0


def _client(args: argparse.Namespace):
    import httpx

    return httpx.Client(base_url=args.url, timeout=120.0)


def cmd_session_create(args: argparse.Namespace) -> int:
    body = {
        "cases_file_ref": args.cases if not args.upload else None,
        "cases_jsonl": Path(args.cases).read_text(encoding="utf-8") if args.upload else None,
        "config": json.loads(args.config) if args.config else {},
    }
    if args.mode:
        body["config"]["mode"] = args.mode
    with _client(args) as client:
        r = client.post("/api/sessions", json=body)
        print(json.dumps(r.json(), indent=2))
        return 0 if r.status_code == 200 else 1


def cmd_session_get(args: argparse.Namespace) -> int:
    path = {
        "status": f"/api/sessions/{args.session_id}/status",
        "query": f"/api/sessions/{args.session_id}/query",
        "importance": f"/api/sessions/{args.session_id}/importance?k={args.k}",
    }[args.what]
    with _client(args) as client:
        r = client.get(path)
        print(json.dumps(r.json(), indent=2))
        return 0 if r.status_code == 200 else 1


def cmd_session_label(args: argparse.Namespace) -> int:
    with _client(args) as client:
        r = client.post(
            f"/api/sessions/{args.session_id}/labels",
            json={"case_id": args.case_id, "risk": args.risk},
        )
        print(json.dumps(r.json(), indent=2))
        return 0 if r.status_code == 200 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskloop")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="margin-vs-random comparison over repeated splits")
    p.add_argument("--cases", required=True)
    p.add_argument("--embeddings", default="hash", help="'hash' or an embedding store file")
    p.add_argument("--n-test", type=int, default=5)
    p.add_argument("--n-train", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--strategies", default="margin,random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--projection-seed", type=int, default=0)
    p.add_argument("--smoothing-window", type=int, default=3)
    p.add_argument("--out", required=True)
    _add_model_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-cohort", help="generate a labeled synthetic cohort")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_cohort)

    p = sub.add_parser("validate", help="validate a case file")
    p.add_argument("--cases", required=True)
    p.add_argument("--pair-cap", type=int, default=150)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--input-dim", type=int, default=12)
    p.add_argument("--hidden1", type=int, default=5)
    p.add_argument("--hidden2", type=int, default=4)
    p.add_argument("--batch", type=int, default=3)
    p.add_argument("--attention", choices=["full", "diagonal"], default="full")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--sessions-dir", default="./sessions")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("session", help="thin client for a running service")
    p.add_argument("--url", default="http://127.0.0.1:8000")
    ssub = p.add_subparsers(dest="session_command", required=True)

    c = ssub.add_parser("create")
    c.add_argument("--cases", required=True)
    c.add_argument("--upload", action="store_true", help="send file contents instead of a path")
    c.add_argument("--mode", choices=["interactive", "simulated"], default=None)
    c.add_argument("--config", default=None, help="session config as JSON")
    c.set_defaults(func=cmd_session_create)

    for what in ("status", "query", "importance"):
        c = ssub.add_parser(what)
        c.add_argument("session_id")
        if what == "importance":
            c.add_argument("--k", type=int, default=5)
        c.set_defaults(func=cmd_session_get, what=what)

    c = ssub.add_parser("label")
    c.add_argument("session_id")
    c.add_argument("case_id")
    c.add_argument("risk", type=int, choices=[0, 1])
    c.set_defaults(func=cmd_session_label)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
