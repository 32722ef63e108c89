"""Command-line entry point. With ``--server URL`` the pricing commands become thin HTTP clients."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import ops
from .config import ExperimentConfig, load_config

log = logging.getLogger("pemc")


def _kv(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SystemExit(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.threads is not None:
        updates["threads"] = args.threads
    if args.out is not None:
        updates["out"] = args.out
    if getattr(args, "task", None):
        updates["task"] = args.task
    return cfg.model_copy(update=updates) if updates else cfg


def _out_dir(args, cfg=None) -> Path:
    out = Path(args.out or (cfg.out if cfg is not None and cfg.out else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _remote(args, path: str, payload: dict) -> dict:
    import httpx

    r = httpx.post(args.server.rstrip("/") + path, json=payload, timeout=None)
    if r.status_code >= 400:
        raise SystemExit(f"server error {r.status_code}: {r.text}")
    return r.json()


def cmd_gen_data(args) -> int:
    from .harness import build_task
    from .predictor import generate_training_batch
    from .rng import RngStream

    cfg = _config(args)
    task = build_task(cfg, args.label_mode)
    batch = generate_training_batch(task, args.count, RngStream(cfg.seed, 4), args.pairs)
    path = _out_dir(args, cfg) / args.file
    np.savez(path, theta=batch.theta, x=batch.x, label=batch.label, offset=batch.offset)
    _emit({"path": str(path), "records": len(batch), "theta_dim": batch.theta.shape[1], "x_dim": batch.x.shape[1]})
    return 0


def cmd_train(args) -> int:
    from .harness import train_for_config

    cfg = _config(args)
    t = {}
    for k in ("n_train", "epochs", "batch_size", "pairs", "dropout", "lr"):
        v = getattr(args, k)
        if v is not None:
            t[k] = v
    if t:
        cfg = cfg.model_copy(update={"training": cfg.training.model_copy(update=t)})
    model = train_for_config(cfg, args.label_mode)
    path = Path(args.model) if args.model else _out_dir(args, cfg) / f"{cfg.task}.pemc"
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    md = {k: v for k, v in model.metadata.items() if k != "loss_curve"}
    _emit({"model": str(path), **md})
    return 0


def cmd_price(args) -> int:
    req = ops.PriceRequest(task=args.task or "gbm_asian", task_options=_kv(args.option), method=args.method,
                           model=args.model, theta=_kv(args.theta), n=args.n, N=args.N, a=args.a,
                           alpha=args.alpha, seed=args.seed or 0)
    _emit(_remote(args, "/price", req.model_dump()) if args.server else ops.price(req))
    return 0


def cmd_allocate(args) -> int:
    req = ops.AllocateRequest(budget=args.budget, sigma_fg=args.sigma_fg, sigma_g=args.sigma_g, c_fg=args.c_fg,
                              c_g=args.c_g, model=args.model, theta=_kv(args.theta), probe_n=args.probe_n,
                              seed=args.seed or 0)
    _emit(_remote(args, "/allocate", req.model_dump()) if args.server else ops.allocate(req))
    return 0


def cmd_experiment(args) -> int:
    from .harness import emit_report, run_experiment

    cfg = _config(args)
    report = run_experiment(cfg)
    out = _out_dir(args, cfg)
    formats = ["csv", "json"] + (["raw"] if args.raw else [])
    paths = emit_report(report, out, formats)
    sys.stdout.write(report.csv_text())
    _emit({"written": [str(p) for p in paths], "determinism_hash": report.determinism_hash(),
           "ground_truth": report.ground_truth})
    return 0


def cmd_ed_sim(args) -> int:
    req = ops.EdSimRequest(weeks=args.weeks, tau="inf" if args.tau == "inf" else float(args.tau),
                           hosp2_shifts=args.shifts, crisis=args.crisis, seed=args.seed or 0,
                           include_traces=bool(args.traces))
    res = _remote(args, "/ed-sim", req.model_dump()) if args.server else ops.ed_sim(req)
    if args.traces:
        from .ed import write_traces

        write_traces(args.traces, res.pop("traces"))
        res["traces_file"] = args.traces
    _emit(res)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.model_dir), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pemc", description="Prediction-enhanced Monte Carlo toolkit")
    p.add_argument("--config", help="experiment config (versioned JSON)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads for repeats")
    p.add_argument("--out", help="output directory")
    p.add_argument("--server", help="send price/allocate/ed-sim requests to this service URL")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate training records to an .npz file")
    g.add_argument("--task")
    g.add_argument("--count", type=int, default=10000)
    g.add_argument("--pairs", type=int, default=1)
    g.add_argument("--label-mode", choices=("raw", "cv_residual"), default="raw")
    g.add_argument("--file", default="training_data.npz")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and save a predictor")
    t.add_argument("--task")
    t.add_argument("--model", help="output model path")
    t.add_argument("--label-mode", choices=("raw", "cv_residual"), default="raw")
    t.add_argument("--n-train", dest="n_train", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--pairs", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("price", help="one estimate at a parameter point")
    pr.add_argument("--task")
    pr.add_argument("--method", choices=("MC", "PEMC", "CV", "BoostPEMC"), default="PEMC")
    pr.add_argument("--model")
    pr.add_argument("--theta", action="append", metavar="KEY=VALUE", help="override an evaluation parameter")
    pr.add_argument("--option", action="append", metavar="KEY=VALUE", help="task option")
    pr.add_argument("--n", type=int, default=1000)
    pr.add_argument("--N", type=int)
    pr.add_argument("--a", type=float, default=1.0)
    pr.add_argument("--alpha", type=float, default=0.05)
    pr.set_defaults(func=cmd_price)

    al = sub.add_parser("allocate", help="optimal (n, N) under a budget")
    al.add_argument("--budget", type=float, required=True)
    al.add_argument("--sigma-fg", dest="sigma_fg", type=float)
    al.add_argument("--sigma-g", dest="sigma_g", type=float)
    al.add_argument("--c-fg", dest="c_fg", type=float)
    al.add_argument("--c-g", dest="c_g", type=float)
    al.add_argument("--model", help="probe this model instead of giving the four inputs")
    al.add_argument("--theta", action="append", metavar="KEY=VALUE")
    al.add_argument("--probe-n", dest="probe_n", type=int, default=2000)
    al.set_defaults(func=cmd_allocate)

    ex = sub.add_parser("experiment", help="repeated-estimate RMSE study")
    ex.add_argument("--task")
    ex.add_argument("--raw", action="store_true", help="also write per-repeat estimates")
    ex.set_defaults(func=cmd_experiment)

    ed = sub.add_parser("ed-sim", help="simulate ED weeks")
    ed.add_argument("--weeks", type=int, default=1)
    ed.add_argument("--tau", default="20")
    ed.add_argument("--shifts", type=int, nargs=6, metavar="D", help="hospital-2 doctors per shift")
    ed.add_argument("--crisis", type=float)
    ed.add_argument("--traces", help="write per-week trace summaries (JSON lines)")
    ed.set_defaults(func=cmd_ed_sim)

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--model-dir", dest="model_dir", default="models")
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
