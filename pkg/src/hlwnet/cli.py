"""hlwnet command-line entry point.

Exit codes: 0 success, 2 bad configuration or arguments, 3 missing or
mismatched prerequisite artifact, 4 solver abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from hlwnet import __version__
from hlwnet._accel import backend_name
from hlwnet.assoc import Association, mptcp_association
from hlwnet.channel import ChannelState, channel_state, link_capacity
from hlwnet.config import RunConfig, load_config
from hlwnet.data import (CollectionAborted, DatasetError, TrainingError, collect_dataset,
                         load_dataset, save_dataset, split_dataset, train, write_curves)
from hlwnet.env import ConfigError, build_topology
from hlwnet.evalx import (LEARNED, evaluate_methods, inference_callable, random_drop,
                          time_inference, write_metrics_csv)
from hlwnet.models import (CheckpointMismatch, build_model, encode_features, load_model,
                           predict_rows, project_feasible, save_model)
from hlwnet.pf_solver import solve_pf

log = logging.getLogger("hlwnet")

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_SOLVER = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# artifact names and CSV helpers
# ---------------------------------------------------------------------------

def dataset_path(out: Path, n_ue: int, n_f: int) -> Path:
    return out / f"dataset_nu{n_ue}_nf{n_f}.bin"


def checkpoint_path(out: Path, kind: str, n_ue: int, n_f: int) -> Path:
    return out / f"{kind}_nu{n_ue}_nf{n_f}.json"


def write_matrix_csv(path, mat, config_digest: str = "") -> None:
    """Row = AP, column = UE, 9 significant digits."""
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_digest:
            fh.write(f"# config_digest={config_digest}\n")
        for row in mat:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")


def read_matrix_csv(path) -> tuple[np.ndarray, str | None]:
    digest = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# config_digest="):
                    digest = line.split("=", 1)[1].strip()
                continue
            rows.append([float(v) for v in line.split(",")])
    if not rows or len({len(r) for r in rows}) != 1:
        raise CliError(EXIT_CONFIG, f"{path}: expected a non-empty rectangular CSV matrix")
    return np.array(rows), digest


def _check_digest(found, expected, what):
    if found is not None and found != expected:
        raise CliError(EXIT_PREREQ, f"{what} was produced under config digest {found}, "
                                    f"current config is {expected}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_topo(cfg: RunConfig, args) -> int:
    topo = build_topology(cfg.topology)
    print(f"# config_digest={cfg.digest}")
    print(f"room {topo.room_length} x {topo.room_width} x {topo.room_height} m, "
          f"{topo.n_aps} APs")
    print("index,kind,x,y,z,bandwidth_hz")
    for i, ap in enumerate(topo.aps):
        x, y, z = ap.position
        print(f"{i},{ap.kind.value},{x:.9g},{y:.9g},{z:.9g},{ap.bandwidth:.9g}")
    out = Path(args.out)
    if args.positions:
        pos, _ = read_matrix_csv(args.positions)
        if pos.shape[1] == 2:
            pos = np.column_stack([pos, np.full(len(pos), cfg.mobility.ue_height)])
        if pos.shape[1] != 3:
            raise CliError(EXIT_CONFIG, "positions CSV needs x,y or x,y,z columns")
        ch = channel_state(topo, pos)
        out.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(out / "sinr.csv", ch.sinr, cfg.digest)
        write_matrix_csv(out / "capacity.csv", ch.capacity, cfg.digest)
    if args.sweep:
        step = float(args.sweep)
        if not step > 0:
            raise CliError(EXIT_CONFIG, "--sweep must be positive")
        xs = np.arange(step / 2, topo.room_length, step)
        ys = np.arange(step / 2, topo.room_width, step)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel(),
                               np.full(gx.size, cfg.mobility.ue_height)])
        ch = channel_state(topo, pts)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "heatmap.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# config_digest={cfg.digest}\n")
            head = ["x", "y"] + [f"sinr_db_ap{i}" for i in range(topo.n_aps)] + \
                [f"capacity_ap{i}" for i in range(topo.n_aps)]
            fh.write(",".join(head) + "\n")
            sdb = ch.sinr_db
            for u in range(pts.shape[0]):
                vals = [pts[u, 0], pts[u, 1], *sdb[:, u], *ch.capacity[:, u]]
                fh.write(",".join(f"{v:.9g}" for v in vals) + "\n")
    return EXIT_OK


def cmd_collect(cfg: RunConfig, args) -> int:
    topo = build_topology(cfg.topology)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        ds = collect_dataset(topo, cfg.mobility, cfg.n_ue, cfg.n_f, seed=cfg.seed,
                             config_digest=cfg.digest, norm_max_db=cfg.norm_max_db)
    except CollectionAborted as exc:
        raise CliError(EXIT_SOLVER, f"collection aborted: {exc}") from None
    path = dataset_path(out, cfg.n_ue, cfg.n_f)
    save_dataset(ds, path)
    flagged = int((~ds.usable).sum())
    print(f"wrote {path} ({len(ds)} samples, {flagged} flagged, digest {cfg.digest})")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    src = Path(args.dataset) if args.dataset else dataset_path(out, cfg.n_ue, cfg.n_f)
    if not src.exists():
        raise CliError(EXIT_PREREQ, f"dataset {src} not found; run 'hlwnet collect' first")
    n_a = cfg.topology.grid_n ** 2 + 1
    try:
        ds = load_dataset(src, expect_digest=cfg.digest, expect_dims=(n_a, cfg.n_ue, cfg.n_f))
    except DatasetError as exc:
        raise CliError(EXIT_PREREQ, str(exc)) from None
    tr, va = split_dataset(ds, cfg.split_ratio, seed=cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    kinds = LEARNED if args.model == "both" else (args.model,)
    for kind in kinds:
        try:
            res = train(kind, tr, va, cfg.train)
        except TrainingError as exc:
            raise CliError(EXIT_SOLVER, f"training aborted: {exc}") from None
        ck = checkpoint_path(out, kind, cfg.n_ue, cfg.n_f)
        save_model(ck, res.model, res.params, norm_max_db=cfg.norm_max_db,
                   train_config=dataclasses.asdict(cfg.train), config_digest=cfg.digest,
                   extra={"best_epoch": res.best_epoch, "dataset": src.name,
                          "dataset_seed": ds.header.seed})
        curves = out / f"curves_{kind}_nu{cfg.n_ue}_nf{cfg.n_f}.csv"
        write_curves(curves, res.curves, cfg.digest)
        e, tr_mse, va_mse = res.curves[-1]
        print(f"{kind}: {len(res.curves)} epochs, best epoch {res.best_epoch} "
              f"(val {res.best_val:.6g}), final train {tr_mse:.6g} val {va_mse:.6g}; wrote {ck}")
    return EXIT_OK


def _loader(models_dir: Path, digest: str, fresh_n_a: int | None = None):
    """Checkpoint loader; with ``fresh_n_a`` a missing checkpoint yields fresh weights."""
    def load(kind, n_ue, n_f):
        path = checkpoint_path(models_dir, kind, n_ue, n_f)
        if path.exists():
            model, params, _ = load_model(path, expect_digest=digest)
            return model, params
        if fresh_n_a is not None:
            model = build_model(kind, fresh_n_a, n_ue, n_f)
            return model, model.init_params(np.random.default_rng(0))
        return None
    return load


def _eval_task(task):
    cfg, methods, n_ue, n_f, seed, models_dir, latency = task
    topo = build_topology(cfg.topology)
    return evaluate_methods(topo, methods, [n_ue], [n_f], cfg.eval.episodes, [seed],
                            model_loader=_loader(Path(models_dir), cfg.digest),
                            ue_height=cfg.mobility.ue_height, norm_max_db=cfg.norm_max_db,
                            latency=latency, warmup=cfg.eval.latency_warmup,
                            repetitions=cfg.eval.latency_repetitions)


def cmd_eval(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    models_dir = Path(args.models or args.out)
    n_ue_list = [args.n_ue] if args.n_ue else list(cfg.eval.n_ue)
    n_f_list = [args.n_f] if args.n_f else list(cfg.eval.n_f)
    methods = list(cfg.eval.methods)
    missing = [str(checkpoint_path(models_dir, m, u, f)) for m in methods if m in LEARNED
               for u in n_ue_list for f in n_f_list
               if not checkpoint_path(models_dir, m, u, f).exists()]
    if missing and not args.skip_missing:
        raise CliError(EXIT_PREREQ, "missing checkpoint(s): " + ", ".join(missing) +
                       "; run 'hlwnet train' for those settings or pass --skip-missing")
    tasks = [(cfg, methods, u, f, s, str(models_dir), args.latency)
             for u in n_ue_list for f in n_f_list for s in cfg.eval.seeds]
    try:
        if args.parallel > 1 and not args.latency:
            with ProcessPoolExecutor(max_workers=args.parallel) as pool:
                parts = list(pool.map(_eval_task, tasks))
        else:
            parts = [_eval_task(t) for t in tasks]
    except CheckpointMismatch as exc:
        raise CliError(EXIT_PREREQ, str(exc)) from None
    rows = [r for p in parts for r in p]
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.csv"
    write_metrics_csv(path, rows, cfg.digest, include_latency=args.latency)
    print(f"wrote {path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    """Inference latency per method; learned nets use trained weights when
    present and fresh weights otherwise (cost does not depend on values)."""
    topo = build_topology(cfg.topology)
    out = Path(args.out)
    models_dir = Path(args.models or args.out)
    n_ue_list = [args.n_ue] if args.n_ue else list(cfg.eval.n_ue)
    n_f_list = [args.n_f] if args.n_f else list(cfg.eval.n_f)
    load = _loader(models_dir, cfg.digest, fresh_n_a=topo.n_aps)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    rng = np.random.default_rng(cfg.seed)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_digest={cfg.digest}\n# backend={backend_name()}\n")
        fh.write("method,n_ue,n_f,unit,latency_us_median,latency_us_p95,repetitions\n")
        for n_ue in n_ue_list:
            pos = random_drop(topo, n_ue, rng, cfg.mobility.ue_height)
            for n_f in n_f_list:
                models = {m: load(m, n_ue, n_f) for m in cfg.eval.methods if m in LEARNED}
                for m in cfg.eval.methods:
                    fn, unit = inference_callable(m, topo, pos, n_f, models, cfg.norm_max_db)
                    reps = cfg.eval.latency_repetitions
                    if m == "optimizer":
                        reps = max(1, reps // 20)
                    lat = time_inference(fn, warmup=min(cfg.eval.latency_warmup, reps),
                                         repetitions=reps)
                    fh.write(f"{m},{n_ue},{n_f},{unit},{lat.median_us:.6g},{lat.p95_us:.6g},"
                             f"{reps}\n")
                    print(f"{m:9s} n_ue={n_ue:3d} n_f={n_f} per-{unit:7s} "
                          f"median {lat.median_us:10.2f} us  p95 {lat.p95_us:10.2f} us")
    print(f"wrote {path}")
    return EXIT_OK


def _association_from(mask: np.ndarray, n_f: int | None = None) -> Association:
    chi = mask > 0.5
    counts = chi.sum(axis=0)
    return Association(chi, int(counts.max()) if n_f is None else n_f)


def cmd_solve(cfg: RunConfig, args) -> int:
    for p in (args.capacity, args.assoc):
        if not Path(p).exists():
            raise CliError(EXIT_PREREQ, f"{p} not found")
    cap, dcap = read_matrix_csv(args.capacity)
    mask, dmask = read_matrix_csv(args.assoc)
    if cap.shape != mask.shape:
        raise CliError(EXIT_CONFIG, f"capacity {cap.shape} and association {mask.shape} differ")
    if dcap is not None and dmask is not None and dcap != dmask:
        raise CliError(EXIT_PREREQ, "capacity and association CSVs carry different digests")
    try:
        rep = solve_pf(cap, _association_from(mask), tol=args.tol, max_iters=args.max_iters)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "allocation.csv", rep.allocation, dcap or "")
    report = {"utility_nats": f"{rep.utility:.12g}", "kkt_residual": f"{rep.kkt_residual:.3e}",
              "iterations": rep.iterations, "converged": str(rep.converged).lower(),
              "excluded_ues": " ".join(str(j) for j in rep.excluded_ues)}
    text = "".join(f"{k} = {v}\n" for k, v in report.items())
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if rep.converged else EXIT_SOLVER


def cmd_predict(cfg: RunConfig, args) -> int:
    if not Path(args.checkpoint).exists():
        raise CliError(EXIT_PREREQ, f"checkpoint {args.checkpoint} not found")
    if not Path(args.sinr).exists():
        raise CliError(EXIT_PREREQ, f"{args.sinr} not found")
    try:
        model, params, doc = load_model(args.checkpoint, expect_digest=cfg.digest)
    except CheckpointMismatch as exc:
        raise CliError(EXIT_PREREQ, str(exc)) from None
    sinr, digest = read_matrix_csv(args.sinr)
    _check_digest(digest, cfg.digest, args.sinr)
    topo = build_topology(cfg.topology)
    if sinr.shape != (model.n_a, model.n_u) or sinr.shape[0] != topo.n_aps:
        raise CliError(EXIT_CONFIG, f"SINR matrix {sinr.shape} does not match the model "
                                    f"({model.n_a} APs x {model.n_u} UEs)")
    cap = link_capacity(sinr, topo.bandwidths[:, None], topo.is_lifi[:, None])
    ch = ChannelState(sinr, cap)
    assoc = mptcp_association(ch, topo, model.n_f)
    norm = doc["normalizer"]["clip_max_db"]
    rho = project_feasible(predict_rows(model, params, encode_features(sinr, assoc.chi, norm)),
                           assoc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "allocation.csv", rho, cfg.digest)
    print(f"wrote {out / 'allocation.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration (defaults if omitted)")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--out", default="runs", help="output directory (default: runs)")
    common.add_argument("--parallel", type=int, default=os.cpu_count() or 1,
                        help="worker processes for evaluation (default: CPU count)")
    common.add_argument("--n-ue", type=int, help="number of UEs (overrides config)")
    common.add_argument("--n-f", type=int, help="subflows per UE (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hlwnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("topo", parents=[common], help="print the AP roster, dump channel maps")
    s.add_argument("--positions", help="CSV of UE positions (x,y[,z]) -> sinr.csv, capacity.csv")
    s.add_argument("--sweep", type=float, help="grid step in metres for heatmap.csv")
    s.set_defaults(func=cmd_topo)

    s = sub.add_parser("collect", parents=[common], help="simulate and label a dataset")
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("train", parents=[common], help="train a model on a collected dataset")
    s.add_argument("--model", choices=("tcnn", "dnn", "both"), default="both")
    s.add_argument("--dataset", help="dataset file (default: derived from --out, --n-ue, --n-f)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="compare allocation methods")
    s.add_argument("--models", help="checkpoint directory (default: --out)")
    s.add_argument("--latency", action="store_true", help="also time inference")
    s.add_argument("--skip-missing", action="store_true",
                   help="skip learned methods without a checkpoint instead of failing")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="inference latency table")
    s.add_argument("--models", help="checkpoint directory (default: --out)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("solve", parents=[common], help="solve one PF instance from CSV")
    s.add_argument("--capacity", required=True, help="capacity CSV, row = AP, column = UE")
    s.add_argument("--assoc", required=True, help="0/1 association CSV of the same shape")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=int, default=10_000)
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("predict", parents=[common], help="allocate with a trained model")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sinr", required=True, help="linear SINR CSV, row = AP, column = UE")
    s.set_defaults(func=cmd_predict)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    over = {}
    if args.n_ue is not None:
        over["n_ue"] = args.n_ue
    if args.n_f is not None:
        over["n_f"] = args.n_f
    return dataclasses.replace(cfg, **over) if over else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.parallel < 1:
        parser.error("--parallel must be >= 1")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"hlwnet: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(cfg, args)
    except CliError as exc:
        print(f"hlwnet: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"hlwnet: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
