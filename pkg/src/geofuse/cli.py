"""geofuse command line: gen, train, eval, attnviz, gradcheck.

Exit codes: 0 success, 1 usage / bad input files, 2 contract violation,
3 numerical abort. ``GEOFUSE_THREADS`` overrides the worker count.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import formats, synthdata
from .autodiff import gradcheck
from .autodiff.tensor import no_grad
from .errors import ConfigError, ContractViolation, NumericalAbort
from .model import config as mconfig
from .model.data import SceneDataset
from .model.train import Trainer, append_csv, evaluate

log = logging.getLogger("geofuse")

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def worker_count(flag: Optional[int] = None) -> int:
    env = os.environ.get("GEOFUSE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"GEOFUSE_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise UsageError("GEOFUSE_THREADS must be positive")
        return n
    if flag is not None:
        return flag
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


# ----------------------------------------------------------------------------
# hashing / run manifest

def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def code_hash() -> str:
    """Tree-style hash over the package sources (path + blob hash per file)."""
    root = Path(__file__).resolve().parent
    lines = [f"{p.relative_to(root).as_posix()} {git_blob_hash(p.read_bytes())}"
             for p in sorted(root.rglob("*.py"))]
    return hashlib.sha1("\n".join(lines).encode()).hexdigest()


def dataset_hash(data_dir, panoramas: bool = True) -> str:
    """Hash of the split manifests plus the rasters they reference.

    With ``panoramas=False`` the panorama rasters are left out (their paths are
    still covered by the manifests), so a remote-only run never opens them.
    """
    root = Path(data_dir)
    h = hashlib.sha1()
    for split in synthdata.SPLITS:
        path = root / f"{split}.tsv"
        if not path.exists():
            continue
        h.update(path.read_bytes())
        for rec in synthdata.read_manifest(root, split):
            for p in [rec.overhead_path, rec.label_path, *(rec.pano_paths if panoramas else [])]:
                h.update(git_blob_hash((root / p).read_bytes()).encode())
    return h.hexdigest()


def write_run_manifest(out: Path, cfg, data_dir, artifacts: dict) -> Path:
    manifest = {
        "config": cfg.to_dict(), "seed": cfg.seed, "code_hash": code_hash(),
        "dataset": str(data_dir), "dataset_hash": dataset_hash(data_dir, cfg.uses_panoramas),
        "metrics_csv": artifacts.get("metrics_csv"), "checkpoint": artifacts.get("checkpoint"),
        "artifacts": sorted(str(v) for v in artifacts.values() if v) + [str(out / "run.json")],
    }
    path = out / "run.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


# ----------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    if args.scenes < 3:
        raise UsageError(f"--scenes must be at least 3 (three splits), got {args.scenes}")
    cfg = synthdata.SceneConfig(num_panos=args.panos)
    synthdata.make_dataset(args.scenes, args.seed, args.out, cfg=cfg, task=args.task,
                           workers=worker_count(args.workers))
    print(f"wrote {args.scenes} scenes to {args.out} (dataset hash {dataset_hash(args.out)[:12]})")
    return EXIT_OK


def _load_cfg(args):
    cfg = mconfig.load_config(args.config) if args.config else mconfig.desk_config()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = cfg.replace(epochs=args.epochs)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    data = Path(args.data or cfg.data_dir)
    out = Path(args.out or cfg.out_dir or "run")
    out.mkdir(parents=True, exist_ok=True)
    _check_task(cfg, data)
    train_ds = SceneDataset.from_dir(data, "train", cfg)
    val_ds = SceneDataset.from_dir(data, "val", cfg)
    csv_path, ckpt = out / "metrics.csv", out / "checkpoint"
    if args.resume and (ckpt / "manifest.json").exists():
        trainer = Trainer.load(ckpt, cfg)
        trainer.cfg = trainer.model.cfg = cfg
        print(f"resuming at epoch {trainer.epoch} (lr {trainer.opt.lr:.6g})")
    else:
        if csv_path.exists():
            csv_path.unlink()
        trainer = Trainer(cfg)
    (out / "config.txt").write_text(cfg.to_text())
    trainer.fit(train_ds, val_ds, csv_path=csv_path, ckpt_dir=ckpt)
    write_run_manifest(out, cfg, data, {"metrics_csv": str(csv_path), "checkpoint": str(ckpt),
                                        "config": str(out / "config.txt")})
    print(f"trained {cfg.variant} ({','.join(cfg.inputs) or 'no attention'}) for {trainer.epoch} epochs -> {out}")
    return EXIT_OK


def _check_task(cfg, data_dir) -> None:
    meta_path = Path(data_dir) / "dataset.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("task", cfg.task) != cfg.task:
            raise ContractViolation(f"config task {cfg.task!r} does not match dataset task {meta['task']!r}")


def _eval_row(name, r, task):
    if task == "classification":
        return f"{name:<40} {100 * r.miou:>8.2f} {100 * r.acc:>8.2f} {r.counted:>10d} {r.ignored:>9d}"
    return f"{name:<40} {r.rmse:>8.4f} {r.rmse_log:>8.4f} {r.counted:>10d} {r.ignored:>9d}"


def cmd_eval(args) -> int:
    cfg = mconfig.load_config(args.config) if args.config else None
    trainer = Trainer.load(args.checkpoint, cfg)
    cfg = trainer.cfg
    _check_task(cfg, args.data)
    ds = SceneDataset.from_dir(args.data, args.split, cfg)
    r = evaluate(trainer.model, ds, cfg.batch_size)
    head = ("mIOU", "Acc") if cfg.task == "classification" else ("RMSE", "RMSE log")
    print(f"{'model':<40} {head[0]:>8} {head[1]:>8} {'pixels':>10} {'unknown':>9}")
    name = cfg.variant if cfg.variant != "full" else "+".join(cfg.inputs)
    print(_eval_row(name, r, cfg.task))
    if args.compare:
        other = Trainer.load(args.compare)
        ocfg = other.cfg
        ods = SceneDataset.from_dir(args.data, args.split, ocfg)
        r2 = evaluate(other.model, ods, ocfg.batch_size)
        oname = ocfg.variant if ocfg.variant != "full" else "+".join(ocfg.inputs)
        print(_eval_row(oname, r2, cfg.task))
        if cfg.task == "classification":
            print(f"{'delta':<40} {100 * (r.miou - r2.miou):>+8.2f} {100 * (r.acc - r2.acc):>+8.2f}")
        else:
            print(f"{'delta':<40} {r.rmse - r2.rmse:>+8.4f} {r.rmse_log - r2.rmse_log:>+8.4f}")
    csv_path = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_{args.split}.csv"
    if csv_path.exists():
        csv_path.unlink()
    append_csv(csv_path, {"epoch": trainer.epoch, "loss": r.loss, "miou": r.miou, "acc": r.acc,
                          "rmse": r.rmse, "rmse_log": r.rmse_log})
    print(f"metrics written to {csv_path}")
    return EXIT_OK


def parse_targets(text: str, grid: int) -> list[tuple[int, int]]:
    """``"r,c;r,c"`` grid cells or ``all``."""
    if text.strip() == "all":
        return [(r, c) for r in range(grid) for c in range(grid)]
    cells = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            r, c = (int(v) for v in item.split(","))
        except ValueError:
            raise UsageError(f"bad target {item!r}; expected 'row,col'")
        if not (0 <= r < grid and 0 <= c < grid):
            raise UsageError(f"target {item!r} outside the {grid}x{grid} grid")
        cells.append((r, c))
    if not cells:
        raise UsageError("no targets given")
    return cells


def attention_maps(trainer: Trainer, ds: SceneDataset, scene_index: int):
    """Attention ``[T, K, h, w]`` of one scene under the trained network."""
    model = trainer.model
    model.eval()
    record = {}
    with no_grad():
        model(ds.batch([scene_index]), record=record)
    return record["attention"].data[0]


def cmd_attnviz(args) -> int:
    trainer = Trainer.load(args.checkpoint)
    cfg = trainer.cfg
    if not cfg.uses_panoramas:
        raise ContractViolation("the remote variant has no attention maps")
    split = args.split
    ds = SceneDataset.from_dir(args.data, split, cfg)
    ids = [s.scene_id for s in ds.scenes]
    if args.scene not in ids:
        raise UsageError(f"scene {args.scene!r} not in split {split!r}")
    i = ids.index(args.scene)
    K = len(ds.scenes[i].panos)
    if not 0 <= args.pano < K:
        raise UsageError(f"pano index {args.pano} outside [0, {K})")
    cells = parse_targets(args.targets, cfg.grid)
    P = attention_maps(trainer, ds, i)  # T, K, h, w
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    G = cfg.grid
    for r, c in cells:
        formats.write_pgm(out / f"scene{args.scene}_pano{args.pano}_t{r}_{c}.pgm", P[r * G + c, args.pano])
    total = P[:, args.pano].mean(axis=(1, 2)).reshape(G, G)
    formats.write_pgm(out / f"scene{args.scene}_pano{args.pano}_total.pgm", total)
    print(f"wrote {len(cells)} attention maps and 1 total-attention map to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    broken = [args.broken] if args.broken else None
    if broken and broken[0] not in gradcheck.OP_CASES:
        raise UsageError(f"unknown op {args.broken!r}")
    reports = gradcheck.run_suite(seed=args.seed, n_seeds=args.n_seeds, broken=broken)
    ok = True
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status} {rep.name:<28} max_rel_err={rep.max_rel_err:.3e} tol={rep.tol:.0e}")
    print(f"{sum(r.passed for r in reports)}/{len(reports)} ops passed")
    return EXIT_OK if ok else EXIT_CONTRACT


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geofuse", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--workers", type=int, default=None, help="worker count (default: available CPUs)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="render a synthetic dataset")
    g.add_argument("--scenes", type=int, default=200)
    g.add_argument("--seed", type=int, default=17)
    g.add_argument("--out", required=True)
    g.add_argument("--task", choices=("classification", "regression"), default="classification")
    g.add_argument("--panos", type=int, default=4)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint if present")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=synthdata.SPLITS)
    e.add_argument("--config", help="config that must match the checkpoint")
    e.add_argument("--compare", help="second checkpoint; prints a delta row")
    e.add_argument("--out", help="CSV path (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("attnviz", help="export attention maps as PGM")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--split", default="test", choices=synthdata.SPLITS)
    a.add_argument("--scene", required=True)
    a.add_argument("--pano", type=int, default=0)
    a.add_argument("--targets", default="all", help="'r,c;r,c' grid cells or 'all'")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attnviz)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-seeds", type=int, default=5)
    c.add_argument("--broken", help=argparse.SUPPRESS)  # test hook: perturb one op's gradient
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with threadpool_limits(limits=worker_count(args.workers)):
            return args.func(args)
    except UsageError as exc:
        print(f"geofuse: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"geofuse: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractViolation as exc:
        print(f"geofuse: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericalAbort as exc:
        print(f"geofuse: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"geofuse: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
