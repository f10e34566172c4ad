"""Command-line interface: ``infovaegan {train,eval,traverse,export-dataset}``.

Exit codes: 0 success, 2 bad config/flags/paths, 3 training diverged,
4 checkpoint checksum or format failure.  ``INFOVAEGAN_THREADS`` sets the
default BLAS thread count.
"""

from __future__ import annotations

import os
import sys

_THREADS = os.environ.get("INFOVAEGAN_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import json  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from .checkpoint import CheckpointError, load_bundle, load_state, save_state  # noqa: E402
from .config import Config, ConfigError, load_config  # noqa: E402
from .data import SpriteDataset, export_corpus, write_pgm  # noqa: E402
from .distributions import LatentCode, one_hot, sample_prior  # noqa: E402
from .evaluation import evaluate, latent_traversal  # noqa: E402
from .training import RunLog, TrainingDiverged, new_state, run_stage_one, run_stage_two  # noqa: E402

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 2, 3, 4

CHECKPOINT_NAME = "checkpoint.ivgn"
RUNLOG_NAME = "runlog.csv"
METRICS_NAME = "metrics.json"


class UsageError(Exception):
    pass


def _config(path) -> Config:
    return load_config(path) if path else Config()


def _write_runlog(path: Path, log: RunLog, keep_through: int) -> None:
    """Write the run log, keeping earlier rows (step <= keep_through) of a resumed run."""
    body = log.to_csv().splitlines(keepends=True)
    header, rows = body[0], body[1:]
    previous = []
    if keep_through > 0 and path.exists():
        for line in path.read_text().splitlines(keepends=True)[1:]:
            if int(line.split(",", 1)[0]) <= keep_through:
                previous.append(line)
    path.write_text(header + "".join(previous) + "".join(rows))


def cmd_train(config_path, out_dir, resume=None, evaluate_at_end: bool = True) -> int:
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = SpriteDataset(cfg.data)
    if resume is not None:
        state = load_state(resume)
    else:
        state = new_state(cfg.train, cfg.data)
    start = state.records_done
    log = RunLog()

    def checkpoint(st):
        stage = "s2" if st.stage_two_done else "s1"
        step = st.stage_two_done or st.stage_one_done
        save_state(st, out / f"checkpoint-{stage}-{step:06d}.ivgn")

    try:
        run_stage_one(state, cfg.train, dataset, log, checkpoint)
        run_stage_two(state, cfg.train, log, checkpoint)
    except TrainingDiverged as exc:
        _write_runlog(out / RUNLOG_NAME, log, start)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    save_state(state, out / CHECKPOINT_NAME)
    _write_runlog(out / RUNLOG_NAME, log, start)
    if evaluate_at_end:
        metrics = evaluate(state.bundle, cfg.data, cfg.eval, cfg.train.weights)
        (out / METRICS_NAME).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_eval(checkpoint, config_path=None, seed: int | None = None) -> dict:
    cfg = _config(config_path)
    bundle = load_bundle(checkpoint)
    if seed is not None:
        cfg.eval.seed = seed
    return evaluate(bundle, cfg.data, cfg.eval, cfg.train.weights)


def parse_latent(text: str):
    if text == "d":
        return "d"
    kind, index = text[:1], text[1:]
    if kind not in ("c", "z") or not index.isdigit():
        raise UsageError(f"--latent must be d, c<i> or z<i>, got {text!r}")
    return kind, int(index)


def montage(cells: np.ndarray, side: int) -> np.ndarray:
    """(rows, cols, side*side) cells -> one image with 1-pixel black separators."""
    rows, cols = cells.shape[:2]
    out = np.zeros((rows * side + rows - 1, cols * side + cols - 1))
    for r in range(rows):
        for c in range(cols):
            y, x = r * (side + 1), c * (side + 1)
            out[y : y + side, x : x + side] = cells[r, c].reshape(side, side)
    return out


def traversal_base(prior, rows: int, seed: int) -> LatentCode:
    """Row r: d = category r mod K, z from the seeded prior, c = 0."""
    z = sample_prior(prior, rows, np.random.default_rng(seed)).z.value
    d = np.stack([one_hot(r % prior.K, prior.K) for r in range(rows)])
    return LatentCode(z, d, np.zeros((rows, prior.c_dim)))


def cmd_traverse(checkpoint, latent: str, lo: float, hi: float, steps: int, rows: int,
                 output, seed: int = 0, config_path=None) -> int:
    cfg = _config(config_path)
    target = parse_latent(latent)
    if rows < 1 or (target != "d" and steps < 2):
        raise UsageError("need --rows >= 1 and --steps >= 2")
    bundle = load_bundle(checkpoint)
    side = cfg.data.image_side
    if bundle.pixels != side * side:
        raise UsageError(f"checkpoint emits {bundle.pixels} pixels, config expects {side}x{side}")
    try:
        grid = latent_traversal(bundle, traversal_base(bundle.prior, rows, seed), target, lo, hi, steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_pgm(output, montage(grid.images, side))
    return EXIT_OK


def cmd_export_dataset(config_path, out_dir) -> int:
    cfg = _config(config_path)
    export_corpus(cfg.data, Path(out_dir))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infovaegan",
                                description="Train and inspect hybrid VAE-GAN representation models.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run both training stages from a JSON config")
    t.add_argument("config", help="JSON config file")
    t.add_argument("out_dir", help="directory for checkpoint, run log and metrics")
    t.add_argument("--resume", metavar="CHECKPOINT", help="continue from a saved checkpoint")
    t.add_argument("--no-eval", action="store_true", help="skip the final metrics pass")

    e = sub.add_parser("eval", help="print metrics JSON for a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--config", help="JSON config (data and eval sections are used)")
    e.add_argument("--seed", type=int, help="override the eval seed")

    v = sub.add_parser("traverse", help="write a latent traversal montage as binary PGM")
    v.add_argument("checkpoint")
    v.add_argument("--latent", required=True, help="d, c<i> or z<i>")
    v.add_argument("--lo", type=float, default=-1.0)
    v.add_argument("--hi", type=float, default=1.0)
    v.add_argument("--steps", type=int, default=7)
    v.add_argument("--rows", type=int, default=4)
    v.add_argument("--seed", type=int, default=0, help="seed for the base codes' z")
    v.add_argument("--config", help="JSON config (data section is used)")
    v.add_argument("--out", required=True, help="output .pgm path")

    x = sub.add_parser("export-dataset", help="write every sprite as PGM plus index.csv")
    x.add_argument("out_dir")
    x.add_argument("--config", help="JSON config (data section is used)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad flags, 0 on --help
    try:
        if args.command == "train":
            return cmd_train(args.config, args.out_dir, args.resume, not args.no_eval)
        if args.command == "eval":
            print(json.dumps(cmd_eval(args.checkpoint, args.config, args.seed), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "traverse":
            return cmd_traverse(args.checkpoint, args.latent, args.lo, args.hi, args.steps,
                                args.rows, args.out, args.seed, args.config)
        return cmd_export_dataset(args.config, args.out_dir)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
