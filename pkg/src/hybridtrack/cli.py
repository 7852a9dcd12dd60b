"""Command-line entry point: ``hybridtrack <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("hybridtrack")


def _write_rows(rows: list[dict], out) -> None:
    if not rows:
        return
    w = csv.DictWriter(out, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


def cmd_train(args) -> int:
    from .harness.config import load_config, make_datasets, save_config
    from .harness.evaluation import evaluate_model, write_curves
    from .harness.plotting import plot_curves
    from .harness.training import train_loop

    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.yaml", cfg)
    train, test = make_datasets(cfg.data)
    res = train_loop(cfg.model, cfg.train, train, args.seed, out_dir=out,
                     val_sequences=test if cfg.train.eval_every else None)
    pooled, _ = evaluate_model(res.model, test)
    write_curves(out / "eval", pooled)
    plot_curves(pooled, out / "eval")
    print("split,SR,OP50,OP75,PR,NPR")
    for name, r in pooled.items():
        s = r.scalars(percent=True)
        print(f"{name},{s['SR']:.2f},{s['OP50']:.2f},{s['OP75']:.2f},{s['PR']:.2f},{s['NPR']:.2f}")
    print(f"checkpoint,{res.checkpoint}")
    return 0


def cmd_track(args) -> int:
    from .eventsim import write_boxes_csv
    from .harness.benchmark import load_sequence
    from .tracker import load_checkpoint, track_sequence

    model, _ = load_checkpoint(args.ckpt)
    seq = load_sequence(args.seq)
    events = seq.events if model.use_event else None
    preds = track_sequence(model, seq.frames, events, seq.boxes[0], seq.timestamps)
    if args.out:
        write_boxes_csv(args.out, preds)
    else:
        print("frame,cx,cy,w,h")
        for i, b in enumerate(preds):
            print(f"{i},{b.cx:.4f},{b.cy:.4f},{b.w:.4f},{b.h:.4f}")
    return 0


def _gt_file(gt: Path, name: str | None = None) -> Path:
    if gt.is_file():
        return gt
    for cand in ([gt / name / "gt.csv", gt / f"{name}.csv"] if name else []) + [gt / "gt.csv"]:
        if cand.is_file():
            return cand
    raise FileNotFoundError(f"no ground truth for {name or gt} under {gt}")


def cmd_eval(args) -> int:
    from .eventsim import read_boxes_csv
    from .harness.evaluation import write_curves
    from .harness.metrics import compute_metrics, merge_results
    from .harness.plotting import plot_curves

    pred, gt = Path(args.pred), Path(args.gt)
    pairs = ([(p.stem, p) for p in sorted(pred.glob("*.csv"))] if pred.is_dir() else [(pred.stem, pred)])
    if not pairs:
        raise FileNotFoundError(f"no prediction CSVs in {pred}")
    results = {}
    for name, p in pairs:
        pb, _ = read_boxes_csv(p)
        gb, extra = read_boxes_csv(_gt_file(gt, name if pred.is_dir() else None))
        vis = extra.get("visible")
        vis = np.ones(len(gb), dtype=bool) if vis is None else vis.astype(bool)
        if not args.score_first:
            vis[0] = False
        results[name] = compute_metrics(pb, gb, vis)
    if len(results) > 1:
        results["all"] = merge_results(list(results.values()))
    out = Path(args.out)
    write_curves(out, results)
    plot_curves(results, out)
    print("sequence,SR,OP50,OP75,PR,NPR,frames")
    for name, r in results.items():
        s = r.scalars(percent=True)
        print(f"{name},{s['SR']:.2f},{s['OP50']:.2f},{s['OP75']:.2f},{s['PR']:.2f},{s['NPR']:.2f},{r.n_frames}")
    return 0


def cmd_energy(args) -> int:
    import torch

    from .energy import count_ops, format_summary, summary_table, write_report_csv
    from .harness.benchmark import load_sequence
    from .tracker import HybridTracker, TrackerConfig, event_window, load_checkpoint, prepare_crop

    if args.ckpt:
        model, _ = load_checkpoint(args.ckpt)
    else:
        model = HybridTracker(TrackerConfig()).eval()
    cfg = model.cfg
    if args.seq:
        seq = load_sequence(args.seq)
        i = min(1, len(seq) - 1)
        z = prepare_crop(seq.frames[0], seq.events, event_window(0, seq.timestamps), seq.boxes[0],
                         cfg.template_context, cfg.template_size, cfg)
        x = prepare_crop(seq.frames[i], seq.events, event_window(i, seq.timestamps), seq.boxes[i],
                         cfg.search_context, cfg.search_size, cfg)
        sample = tuple(torch.as_tensor(a, dtype=torch.float32)[None] for a in (z[0], x[0], z[1], x[1]))
    else:
        g = torch.Generator().manual_seed(args.seed)
        t, ts, ss = cfg.time_steps, cfg.template_size, cfg.search_size
        sample = (torch.randn(1, 3, ts, ts, generator=g), torch.randn(1, 3, ss, ss, generator=g),
                  (torch.rand(1, t, 3, ts, ts, generator=g) < 0.05).float(),
                  (torch.rand(1, t, 3, ss, ss, generator=g) < 0.05).float())
    report = count_ops(model, sample)
    if args.out:
        write_report_csv(args.out, report)
    else:
        _write_rows(report.rows(), sys.stdout)
    rows = summary_table(report, model)
    print()
    print(format_summary(rows))
    if report.uncounted:
        print(f"uncounted layers: {', '.join(report.uncounted)}")
    return 0


def cmd_verify_ista(args) -> int:
    from .harness.verify import verify_instance

    rows = [verify_instance(s, iters=args.iters, chain=args.chain) for s in range(args.seed, args.seed + args.n)]
    fields = ["seed", "objective_final", "kkt_residual", "adapter_vs_oracle_maxdiff"]
    rows = [{k: r[k] for k in fields} for r in rows]
    if args.out:
        with open(args.out, "w", newline="") as f:
            _write_rows(rows, f)
    else:
        _write_rows(rows, sys.stdout)
    worst = max(r["kkt_residual"] for r in rows)
    diff = max(r["adapter_vs_oracle_maxdiff"] for r in rows)
    log.info("max KKT residual %.3g, max adapter/oracle difference %.3g", worst, diff)
    return 0


def cmd_benchmark(args) -> int:
    from .harness.benchmark import SPLITS, build_benchmark

    mix = args.mix.split(",") if args.mix else list(SPLITS)
    manifest = build_benchmark(args.out, args.seed, args.n_train, args.n_test, mix, n_frames=args.frames)
    print("subset,split,name,seed")
    for e in manifest["sequences"]:
        print(f"{e['subset']},{e['split']},{e['name']},{e['seed']}")
    return 0


def cmd_ablate(args) -> int:
    from .harness.ablation import format_table, run_ablation
    from .harness.config import load_config, make_datasets

    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.steps is not None:
        cfg.train.steps_per_epoch = args.steps
    train, test = make_datasets(cfg.data)
    rows = run_ablation(cfg.model, cfg.train, train, test, args.seed, out_dir=args.out)
    print(format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridtrack", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train on the synthetic benchmark and evaluate")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, help="override train.epochs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("track", help="track one sequence directory")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--seq", required=True)
    s.add_argument("--out", help="predictions CSV (default: stdout)")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="score predictions: curve CSVs, PNG plots, summary JSON")
    s.add_argument("--pred", required=True, help="predictions CSV or directory of <sequence>.csv")
    s.add_argument("--gt", required=True, help="gt CSV, sequence directory or benchmark subset directory")
    s.add_argument("--out", default="eval_out")
    s.add_argument("--score-first", action="store_true", help="also score the initialisation frame")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("energy", help="operation counts and energy estimate")
    s.add_argument("--ckpt", help="checkpoint (default: untrained default-size model)")
    s.add_argument("--seq", help="sequence directory providing the sample input")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="per-layer CSV (default: stdout)")
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("verify-ista", help="reference LASSO solves and adapter equivalence")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int, default=5000)
    s.add_argument("--chain", type=int, default=4, help="adapters chained against oracle iterations")
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify_ista)

    s = sub.add_parser("benchmark", help="render a synthetic benchmark to disk")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-train", type=int, default=40)
    s.add_argument("--n-test", type=int, default=10)
    s.add_argument("--mix", help="comma-separated splits (default: all)")
    s.add_argument("--frames", type=int, default=30)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("ablate", help="train and compare the ablation variants")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps", type=int, help="override train.steps_per_epoch")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
