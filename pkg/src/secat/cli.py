"""Command-line entry point.

Subcommands cover the pipeline stage by stage (gen-data, cluster, pretrain,
assign-names, adapt, eval), plus the ablation grid and a text report. Every
command reads a JSON run config, writes its artifacts into the workspace, and
records them in the hashed manifest. Exit codes: 0 success, 1 failed
invariant or missing artifact, 2 usage error.

SECAT_THREADS caps BLAS worker threads; it must be applied before numpy
loads, so the heavy imports happen inside the command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("SECAT_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


ASSIGN_MAGIC = b"SECATASN"


def _write_assignments(path, row_ids, assignments) -> None:
    import numpy as np

    with open(path, "wb") as f:
        f.write(ASSIGN_MAGIC)
        f.write(struct.pack("<BI", 1, len(assignments)))
        f.write(np.asarray(row_ids, dtype="<u4").tobytes())
        f.write(np.asarray(assignments, dtype="<u4").tobytes())


def _read_assignments(path):
    import numpy as np

    from .errors import FormatError, LengthError

    blob = open(path, "rb").read()
    if blob[: len(ASSIGN_MAGIC)] != ASSIGN_MAGIC:
        raise FormatError(f"bad assignment sidecar magic {blob[:8]!r}")
    flag, count = struct.unpack_from("<BI", blob, len(ASSIGN_MAGIC))
    if flag != 1:
        raise FormatError(f"bad label flag {flag}")
    need = len(ASSIGN_MAGIC) + 5 + 8 * count
    if len(blob) != need:
        raise LengthError(f"assignment sidecar has {len(blob)} bytes, want {need}")
    off = len(ASSIGN_MAGIC) + 5
    row_ids = np.frombuffer(blob[off : off + 4 * count], dtype="<u4").astype(np.int64)
    assigns = np.frombuffer(blob[off + 4 * count :], dtype="<u4").astype(np.int64)
    return row_ids, assigns


def _load_config(args):
    from .training import RunConfig

    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    return cfg


def _load_dataset(ws):
    from .embeddings import EmbeddingMatrix, GroundTruth, read_embeddings

    matrix, labels = read_embeddings(ws.resolve("embeddings", "embeddings"))
    meta = json.loads(ws.resolve("dataset", "dataset metadata").read_text())
    gt = GroundTruth(labels, tuple(meta["class_names"]))
    return matrix, gt, tuple(meta["adapt_classes"]), tuple(meta["eval_classes"])


def _load_clusters(ws, matrix):
    import numpy as np

    from .clustering import ClusterModel
    from .embeddings import read_embeddings

    cents, _ = read_embeddings(ws.resolve("centroids", "cluster centroids"))
    row_ids, assigns = _read_assignments(ws.resolve("assignments", "cluster assignments"))
    meta = json.loads(ws.resolve("clusters_meta", "cluster metadata").read_text())
    idx = matrix.index_of()
    data = matrix.data[[idx[int(r)] for r in row_ids]].astype(np.float64)
    d = data - cents.data.astype(np.float64)[assigns]
    inertia = float((d * d).sum())
    return ClusterModel(
        centroids=cents.data,
        assignments=assigns,
        inertia=inertia,
        inertia_history=list(meta["inertia_history"]),
        row_ids=row_ids,
    )


def cmd_gen_data(args) -> int:
    from .embeddings import write_embeddings
    from .pipeline import build_dataset
    from .workspace import Workspace

    cfg = _load_config(args)
    ws = Workspace(args.workspace)
    with ws.lock():
        matrix, gt, adapt_classes, eval_classes = build_dataset(cfg)
        write_embeddings(ws.path("embeddings.emb"), matrix, labels=gt.labels)
        meta = {
            "class_names": list(gt.class_names),
            "adapt_classes": list(adapt_classes),
            "eval_classes": list(eval_classes),
            "spec": {
                "n_classes": cfg.data_classes, "per_class": cfg.data_per_class,
                "dim": cfg.data_dim, "separation": cfg.data_separation,
                "seed": cfg.data_seed,
            },
        }
        ws.path("dataset.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        ws.record("embeddings", "embeddings.emb")
        ws.record("dataset", "dataset.json")
    print(f"wrote {matrix.n_rows} x {matrix.dim} embeddings, {len(gt.class_names)} classes")
    return 0


def cmd_cluster(args) -> int:
    from .embeddings import EmbeddingMatrix, write_embeddings
    from .pipeline import cluster_stage, slice_rows
    from .workspace import Workspace

    cfg = _load_config(args)
    ws = Workspace(args.workspace)
    with ws.lock():
        matrix, gt, adapt_classes, _ = _load_dataset(ws)
        adapt_matrix = slice_rows(matrix, gt, adapt_classes)
        model, pools = cluster_stage(cfg, adapt_matrix)
        write_embeddings(ws.path("centroids.emb"), EmbeddingMatrix(model.centroids))
        _write_assignments(ws.path("assignments.bin"), model.row_ids, model.assignments)
        meta = {
            "k": model.k,
            "inertia": model.inertia,
            "inertia_history": model.inertia_history,
            "pool_fraction": cfg.pool_fraction,
            "hard_pairs": [list(p) for p in pools.hard_pairs],
            "easy_pairs": [list(p) for p in pools.easy_pairs],
        }
        ws.path("clusters.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        ws.record("centroids", "centroids.emb")
        ws.record("assignments", "assignments.bin")
        ws.record("clusters_meta", "clusters.json")
    print(f"k-means: K={model.k}, inertia {model.inertia:.2f}")
    return 0


def cmd_pretrain(args) -> int:
    from .checkpoint import save_checkpoint
    from .errors import ValidationError
    from .naming import build_vocabulary
    from .pipeline import lexicon_stage
    from .training import TrainLog, pretrain_captioner
    from .workspace import Workspace

    cfg = _load_config(args)
    if cfg.stage != "pretrain":
        raise ValidationError("pretrain needs a config with stage='pretrain'")
    ws = Workspace(args.workspace)
    with ws.lock():
        matrix, gt, adapt_classes, _ = _load_dataset(ws)
        vocab = build_vocabulary(cfg.vocab_kind, cfg.effective_vocab_size, seed=cfg.data_seed)
        lex = lexicon_stage(cfg, gt, vocab)
        log = TrainLog(cfg)
        params, model_config = pretrain_captioner(cfg, matrix, gt, adapt_classes, lex, log=log)
        save_checkpoint(ws.path("pretrain.ckpt"), params, model_config, lex,
                        meta={"stage": "pretrain", "seed": cfg.seed})
        log.write(ws.path("trainlog_pretrain.jsonl"))
        ws.record("checkpoint_pretrain", "pretrain.ckpt")
    print(f"pretrained {cfg.total_steps} steps; final loss "
          f"{log.records[-1]['loss']:.4f}" if log.records else "pretrained 0 steps")
    return 0


def cmd_assign_names(args) -> int:
    from .checkpoint import load_checkpoint
    from .naming import assign_names, build_vocabulary
    from .workspace import Workspace

    cfg = _load_config(args)
    ws = Workspace(args.workspace)
    with ws.lock():
        matrix, gt, _, _ = _load_dataset(ws)
        clusters = _load_clusters(ws, matrix)
        params, model_config, lex, _ = load_checkpoint(
            ws.resolve("checkpoint_pretrain", "checkpoint")
        )
        vocab = build_vocabulary(cfg.vocab_kind, cfg.effective_vocab_size, seed=cfg.data_seed)
        names = assign_names(clusters, vocab, params, model_config, lex,
                             method=cfg.matching, template=cfg.template, seed=cfg.data_seed)
        ws.path("names.tsv").write_text(names.to_tsv(), encoding="utf-8", newline="\n")
        ws.path("vocab.json").write_text(json.dumps(
            {"kind": vocab.kind, "seed": vocab.seed, "words": list(vocab.words),
             "method": names.method, "template": names.template},
            sort_keys=True, indent=2) + "\n")
        ws.record("names", "names.tsv")
        ws.record("vocab", "vocab.json")
    print(f"assigned {clusters.k} cluster names via {cfg.matching}")
    return 0


def cmd_adapt(args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .embeddings import RowLookup
    from .errors import ValidationError
    from .naming import NameAssignment
    from .pipeline import cluster_stage, slice_rows
    from .training import TrainLog, secat_adapt
    from .workspace import Workspace

    cfg = _load_config(args)
    if cfg.stage != "adapt":
        raise ValidationError("adapt needs a config with stage='adapt'")
    ws = Workspace(args.workspace)
    with ws.lock():
        matrix, gt, adapt_classes, _ = _load_dataset(ws)
        clusters = _load_clusters(ws, matrix)
        from .clustering import centroid_distance_matrix, difficulty_pools

        pools = difficulty_pools(centroid_distance_matrix(clusters), cfg.pool_fraction)
        params, model_config, lex, _ = load_checkpoint(
            ws.resolve("checkpoint_pretrain", "checkpoint")
        )
        vocab_meta = json.loads(ws.resolve("vocab", "vocabulary").read_text())
        names = NameAssignment.from_tsv(
            ws.resolve("names", "name assignment").read_text(encoding="utf-8"),
            method=vocab_meta["method"], template=vocab_meta["template"],
        )
        log = TrainLog(cfg)
        adapted = secat_adapt(cfg, params, model_config, lex, clusters, names, pools,
                              RowLookup(matrix), log=log)
        save_checkpoint(ws.path("adapt.ckpt"), adapted, model_config, lex,
                        meta={"stage": "adapt", "seed": cfg.seed})
        log.write(ws.path("trainlog_adapt.jsonl"))
        ws.record("checkpoint_adapt", "adapt.ckpt")
    print(f"adapted {cfg.total_steps} steps ({cfg.task_mode}, {cfg.difficulty})")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import DecodeConfig, EvalOptions, evaluate_open_ended, write_reports_csv, write_reports_jsonl
    from .naming import NameAssignment
    from .pipeline import build_tasks_for
    from .workspace import Workspace

    cfg = _load_config(args)
    ws = Workspace(args.workspace)
    with ws.lock():
        matrix, gt, _, eval_classes = _load_dataset(ws)
        ckpt_name = "checkpoint_pretrain" if args.use_pretrained else "checkpoint_adapt"
        params, model_config, lex, _ = load_checkpoint(ws.resolve(ckpt_name, "checkpoint"))
        vocab_meta = json.loads(ws.resolve("vocab", "vocabulary").read_text())
        names = NameAssignment.from_tsv(
            ws.resolve("names", "name assignment").read_text(encoding="utf-8"),
            method=vocab_meta["method"], template=vocab_meta["template"],
        )
        tasks, lookup = build_tasks_for(cfg, matrix, gt, eval_classes, lex, names)
        options = EvalOptions()
        if cfg.pseudo_labels or cfg.augment_shots:
            clusters = _load_clusters(ws, matrix)
            options = EvalOptions(
                pseudo_labels=cfg.pseudo_labels, augment_shots=cfg.augment_shots,
                cluster_model=clusters, names=names,
            )
        report = evaluate_open_ended(
            params, model_config, lex, tasks, lookup,
            decode_config=DecodeConfig(
                beam_width=cfg.beam_width, max_new=cfg.eval_max_new,
                dynamic_init_std=cfg.dynamic_init_std,
                dynamic_bias_boost=cfg.dynamic_bias_boost,
            ),
            options=options, template=cfg.template, seed=cfg.data_seed,
        )
        suffix = "_pretrained" if args.use_pretrained else ""
        write_reports_jsonl(ws.path(f"reports{suffix}.jsonl"), [report])
        write_reports_csv(ws.path(f"reports{suffix}.csv"), [report])
        ws.record(f"reports{suffix}", f"reports{suffix}.jsonl")
        ws.record(f"reports{suffix}_csv", f"reports{suffix}.csv")
    print(f"{report.n}-way {report.j}-shot {report.mode}: "
          f"accuracy {report.accuracy:.3f} +/- {report.ci_half_width:.3f} "
          f"over {report.task_count} tasks")
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import plot_data_lines, run_ablation, write_reports_csv, write_reports_jsonl
    from .workspace import Workspace

    cfg = _load_config(args)
    ws = Workspace(args.workspace)
    with ws.lock():
        reports = run_ablation(args.kind, cfg)
        stem = f"ablation_{args.kind}"
        write_reports_jsonl(ws.path(f"{stem}.jsonl"), reports)
        write_reports_csv(ws.path(f"{stem}.csv"), reports)
        ws.record(stem, f"{stem}.jsonl")
        ws.record(f"{stem}_csv", f"{stem}.csv")
        if args.plot_data:
            lines = plot_data_lines(reports)
            ws.path(f"{stem}_plot.txt").write_text("\n".join(lines) + "\n")
            ws.record(f"{stem}_plot", f"{stem}_plot.txt")
    for r in reports:
        print(f"{args.kind}[{r.factor}]: {r.n}-way {r.j}-shot accuracy {r.accuracy:.3f}")
    return 0


def cmd_report(args) -> int:
    from .evaluation import EvalReport
    from .workspace import Workspace

    ws = Workspace(args.workspace)
    reports: list[EvalReport] = []
    for p in sorted(ws.root.glob("*.jsonl")):
        if p.name.startswith(("reports", "ablation_")):
            for line in p.read_text().splitlines():
                d = json.loads(line)
                if "accuracy" in d:
                    reports.append(EvalReport(**d))
    if not reports:
        print("no reports in workspace")
        return 0
    settings = sorted({(r.n, r.j) for r in reports})
    rows: dict[tuple, dict] = {}
    for r in reports:
        key = (r.kind or "run", r.factor, r.mode, r.split)
        rows.setdefault(key, {})[(r.n, r.j)] = r.accuracy
    head = ["setting".ljust(40)] + [f"{n}-way {j}-shot".rjust(14) for n, j in settings]
    print("".join(head))
    for key in sorted(rows):
        label = " ".join(str(k) for k in key if k != "")
        cells = [label.ljust(40)]
        for s in settings:
            v = rows[key].get(s)
            cells.append((f"{100 * v:.1f}%" if v is not None else "-").rjust(14))
        print("".join(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="secat", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run config JSON")
        p.add_argument("--workspace", default="workspace", help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--plot-data", action="store_true", help="emit (x, y) sweep pairs")

    for name, fn in (
        ("gen-data", cmd_gen_data), ("cluster", cmd_cluster), ("pretrain", cmd_pretrain),
        ("assign-names", cmd_assign_names), ("adapt", cmd_adapt),
    ):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("eval")
    common(p)
    p.add_argument("--use-pretrained", action="store_true",
                   help="evaluate the pretraining checkpoint instead of the adapted one")
    p.set_defaults(fn=cmd_eval)
    p = sub.add_parser("ablate")
    common(p)
    p.add_argument("--kind", required=True, help="difficulty|vocabulary|matching|task_mode|model_size|template|k_sweep")
    p.set_defaults(fn=cmd_ablate)
    p = sub.add_parser("report")
    common(p, config_required=False)
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    from .errors import SecatError

    try:
        return args.fn(args)
    except SecatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
