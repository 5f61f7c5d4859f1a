"""Command line: govern -> train -> eval, plus compare for traces.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Every command writes its outputs atomically: either
all files appear, or none do.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import governance as gov
from .corpus import dumps_corpus, read_corpus
from .errors import (
    ConfigError,
    DivergenceError,
    HybridPeftError,
    InvalidInputError,
    SingularityError,
)
from .evalkit import (
    EvalReport,
    Prediction,
    accuracy_by_language,
    avg_ece,
    evaluate,
    parity_gap,
    predictions_from_proba,
)
from .runconfig import KEYS, RunConfig, resolve
from .synthetic import SyntheticWorld
from .trainer import (
    Featurizer,
    build_model,
    footprint_report,
    make_dataset,
    pretrain_base,
    traces_to_jsonl,
    train,
)

log = logging.getLogger("hybridpeft")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TRACE_COLUMNS = ("train_loss", "val_loss", "grad_norm", "adapter_grad_norm", "drift")
TRACE_KEYS = frozenset(("step", "epoch", "mix") + TRACE_COLUMNS)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- output


class Outputs:
    """Collects output files and commits them together."""

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)
        self.files: dict = {}

    def add(self, name: str, data) -> None:
        self.files[name] = data.encode("utf-8") if isinstance(data, str) else data

    def commit(self) -> list:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        umask = os.umask(0)
        os.umask(umask)
        staged = []
        try:
            for name, data in self.files.items():
                fd, tmp = tempfile.mkstemp(dir=self.out_dir, prefix=f".{name}.", suffix=".tmp")
                staged.append((tmp, self.out_dir / name))
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                # mkstemp creates 0600 files; use the mode a plain open() would give
                os.chmod(tmp, 0o666 & ~umask)
            for tmp, final in staged:
                os.replace(tmp, final)
        finally:
            for tmp, _ in staged:
                if os.path.exists(tmp):
                    os.remove(tmp)
        return [str(final) for _, final in staged]


def _read(path: str, what: str):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return read_corpus(path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


# --------------------------------------------------------------------------- govern


def cmd_govern(cfg: RunConfig, args) -> int:
    """Curate a corpus up to a stage; writes staged.jsonl and audit.json."""
    corpus = _read(cfg.path("corpus", required=True), "corpus")
    lid = None
    policy = None
    if cfg.stage != "C0":
        lid_docs = _read(cfg.path("lid_corpus", required=True), "lid_corpus")
        lid = gov.lid_train(lid_docs)
        ceiling = cfg.ppl_ceiling
        if ceiling == "off":
            ceiling = math.inf
        elif ceiling == "auto":
            calib_path = cfg.path("calib_corpus")
            calib = _read(calib_path, "calib_corpus") if calib_path else lid_docs
            ceiling = gov.calibrate_ppl_ceiling(lid, calib, cfg.ppl_quantile, cfg.ppl_headroom)
        policy = cfg.policy(ceiling)
    docs, audit = gov.run_stages(corpus, cfg.stage, lid, policy, cfg.dedup_threshold, cfg.workers)
    out = Outputs(cfg.out_dir)
    out.add("staged.jsonl", dumps_corpus(docs))
    out.add("audit.json", audit.to_text())
    for path in out.commit():
        log.info("wrote %s", path)
    print(f"{cfg.stage}: kept {len(docs)} of {len(corpus)} documents")
    return EXIT_OK


# --------------------------------------------------------------------------- train


def _base_weights(cfg: RunConfig, tcfg):
    path = cfg.path("warmup_corpus")
    if path:
        docs = _read(path, "warmup_corpus")
    else:
        # held-out synthetic text, drawn from its own generator stream
        world = SyntheticWorld(cfg.seed)
        docs = world.documents(10, np.random.default_rng([cfg.seed, 99]), prefix="wu")
    langs = sorted({d.lang for d in docs if d.lang is not None})
    if not langs:
        raise InvalidInputError("warm-up corpus has no language-labelled documents")
    index = {lang: i for i, lang in enumerate(langs)}
    docs = [d for d in docs if d.lang in index]
    x = Featurizer(tcfg.dim).transform([d.text for d in docs], tcfg.workers)
    y = np.array([index[d.lang] for d in docs], dtype=np.intp)
    return pretrain_base(tcfg, x, y, cfg.seed)


def cmd_train(cfg: RunConfig, args) -> int:
    """Fine-tune one adapter mode; writes checkpoint.bin, trace.jsonl and footprint.json."""
    tcfg = cfg.train_config()
    train_docs = _read(cfg.path("corpus", required=True), "corpus")
    val_path = cfg.path("val_corpus")
    val_docs = _read(val_path, "val_corpus") if val_path else []
    labels = {d.label for d in train_docs + val_docs}
    if None in labels:
        raise InvalidInputError("training and validation documents need labels")
    if max(labels) >= tcfg.num_classes or min(labels) < 0:
        raise InvalidInputError(f"labels must lie in [0, {tcfg.num_classes})")
    data = make_dataset(Featurizer(tcfg.dim), train_docs, val_docs, tcfg.workers)
    base = _base_weights(cfg, tcfg)
    model = build_model(tcfg, base, data.x_train, data.y_train)
    footprint = footprint_report(model, data)

    seen = []
    out = Outputs(cfg.out_dir)
    try:
        model, traces = train(model, data, on_step=lambda t, m: seen.append(t))
    except DivergenceError as exc:
        # keep the last good state, then report the numerical failure
        out.add("checkpoint.bin", ckpt.save_model(exc.last_good, exc.step or 0))
        out.add("trace.jsonl", traces_to_jsonl(seen))
        out.commit()
        raise
    out.add("checkpoint.bin", ckpt.save_model(model, len(traces)))
    out.add("trace.jsonl", traces_to_jsonl(traces))
    out.add("footprint.json", _json(footprint))
    for path in out.commit():
        log.info("wrote %s", path)
    final = traces[-1].as_dict() if traces else {}
    print(f"{tcfg.mode}: {len(traces)} steps, final train loss {final.get('train_loss')}")
    return EXIT_OK


# --------------------------------------------------------------------------- eval


def _read_predictions(path: str) -> list:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"predictions not found: {path}")
    preds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                preds.append(Prediction(str(r["id"]), str(r["lang"]), int(r["label"]),
                                        int(r["predicted"]), float(r["confidence"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InvalidInputError(f"line {lineno}: bad prediction record ({exc})") from exc
    if not preds:
        raise InvalidInputError("no prediction records")
    return preds


def cmd_eval(cfg: RunConfig, args) -> int:
    """Score a checkpoint on a labelled corpus (or score prediction records); writes report.json."""
    out = Outputs(cfg.out_dir)
    pred_path = cfg.path("predictions")
    if pred_path:
        preds = _read_predictions(pred_path)
        per = accuracy_by_language(preds)
        macro = float(np.mean(list(per.values())))
        gap = parity_gap(per) if len(per) >= 2 else 0.0
        report = EvalReport(per, macro, gap, avg_ece(preds, cfg.bins), cfg.bins)
    else:
        path = cfg.path("checkpoint", required=True)
        if not os.path.isfile(path):
            raise FileNotFoundError(f"checkpoint not found: {path}")
        model, header = ckpt.load_model(Path(path).read_bytes())
        model = replace(model, config=replace(model.config, workers=cfg.workers))
        test = _read(cfg.path("corpus", required=True), "corpus")
        report = evaluate(model, test, cfg.bins, robustness=cfg.robustness)
        report.extra = {"checkpoint_step": header["step"], "config_hash": header["config_hash"],
                        "mode": model.config.mode}
        proba = model.predict_proba([d.text for d in test])
        preds = predictions_from_proba(test, proba)
        out.add("predictions.jsonl", "".join(json.dumps(p.to_record(), ensure_ascii=False) + "\n"
                                             for p in preds))
    out.add("report.json", report.to_text())
    for p in out.commit():
        log.info("wrote %s", p)
    print(f"macro accuracy {report.macro_accuracy:.4f}, parity gap {report.parity_gap:.4f}, "
          f"avg ECE {report.ece:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------- compare


def _load_trace(path: str) -> list:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"trace not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path} line {lineno}: not JSON ({exc})") from exc
            if not isinstance(rec, dict) or set(rec) != TRACE_KEYS:
                raise InvalidInputError(f"{path} line {lineno}: trace schema mismatch")
            rows.append(rec)
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def compare_table(traces: dict) -> str:
    """Tab-separated table with one row per step present in every trace."""
    common = None
    by_step = {}
    for label, rows in traces.items():
        steps = {r["step"]: r for r in rows}
        by_step[label] = steps
        common = set(steps) if common is None else common & set(steps)
    header = ["step"]
    for label in traces:
        header += [f"{label}:{c}" for c in TRACE_COLUMNS]
        header.append(f"{label}:lambda_mean")
    lines = ["\t".join(header)]
    for step in sorted(common or ()):
        cells = [str(step)]
        for label in traces:
            rec = by_step[label][step]
            cells += [_cell(rec[c]) for c in TRACE_COLUMNS]
            lams = [m["lambda"] for m in rec["mix"]]
            cells.append(_cell(sum(lams) / len(lams)) if lams else "")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def cost_table(labels: list, footprints: list, traces: dict) -> str:
    lines = ["label\tmode\ttrainable\tstep_seconds\tfinal_val_loss"]
    for label, fp in zip(labels, footprints):
        rows = traces[label]
        final = rows[-1]["val_loss"] if rows else None
        lines.append("\t".join([label, fp["mode"], str(fp["trainable"]["total"]),
                                _cell(fp.get("step_seconds")), _cell(final)]))
    return "\n".join(lines) + "\n"


def cmd_compare(cfg: RunConfig, args) -> int:
    """Align traces by step; writes compare.tsv (and cost.tsv with --footprints)."""
    paths = args.traces
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in paths]
    if len(labels) != len(paths):
        raise ConfigError("need one label per trace file")
    if len(set(labels)) != len(labels):
        labels = [f"{lab}{i}" for i, lab in enumerate(labels)]
    traces = {lab: _load_trace(p) for lab, p in zip(labels, paths)}
    out = Outputs(cfg.out_dir)
    table = compare_table(traces)
    out.add("compare.tsv", table)
    if args.footprints:
        if len(args.footprints) != len(paths):
            raise ConfigError("need one footprint file per trace file")
        fps = []
        for p in args.footprints:
            if not os.path.isfile(p):
                raise FileNotFoundError(f"footprint not found: {p}")
            fps.append(json.loads(Path(p).read_text(encoding="utf-8")))
        out.add("cost.tsv", cost_table(labels, fps, traces))
    out.commit()
    sys.stdout.write(table)
    return EXIT_OK


# --------------------------------------------------------------------------- entry point


COMMANDS = {"govern": cmd_govern, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}
_SECTIONS_FOR = {"govern": ("run", "govern", "paths"), "train": ("run", "train", "paths"),
                 "eval": ("run", "eval", "paths"), "compare": ("run",)}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybridpeft", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__)
        p.add_argument("--config", help="INI file with [run], [govern], [train], [eval], [paths]")
        for sec, key, _, default, text in KEYS:
            if sec in _SECTIONS_FOR[name]:
                p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                               help=f"{text} (default: {default})")
        if name == "compare":
            p.add_argument("traces", nargs="+", help="trace files (JSONL)")
            p.add_argument("--labels", help="comma-separated column labels")
            p.add_argument("--footprints", nargs="*", help="footprint files, one per trace")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    overrides = {sec_key: getattr(args, sec_key) for _, sec_key, *_ in KEYS
                 if getattr(args, sec_key, None) is not None}
    try:
        cfg = resolve(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, SingularityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HybridPeftError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
