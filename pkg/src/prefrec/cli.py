"""Command-line entry point: ``prefrec <stage> [options]``.

Every stage reads the same run configuration (config file plus flags), writes
its outputs under ``--output-dir`` and records a ``<stage>.manifest.json``
with the config hash, seeds and input/output checksums.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import random
import sys
from pathlib import Path

from . import dpo
from .config import RunConfig, dpo_trainer_config, load_config
from .corpus import Split, load_corpus, save_corpus, split_corpus
from .errors import ConfigError, PrefRecError
from .evaluation import PipelineConfig, Variant, evaluate, render_table
from .prefs import PrefConfig, build_recinfo_prefs, build_summary_prefs, export_jsonl
from .scorer import RemoteScorer, ScoreInput, load_model, save_model
from .synthetic import generate_synthetic_corpus
from .textgen import CachingBackend, GenerationConfig, TemplateSet
from .textmetrics import TokenizerConfig, compute_report, render_metric_table
from .workflow import rec_infos_for_items, summarize_turns, train_scorer_on_corpus

logger = logging.getLogger("prefrec")

STAGES = ("ingest", "summarize", "recinfo", "train-scorer", "score", "build-prefs",
          "dpo-check", "evaluate", "metrics", "synth")
CORPUS_STAGES = {"ingest", "summarize", "recinfo", "train-scorer", "build-prefs", "evaluate"}


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _csv_ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _csv_floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _csv_strs(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", default=None, help="TOML or JSON run configuration file")
    g.add_argument("--corpus", default=S, help="corpus JSON path")
    g.add_argument("--corpus-format", choices=["native", "chatrec"], default=S)
    g.add_argument("--templates", default=S, help="bundled template set (tabidachi, chatrec)")
    g.add_argument("--template-dir", default=S, help="directory of template overrides")
    g.add_argument("--backend", default=S, help="mock | mock:<name> | openai:<model>@<url>")
    g.add_argument("--recinfo-backend", default=S)
    g.add_argument("--tuned-summary-backend", default=S)
    g.add_argument("--tuned-recinfo-backend", default=S)
    g.add_argument("--mock-markers", type=_csv_strs, default=S)
    g.add_argument("--scorer", choices=["native", "remote"], default=S)
    g.add_argument("--scorer-model", default=S)
    g.add_argument("--scorer-url", default=S)
    g.add_argument("--variant", choices=[v.value for v in Variant], default=S)
    g.add_argument("--k", type=int, default=S, help="summary candidates per turn")
    g.add_argument("--j", type=int, default=S, help="rec-info candidates per gold item")
    g.add_argument("--chunk-size", type=int, default=S, help="utterances per chunk; 0 = single pass")
    g.add_argument("--temperature", type=float, default=S)
    g.add_argument("--seed", type=int, default=S, help="root seed")
    g.add_argument("--ks", type=_csv_ints, default=S)
    g.add_argument("--split", type=_csv_floats, default=S, help="train,val,test ratios")
    g.add_argument("--lr", type=float, default=S)
    g.add_argument("--epochs", type=int, default=S)
    g.add_argument("--batch-size", type=int, default=S)
    g.add_argument("--l2", type=float, default=S)
    g.add_argument("--hash-dim-log2", type=int, default=S)
    g.add_argument("--cross-features", type=_bool, default=S)
    g.add_argument("--jobs", type=int, default=S)
    g.add_argument("--output-dir", default=S)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="prefrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="stage", required=True)

    sub.add_parser("ingest", parents=[common], help="validate, split and normalize a corpus")
    p = sub.add_parser("summarize", parents=[common], help="summarize every turn")
    p.add_argument("--on", choices=[s.value for s in Split], default=None, help="only this split")
    sub.add_parser("recinfo", parents=[common], help="generate rec-info for every item")
    sub.add_parser("train-scorer", parents=[common], help="fit the native score predictor")
    p = sub.add_parser("score", parents=[common], help="score triples")
    p.add_argument("--summary")
    p.add_argument("--description")
    p.add_argument("--rec-info")
    p.add_argument("--input", help="JSONL of {summary, rec_info, description}")
    p = sub.add_parser("build-prefs", parents=[common], help="build DPO preference pairs")
    p.add_argument("--kind", choices=["summary", "recinfo"], required=True)
    p.add_argument("--on", choices=[s.value for s in Split], default="train")
    p.add_argument("--no-meta", action="store_true", help="omit the meta object in JSONL")
    p = sub.add_parser("dpo-check", parents=[common], help="verify the DPO loss and gradients")
    p.add_argument("--quads", type=int, default=1000)
    p = sub.add_parser("evaluate", parents=[common], help="rank test turns and report HR/MRR")
    p.add_argument("--on", choices=[s.value for s in Split], default=None)
    p = sub.add_parser("metrics", parents=[common], help="length / Distinct-n / BLEU / ROUGE-L")
    p.add_argument("--texts", required=True, help="JSONL (field 'text') or one text per line")
    p.add_argument("--references", help="aligned references, same format")
    p.add_argument("--tokenizer", choices=["auto", "char", "whitespace"], default="auto")
    p.add_argument("--name", default="texts")
    p = sub.add_parser("synth", parents=[common], help="write the synthetic keyword corpus")
    p.add_argument("--dialogues", type=int, default=100)
    p.add_argument("--turns-per-dialogue", type=int, default=2)
    p.add_argument("--out", default=None, help="output path (default <output-dir>/corpus.json)")
    return parser


_NON_CONFIG = {"stage", "config", "verbose", "on", "kind", "no_meta", "summary", "description",
               "rec_info", "input", "quads", "texts", "references", "tokenizer", "name",
               "dialogues", "turns_per_dialogue", "out"}


class Run:
    """State shared by a single stage invocation."""

    def __init__(self, stage: str, cfg: RunConfig, args):
        self.stage = stage
        self.cfg = cfg
        self.args = args
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}

    def input(self, path) -> Path:
        path = Path(path)
        self.inputs[str(path)] = sha256_file(path)
        return path

    def output(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def corpus(self):
        path = self.input(self.cfg.corpus)
        corpus = load_corpus(path, self.cfg.corpus_format)
        if self.cfg.split is not None:
            corpus = split_corpus(corpus, tuple(self.cfg.split), self.cfg.stage_seed("split"))
        return corpus

    def generation(self, stage_seed_name=None) -> GenerationConfig:
        return GenerationConfig(
            templates=TemplateSet.load(self.cfg.templates, self.cfg.template_dir),
            chunk_size=self.cfg.chunk_size or None,
            seed=self.cfg.stage_seed(stage_seed_name or self.stage),
            temperature=0.0,
            jobs=self.cfg.jobs,
        )

    def backend(self, spec):
        b = self.cfg.make_backend(spec)
        if b is None or spec.startswith("mock"):
            return b
        return CachingBackend(b, self.out / "cache" / "generations.jsonl")

    def scorer(self):
        if self.cfg.scorer == "remote":
            return RemoteScorer(self.cfg.scorer_url)
        path = Path(self.cfg.scorer_model or self.out / "scorer.json")
        if not path.is_file():
            raise ConfigError(f"scorer model {path} not found; run train-scorer first")
        model = load_model(self.input(path))
        self._check_feature_cfg(path, model)
        return model

    def _check_feature_cfg(self, path: Path, model):
        manifest = path.parent / "train-scorer.manifest.json"
        if not manifest.is_file():
            return
        recorded = json.loads(manifest.read_text(encoding="utf-8")).get("extra", {})
        want = recorded.get("feature_cfg_hash")
        if want is not None and want != model.feature_cfg.fingerprint():
            raise ConfigError(
                f"scorer feature config {model.feature_cfg.fingerprint()} differs from the one "
                f"recorded at training time ({want})"
            )

    def write_manifest(self):
        outputs = []
        for name in self.outputs:
            p = self.out / name
            outputs.append({"path": name, "sha256": sha256_file(p) if p.is_file() else None})
        doc = {
            "stage": self.stage,
            "config_hash": self.cfg.config_hash(),
            "root_seed": self.cfg.seed,
            "stage_seed": self.cfg.stage_seed(self.stage),
            "config": self.cfg.to_dict(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": outputs,
            "extra": self.extra,
        }
        (self.out / f"{self.stage}.manifest.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )


def _write_jsonl(path: Path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def cmd_synth(run: Run):
    a = run.args
    corpus = generate_synthetic_corpus(
        n_dialogues=a.dialogues,
        turns_per_dialogue=a.turns_per_dialogue,
        seed=run.cfg.seed,
        split_ratios=tuple(run.cfg.split) if run.cfg.split else (0.7, 0.1, 0.2),
    )
    if a.out:
        path = Path(a.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_corpus(corpus, path)
    else:
        save_corpus(corpus, run.output("corpus.json"))
    print(f"wrote {sum(1 for _ in corpus.turns())} turns")


def cmd_ingest(run: Run):
    corpus = run.corpus()
    save_corpus(corpus, run.output("corpus.json"))
    stats = {
        "items": len(corpus.items),
        "dialogues": len(corpus.dialogues),
        "turns": sum(1 for _ in corpus.turns()),
        "splits": {s.value: sum(1 for d in corpus.dialogues if d.split == s) for s in Split},
    }
    run.extra["stats"] = stats
    print(json.dumps(stats))


def cmd_summarize(run: Run):
    corpus = run.corpus()
    gen = run.generation("summarize")
    backend = run.backend(run.cfg.backend)
    summaries = summarize_turns(corpus, backend, gen, run.args.on, run.cfg.jobs)
    rows = [
        {
            "turn_id": tid,
            "partials": [p.to_dict() for p in s.partials],
            "combined": s.combined,
            "final": s.final.to_dict(),
        }
        for tid, s in summaries.items()
    ]
    _write_jsonl(run.output("summaries.jsonl"), rows)
    print(f"summarized {len(rows)} turns")


def cmd_recinfo(run: Run):
    corpus = run.corpus()
    backend = run.backend(run.cfg.recinfo_backend or run.cfg.backend)
    infos = rec_infos_for_items(corpus, corpus.items, backend, run.generation("recinfo"), run.cfg.jobs)
    _write_jsonl(run.output("recinfo.jsonl"), [{"item_id": i, **g.to_dict()} for i, g in infos.items()])
    print(f"generated rec-info for {len(infos)} items")


def cmd_train_scorer(run: Run):
    corpus = run.corpus()
    if not any(True for _ in corpus.turns(Split.TRAIN)):
        raise ConfigError("corpus has no train split; pass --split or pre-split the corpus")
    cfg = run.cfg
    use_r = cfg.variant_enum.uses_rec_info
    # scorer training uses the untuned generators: it precedes preference training
    model, history = train_scorer_on_corpus(
        corpus,
        run.backend(cfg.backend),
        run.generation("summarize"),
        use_rec_info=use_r,
        hyper=cfg.train_cfg(),
        feature_cfg=cfg.feature_cfg(),
        recinfo_backend=run.backend(cfg.recinfo_backend) if cfg.recinfo_backend else None,
        jobs=cfg.jobs,
    )
    save_model(model, run.output("scorer.json"))
    _write_jsonl(run.output("scorer_history.jsonl"),
                 [{"epoch": h.epoch, "train_loss": h.train_loss, "val_mse": h.val_mse} for h in history])
    run.extra["feature_cfg"] = model.feature_cfg.to_dict()
    run.extra["feature_cfg_hash"] = model.feature_cfg.fingerprint()
    run.extra["uses_rec_info"] = use_r
    best = min(history[1:], key=lambda h: h.val_mse if h.val_mse is not None else h.train_loss)
    print(f"trained scorer: best epoch {best.epoch}, val_mse={best.val_mse}")


def cmd_score(run: Run):
    scorer = run.scorer()
    a = run.args
    if a.input:
        rows = []
        for line in run.input(a.input).read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                inp = ScoreInput(d["summary"], d["description"], d.get("rec_info"))
                rows.append({**d, "score": scorer.predict(inp)})
        _write_jsonl(run.output("scores.jsonl"), rows)
        print(f"scored {len(rows)} triples")
    else:
        if not a.summary or not a.description:
            raise UsageError("score needs --summary and --description (or --input)")
        print(json.dumps({"score": scorer.predict(ScoreInput(a.summary, a.description, a.rec_info))}))


def cmd_build_prefs(run: Run):
    cfg = run.cfg
    a = run.args
    if a.kind == "recinfo" and not cfg.variant_enum.uses_rec_info:
        raise ConfigError("variant baseline has no rec-info generator to build preferences for")
    corpus = run.corpus()
    if a.on and any(d.split is not None for d in corpus.dialogues):
        corpus = corpus.subset(a.on)
    scorer = run.scorer()
    base = run.backend(cfg.backend)
    rbase = run.backend(cfg.recinfo_backend) if cfg.recinfo_backend else base
    pcfg = PrefConfig(
        num_candidates=cfg.k if a.kind == "summary" else cfg.j,
        seed=cfg.stage_seed(f"build-prefs-{a.kind}"),
        temperature=cfg.temperature,
        generation=run.generation("summarize"),
        use_rec_info=cfg.variant_enum.uses_rec_info,
        jobs=cfg.jobs,
    )
    if a.kind == "summary":
        pairs = build_summary_prefs(corpus, scorer, base, pcfg, recinfo_backend=rbase)
        trainer = dpo_trainer_config(cfg.templates, "summary")
    else:
        pairs = build_recinfo_prefs(corpus, scorer, rbase, pcfg, summary_backend=base)
        trainer = dpo_trainer_config(cfg.templates, "rec_info")
    n = export_jsonl(pairs, run.output(f"prefs_{a.kind}.jsonl"), include_meta=not a.no_meta)
    trainer["train_file"] = f"prefs_{a.kind}.jsonl"
    run.output(f"dpo_trainer_{a.kind}.json").write_text(
        json.dumps(trainer, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    run.extra["pairs"] = n
    print(f"wrote {n} {a.kind} preference pairs")


def dpo_self_check(n_quads=1000, seed=0, curve_path=None) -> dict:
    """Numerical checks of the DPO objective; returns {check: passed}."""
    rng = random.Random(seed)
    results = {}
    ident = dpo.LogProbQuad(-3.0, -5.0, -3.0, -5.0)
    results["identity_is_ln2"] = abs(dpo.dpo_loss(ident, 0.1) - math.log(2)) < 1e-12
    worked = dpo.LogProbQuad(-1.0, -3.0, -2.0, -2.0)
    results["worked_example"] = abs(dpo.dpo_loss(worked, 0.1) - 0.598139) < 1e-6
    worst = 0.0
    for _ in range(n_quads):
        q = [rng.uniform(-50, 0) for _ in range(4)]
        beta = rng.choice([0.01, 0.06109, 0.1, 0.1768])
        gc, gr = dpo.dpo_grad(dpo.LogProbQuad(*q), beta)
        fc = dpo.central_difference(lambda x: dpo.dpo_loss(dpo.LogProbQuad(x, *q[1:]), beta), q[0])
        fr = dpo.central_difference(
            lambda x: dpo.dpo_loss(dpo.LogProbQuad(q[0], x, *q[2:]), beta), q[1]
        )
        for a, f in ((gc, fc), (gr, fr)):
            worst = max(worst, abs(a - f) / max(abs(a), abs(f), 1e-12))
    results["gradient_vs_finite_difference"] = worst < 1e-5
    policy = dpo.ToyPolicy.uniform("abcd", 3)
    _, _, curve = dpo.toy_dpo_train(policy, [("abc", "dcb")], beta=0.1, lr=0.5, steps=50)
    losses = [p.loss for p in curve]
    results["toy_training_descends"] = (
        all(b <= a for a, b in zip(losses, losses[1:])) and losses[-1] < math.log(2)
        and curve[-1].margin > 0
    )
    if curve_path is not None:
        dpo.write_curve_csv(curve, curve_path)
    return results


def cmd_dpo_check(run: Run):
    results = dpo_self_check(run.args.quads, run.cfg.stage_seed("dpo-check"),
                             run.output("dpo_curve.csv"))
    run.output("dpo_check.json").write_text(json.dumps(results, indent=1) + "\n", encoding="utf-8")
    run.extra["results"] = results
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(results.values()) else 1


def cmd_evaluate(run: Run):
    cfg = run.cfg
    corpus = run.corpus()
    split = run.args.on
    if split is None and any(d.split == Split.TEST for d in corpus.dialogues):
        split = Split.TEST.value
    if split is not None:
        corpus = corpus.subset(split)
    pipeline = PipelineConfig(
        variant=cfg.variant_enum,
        scorer=run.scorer(),
        summary_backend=run.backend(cfg.backend),
        recinfo_backend=run.backend(cfg.recinfo_backend),
        tuned_summary_backend=run.backend(cfg.tuned_summary_backend),
        tuned_recinfo_backend=run.backend(cfg.tuned_recinfo_backend),
        generation=run.generation("summarize"),
        jobs=cfg.jobs,
    )
    report = evaluate(corpus, pipeline, cfg.ks)
    run.output(f"report_{cfg.variant}.json").write_text(report.to_json(), encoding="utf-8")
    table = render_table([report])
    run.output(f"report_{cfg.variant}.txt").write_text(table, encoding="utf-8")
    run.extra["pipeline"] = pipeline.describe()
    print(table, end="")


def _read_texts(path: Path) -> list[str]:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        return [json.loads(line)["text"] for line in text.splitlines() if line.strip()]
    return [line for line in text.splitlines() if line.strip()]


def cmd_metrics(run: Run):
    a = run.args
    texts = _read_texts(run.input(a.texts))
    refs = _read_texts(run.input(a.references)) if a.references else None
    report = compute_report(texts, refs, TokenizerConfig(a.tokenizer))
    run.output("metrics.json").write_text(report.to_json(), encoding="utf-8")
    table = render_metric_table([(a.name, report)])
    run.output("metrics.txt").write_text(table, encoding="utf-8")
    print(table, end="")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "summarize": cmd_summarize,
    "recinfo": cmd_recinfo,
    "train-scorer": cmd_train_scorer,
    "score": cmd_score,
    "build-prefs": cmd_build_prefs,
    "dpo-check": cmd_dpo_check,
    "evaluate": cmd_evaluate,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        parser.error(str(exc))
    if args.stage in CORPUS_STAGES:
        if not cfg.corpus:
            parser.error(f"{args.stage} requires a corpus path (--corpus or config 'corpus')")
        if not Path(cfg.corpus).is_file():
            parser.error(f"corpus file {cfg.corpus} does not exist")

    run = Run(args.stage, cfg, args)
    try:
        code = COMMANDS[args.stage](run) or 0
    except UsageError as exc:
        parser.error(str(exc))
    except (PrefRecError, OSError) as exc:
        err = {"error": type(exc).__name__, "stage": args.stage, "message": str(exc)}
        if getattr(exc, "context", None):
            err["context"] = exc.context
        print(json.dumps(err), file=sys.stderr)
        return 1
    run.write_manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
