"""Command-line interface: ingest, build-data, train, eval, ablate-inputs, oracle-check.

Every command writes its outputs only after all work succeeded, plus a
``<output>.manifest.json`` listing inputs, outputs (with sha256), seeds and
the effective configuration. Exit codes: 0 ok, 1 usage/config, 2 data,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, corpus, metrics, oracles, promptkit, synth
from .errors import ConfigError, DataError, NumericalAbort
from .scaledloss import DEFAULT_LAMBDA_BLEU, DEFAULT_LAMBDA_ROUGE, ScaleConfig
from .toylm import checkpoint, data, harness, model, train
from .toylm.vocab import VocabError

log = logging.getLogger("recipe_forge")

CONFIG_VERSION = 1
DEFAULT_D_VIS = 16
DEFAULT_MAX_OOV = 0.05
DEFAULT_MASKS = "image,title,image+title,image+ingredients,title+ingredients,image+title+ingredients"
SCALE_MODES = {"paper-literal": "paper_literal", "penalty": "penalty"}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2, which is our data-error code
        raise ConfigError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError(f"{args.command}: missing required option(s) {', '.join(missing)}")


def _read_file(path: str) -> None:
    if not Path(path).is_file():
        raise DataError(f"no such file: {path}")


def _effective_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}


def _write_outputs(outputs: dict[str, str | bytes]) -> None:
    for path, content in outputs.items():
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        mode = "wb" if isinstance(content, bytes) else "w"
        with open(path, mode, **({} if isinstance(content, bytes) else {"encoding": "utf-8"})) as fh:
            fh.write(content)


def _write_manifest(
    args: argparse.Namespace, primary: str, inputs: Sequence[str], outputs: Sequence[str], extra: Optional[dict] = None
) -> str:
    manifest = {
        "command": args.command,
        "tool_version": __version__,
        "config": _effective_config(args),
        "seeds": {"seed": getattr(args, "seed", None)},
        "inputs": {p: _sha256(p) for p in inputs if p},
        "outputs": {p: _sha256(p) for p in outputs},
    }
    if extra:
        manifest["summary"] = extra
    path = f"{primary}.manifest.json"
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load_corpus(path: str, d_vis: int) -> corpus.RecipeSet:
    _read_file(path)
    recipes = corpus.load_recipes(path, d_vis)
    if recipes.rejections:
        raise DataError(f"{path}: {len(recipes.rejections)} invalid line(s); run ingest first")
    return recipes


def _load_records(path: str) -> list[dict]:
    _read_file(path)
    records = promptkit.read_records(path)
    if not records:
        raise DataError(f"{path}: no dialog records")
    return records


def _load_bank(path: Optional[str]) -> list[promptkit.PromptTemplate]:
    if path is None:
        return promptkit.load_default_bank()
    _read_file(path)
    return promptkit.load_prompt_bank(path)


def _scale_config(args: argparse.Namespace) -> ScaleConfig:
    try:
        return ScaleConfig(args.lambda_bleu, args.lambda_rouge, SCALE_MODES[args.scale_mode])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _check_vocab(params: model.ModelParams, texts: Sequence[str], limit: float) -> float:
    rate = params.vocab.oov_rate(texts)
    if rate > limit:
        raise DataError(f"vocabulary mismatch: {rate:.1%} of data tokens are unknown to the checkpoint (limit {limit:.1%})")
    return rate


def _report_outputs(prefix: str, rows: list, label: str) -> dict[str, str]:
    return {
        f"{prefix}.json": metrics.report_json(rows),
        f"{prefix}.md": metrics.format_markdown(rows, label=label),
        f"{prefix}.csv": metrics.format_csv(rows, label=label.lower()),
    }


def _predictions_jsonl(preds: Sequence[harness.Prediction]) -> str:
    return "".join(json.dumps(p.to_dict(), sort_keys=True) + "\n" for p in preds)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    _require(args, "out_recipes", "out_visual")
    recipes = synth.generate(args.n, seed=args.seed, d_vis=args.d_vis, image_frac=args.image_frac)
    synth.write_corpus(recipes, args.out_recipes, args.out_visual)
    summary = {"recipes": len(recipes), "with_images": len(corpus.filter_with_images(recipes))}
    _write_manifest(args, args.out_recipes, [], [args.out_recipes, args.out_visual], summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    _require(args, "recipes", "out")
    _read_file(args.recipes)
    if args.visual:
        _read_file(args.visual)
    recipes = corpus.load_recipes(args.recipes, args.d_vis)
    rejections = [dict(r.to_dict(), source="recipes") for r in recipes.rejections]
    unknown: list[str] = []
    if args.visual:
        table, vis_rej = corpus.load_visual_sidecar(args.visual, args.d_vis)
        rejections += [dict(r.to_dict(), source="visual") for r in vis_rej]
        recipes, unknown = corpus.attach_visuals(recipes, table)
        rejections += [{"line": None, "id": rid, "reason": "visual id has no recipe; vectors dropped", "source": "visual"}
                       for rid in unknown]
    rej_path = args.rejections or f"{args.out}.rejections.jsonl"
    body = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in recipes)
    _write_outputs({
        args.out: body,
        rej_path: "".join(json.dumps(r, sort_keys=True) + "\n" for r in rejections),
    })
    summary = {
        "accepted": len(recipes),
        "rejected": len(recipes.rejections),
        "with_images": len(corpus.filter_with_images(recipes)),
        "unknown_visual_ids": len(unknown),
        "partitions": {p: len(recipes.partition(p)) for p in corpus.PARTITIONS},
    }
    _write_manifest(args, args.out, [args.recipes, args.visual], [args.out, rej_path], summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_build_data(args: argparse.Namespace) -> int:
    _require(args, "stage", "recipes", "out")
    stage = promptkit.check_stage(args.stage)
    bank = _load_bank(args.bank)
    if not promptkit.applicable(bank, stage):
        raise ConfigError(f"no template in the bank applies to stage {stage}")
    recipes = _load_corpus(args.recipes, args.d_vis)
    if args.partition != "all":
        recipes = recipes.partition(args.partition)
    if not len(recipes):
        raise DataError(f"partition {args.partition!r} is empty")
    try:
        examples = promptkit.build_examples(bank, recipes, stage, args.seed, args.per_recipe, args.max_dropout)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    body = "".join(json.dumps(ex.record(i), sort_keys=True) + "\n" for i, ex in enumerate(examples))
    _write_outputs({args.out: body})
    summary = {
        "examples": len(examples),
        "zero_visual": sum(ex.visual_index is None for ex in examples),
        "target_sets": {"+".join(k): v for k, v in sorted(_count(ex.targets for ex in examples).items())},
    }
    _write_manifest(args, args.out, [args.recipes, args.bank], [args.out], summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _count(items) -> dict:
    out: dict = {}
    for it in items:
        out[it] = out.get(it, 0) + 1
    return out


def _check_stage_order(stage: str, init_stage: Optional[str], allow: bool) -> None:
    k = promptkit.STAGES.index(stage)
    if k == 0:
        ok = init_stage is None
        expected = "no prior checkpoint"
    else:
        ok = init_stage in (promptkit.STAGES[k - 1], stage)
        expected = f"a checkpoint from {promptkit.STAGES[k - 1]} (or {stage} to continue it)"
    if not ok and not allow:
        got = "none" if init_stage is None else init_stage
        raise ConfigError(f"stage {stage} needs {expected}, got {got}; pass --allow-stage-order to override")


def cmd_train(args: argparse.Namespace) -> int:
    _require(args, "stage", "data", "recipes", "out")
    stage = promptkit.check_stage(args.stage)
    init_stage = None
    params = None
    if args.init:
        _read_file(args.init)
        params, meta = checkpoint.load_checkpoint(args.init)
        init_stage = meta["stage"]
    _check_stage_order(stage, init_stage, args.allow_stage_order)

    d_vis = params.d_vis if params is not None else args.d_vis
    recipes = _load_corpus(args.recipes, d_vis)
    records = _load_records(args.data)
    dialogs = [promptkit.parse_dialog(r["serialized"]) for r in records]
    if params is None:
        vocab = data.corpus_vocab(recipes.partition("train"), _load_bank(args.bank))
        params = model.init_model(vocab, args.d, d_vis, args.context, args.seed, args.d_hidden)
    oov = _check_vocab(params, [q for q, _ in dialogs] + [t for _, t in dialogs], args.max_oov)

    scale = _scale_config(args)
    try:
        config = train.TrainConfig(
            stage=stage, epochs=args.epochs, lr=args.lr, warmup_ratio=args.warmup_ratio,
            batch_size=args.batch_size, seed=args.seed, scale_config=scale if stage == "S3" else None,
            max_steps=args.max_steps,
        )
        encoded = data.encode_records(records, recipes.by_id(), params.vocab, params.d_vis, params.context)
    except VocabError as exc:
        raise DataError(str(exc)) from exc
    monitor = scale if args.monitor_scale and stage != "S3" else None
    trace_path = args.trace or f"{args.out}.trace.jsonl"
    try:
        trained, trace = train.train(params, encoded, config, monitor=monitor)
    except NumericalAbort as exc:
        if exc.trace is not None:
            exc.trace.write(trace_path)
        raise

    checkpoint.save_checkpoint(args.out, trained, stage, extra={"train_config": config.to_dict()})
    trace.write(trace_path)
    first, last = trace.records[0], trace.records[-1]
    summary = {
        "stage": stage,
        "steps": len(trace.records),
        "examples": len(encoded),
        "oov_rate": oov,
        "first_loss": first["l_final"],
        "final_loss": last["l_final"],
        "hashes": trained.hashes(),
    }
    _write_manifest(args, args.out, [args.data, args.recipes, args.init, args.bank], [args.out, trace_path], summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _eval_items(records: Sequence[dict], recipes: corpus.RecipeSet, d_vis: int, by_cuisine: bool) -> list[harness.EvalItem]:
    by_id = recipes.by_id()
    items = []
    for rec in records:
        query, target = promptkit.parse_dialog(rec["serialized"])
        recipe = by_id.get(rec.get("id"))
        if recipe is None:
            raise DataError(f"record {rec.get('index')}: unknown recipe id {rec.get('id')!r}")
        group = (recipe.cuisine or "unknown").casefold() if by_cuisine else "overall"
        items.append(harness.EvalItem(recipe.id, group, query, target, data.record_visual(rec, by_id, d_vis)))
    return items


def cmd_eval(args: argparse.Namespace) -> int:
    _require(args, "checkpoint", "data", "recipes", "out_prefix")
    _read_file(args.checkpoint)
    params, meta = checkpoint.load_checkpoint(args.checkpoint)
    recipes = _load_corpus(args.recipes, params.d_vis)
    records = _load_records(args.data)
    items = _eval_items(records, recipes, params.d_vis, args.cuisines)
    _check_vocab(params, [i.query for i in items] + [i.target for i in items], args.max_oov)
    try:
        preds = harness.predict(params, items, args.max_len, oracle=args.oracle)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    rows = harness.report_rows(preds, by_group=args.cuisines)
    outputs = _report_outputs(args.out_prefix, rows, "Cuisine" if args.cuisines else "Split")
    outputs[f"{args.out_prefix}.predictions.jsonl"] = _predictions_jsonl(preds)
    _write_outputs(outputs)
    summary = {"rows": [name for name, _ in rows], "examples": len(preds), "checkpoint_stage": meta["stage"]}
    _write_manifest(args, f"{args.out_prefix}.json", [args.checkpoint, args.data, args.recipes], list(outputs), summary)
    sys.stdout.write(metrics.format_markdown(rows, label="Cuisine" if args.cuisines else "Split"))
    return 0


def parse_masks(spec: str) -> list[frozenset[str]]:
    """``"image,title+ingredients"`` -> unique masks in first-seen order."""
    masks: list[frozenset[str]] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        mask = frozenset(p.strip() for p in part.split("+"))
        unknown = mask - set(promptkit.INPUTS)
        if unknown or "" in mask:
            raise ConfigError(f"mask {part!r}: inputs must be drawn from {promptkit.INPUTS}")
        if mask not in masks:
            masks.append(mask)
    if not masks:
        raise ConfigError("the mask set is empty")
    return masks


def mask_name(mask: frozenset[str]) -> str:
    return "+".join(i for i in promptkit.INPUTS if i in mask)


def cmd_ablate_inputs(args: argparse.Namespace) -> int:
    _require(args, "checkpoint", "recipes", "out_prefix")
    masks = parse_masks(args.masks)
    _read_file(args.checkpoint)
    params, meta = checkpoint.load_checkpoint(args.checkpoint)
    bank = _load_bank(args.bank)
    recipes = _load_corpus(args.recipes, params.d_vis)
    if args.partition != "all":
        recipes = recipes.partition(args.partition)
    if not len(recipes):
        raise DataError(f"partition {args.partition!r} is empty")

    rows: list[tuple[str, Optional[metrics.MetricReport]]] = []
    all_preds: list[harness.Prediction] = []
    for mask in masks:
        name = mask_name(mask)
        templates = [t for t in bank if t.targets == ("instructions",) and t.required_inputs == mask]
        if not templates:
            log.warning("mask %s: no compatible template; row marked unavailable", name)
            rows.append((name, None))
            continue
        rng = np.random.default_rng(args.seed)
        items = []
        for recipe in recipes:
            tpl = templates[int(rng.integers(len(templates)))]
            # S1 sampling semantics: full ingredient lists, no dropout
            ex = promptkit.instantiate(promptkit.TaskSample(tpl, tpl.targets, mask, "S1"), recipe, params.d_vis, rng)
            items.append(harness.EvalItem(recipe.id, name, ex.query, ex.target, ex.visual))
        _check_vocab(params, [i.query for i in items] + [i.target for i in items], args.max_oov)
        preds = harness.predict(params, items, args.max_len)
        all_preds.extend(preds)
        rows.append((name, harness.score(preds)))

    outputs = _report_outputs(args.out_prefix, rows, "Inputs")
    outputs[f"{args.out_prefix}.predictions.jsonl"] = _predictions_jsonl(all_preds)
    _write_outputs(outputs)
    summary = {"rows": [n for n, _ in rows], "unavailable": [n for n, r in rows if r is None],
               "checkpoint_stage": meta["stage"]}
    _write_manifest(args, f"{args.out_prefix}.json", [args.checkpoint, args.recipes, args.bank], list(outputs), summary)
    sys.stdout.write(metrics.format_markdown(rows, label="Inputs"))
    return 0


def cmd_oracle_check(args: argparse.Namespace) -> int:
    results = oracles.run_all(seed=args.seed, count=args.count)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} oracle checks passed")
    return 3 if failed else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags override its values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="recipe-forge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a deterministic synthetic corpus")
    _common(p)
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--d-vis", type=int, default=DEFAULT_D_VIS)
    p.add_argument("--image-frac", type=float, default=0.7)
    p.add_argument("--out-recipes")
    p.add_argument("--out-visual")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate recipes and join the visual sidecar")
    _common(p)
    p.add_argument("--recipes")
    p.add_argument("--visual")
    p.add_argument("--d-vis", type=int, default=DEFAULT_D_VIS)
    p.add_argument("--out")
    p.add_argument("--rejections")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-data", help="sample prompts and serialize dialog records")
    _common(p)
    p.add_argument("--stage", choices=promptkit.STAGES)
    p.add_argument("--recipes")
    p.add_argument("--bank")
    p.add_argument("--d-vis", type=int, default=DEFAULT_D_VIS)
    p.add_argument("--partition", default="train", choices=corpus.PARTITIONS + ("all",))
    p.add_argument("--per-recipe", type=int, default=1)
    p.add_argument("--max-dropout", type=float, default=promptkit.DEFAULT_MAX_DROPOUT)
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("train", help="train one stage of the toy model")
    _common(p)
    p.add_argument("--stage", choices=promptkit.STAGES)
    p.add_argument("--data")
    p.add_argument("--recipes")
    p.add_argument("--bank", help="prompt bank used to build the vocabulary at S0")
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--out")
    p.add_argument("--trace")
    p.add_argument("--allow-stage-order", action="store_true")
    p.add_argument("--d-vis", type=int, default=DEFAULT_D_VIS)
    p.add_argument("--d", type=int, default=model.MAX_D)
    p.add_argument("--d-hidden", type=int)
    p.add_argument("--context", type=int, default=model.MAX_CONTEXT)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--warmup-ratio", type=float, default=0.03)
    p.add_argument("--scale-mode", choices=sorted(SCALE_MODES), default="paper-literal")
    p.add_argument("--lambda-bleu", type=float, default=DEFAULT_LAMBDA_BLEU)
    p.add_argument("--lambda-rouge", type=float, default=DEFAULT_LAMBDA_ROUGE)
    p.add_argument("--monitor-scale", action="store_true", help="log the metric scale at S0-S2 without applying it")
    p.add_argument("--max-oov", type=float, default=DEFAULT_MAX_OOV)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy-decode and score a checkpoint")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--recipes")
    p.add_argument("--out-prefix")
    p.add_argument("--cuisines", action="store_true", help="one row per cuisine plus overall")
    p.add_argument("--oracle", action="store_true", help="score the references against themselves")
    p.add_argument("--max-len", type=int, default=harness.DEFAULT_MAX_LEN)
    p.add_argument("--max-oov", type=float, default=DEFAULT_MAX_OOV)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-inputs", help="evaluate per input mask")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--recipes")
    p.add_argument("--bank")
    p.add_argument("--partition", default="test", choices=corpus.PARTITIONS + ("all",))
    p.add_argument("--masks", default=DEFAULT_MASKS, help="comma-separated masks, inputs joined by '+'")
    p.add_argument("--out-prefix")
    p.add_argument("--max-len", type=int, default=harness.DEFAULT_MAX_LEN)
    p.add_argument("--max-oov", type=float, default=DEFAULT_MAX_OOV)
    p.set_defaults(func=cmd_ablate_inputs)

    p = sub.add_parser("oracle-check", help="run the metric oracles")
    _common(p)
    p.add_argument("--count", type=int, default=60)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def load_config(path: str, command: str, allowed: set[str]) -> dict:
    _read_file(path)
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from exc
    if not isinstance(cfg, dict) or cfg.get("config_version") != CONFIG_VERSION:
        raise ConfigError(f"{path}: expected an object with config_version {CONFIG_VERSION}")
    if cfg.get("command", command) != command:
        raise ConfigError(f"{path}: config is for {cfg['command']!r}, not {command!r}")
    values = {k.replace("-", "_"): v for k, v in cfg.items() if k not in ("config_version", "command")}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown option(s) {unknown}")
    return values


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        allowed = {a.dest for a in subparser._actions} - {"help", "config"}
        subparser.set_defaults(**load_config(args.config, args.command, allowed))
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
