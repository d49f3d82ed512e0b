"""Command line entry point.

Subcommands wire scene generation, dataset synthesis, training, placement,
and evaluation into reproducible runs.  Every command takes one --seed (all
sub-streams derive from it), emits exactly one run manifest next to its
outputs, prints a single JSON result object to stdout, and logs to stderr.
Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from . import evaluation as ev
from . import features as ft
from . import scene as sc
from . import simnet
from . import solver
from . import trainer
from .errors import EmptyInput, ParseError, SemplaceError, UsageError, exit_code_for
from .seeding import stable_rng, stable_seed

log = logging.getLogger("semplace")

# Default object mix for generated scenes; pair members get small tweaks.
DEFAULT_COUNTS = {
    sc.ObjectCategory.SOFA: 1,
    sc.ObjectCategory.CHAIR: 2,
    sc.ObjectCategory.TABLE: 1,
    sc.ObjectCategory.TV: 1,
    sc.ObjectCategory.LAMP: 1,
    sc.ObjectCategory.CABINET: 1,
    sc.ObjectCategory.WINDOW: 1,
}
OPTIONAL_CATEGORIES = (
    sc.ObjectCategory.SHELF,
    sc.ObjectCategory.SINK,
    sc.ObjectCategory.REFRIGERATOR,
    sc.ObjectCategory.PIANO,
    sc.ObjectCategory.AIR_CONDITIONER,
)


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: list[Path],
                    seed: int, outputs: list[Path], name: str = "manifest.json") -> Path:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _hash_file(p) for p in inputs},
        "seed": seed,
        "artifact_version": __version__,
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _sanitize(value):
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _emit(result: dict):
    print(json.dumps(_sanitize(result), sort_keys=True))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"config file {path} must hold a JSON object")
    return doc


def _feature_config(config: dict) -> ft.FeatureConfig:
    try:
        return ft.FeatureConfig(**config.get("feature", {}))
    except TypeError as exc:
        raise UsageError(f"bad feature config: {exc}") from exc


def _parse_placement(text: str) -> sc.Placement:
    """X,Y,H with the heading in degrees."""
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"expected X,Y,HEADING_DEG, got {text!r}")
    try:
        x, y, hdg = (float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"bad placement {text!r}: {exc}") from exc
    return sc.Placement(np.array([x, y]), np.radians(hdg))


def _load_scene_dir(path: str) -> dict[str, sc.Scene]:
    scene_dir = Path(path)
    if not scene_dir.is_dir():
        raise ParseError(f"scene directory {path!r} does not exist")
    scenes = {}
    for f in sorted(scene_dir.glob("*.json")):
        if f.name in ("pairs.json", "manifest.json") or f.name.endswith(".manifest.json"):
            continue
        scene = sc.load_scene(f.read_bytes())
        scenes[scene.id] = scene
    return scenes


def _scene_pairs(scenes: dict[str, sc.Scene], scene_dir: str) -> list[tuple[sc.Scene, sc.Scene]]:
    pairs_file = Path(scene_dir) / "pairs.json"
    if pairs_file.exists():
        doc = json.loads(pairs_file.read_text())
        out = []
        for entry in doc["pairs"]:
            a, b = entry["scene_a"], entry["scene_b"]
            if a not in scenes or b not in scenes:
                raise ParseError(f"pairs.json references unknown scene {a!r} or {b!r}")
            out.append((scenes[a], scenes[b]))
        return out
    ordered = [scenes[k] for k in sorted(scenes)]
    if len(ordered) < 2:
        raise ParseError("need at least two scenes to form a pair")
    return [(ordered[i], ordered[i + 1]) for i in range(0, len(ordered) - 1, 2)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_scenes(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    width, height = args.floor
    pairs = []
    outputs = []
    for i in range(args.pairs):
        for side in ("a", "b"):
            rng = stable_rng(args.seed, "scene", i, side)
            counts = dict(DEFAULT_COUNTS)
            for cat in OPTIONAL_CATEGORIES:
                if rng.uniform() < 0.4:
                    counts[cat] = 1
            if side == "b" and rng.uniform() < 0.5:
                counts[sc.ObjectCategory.CHAIR] = max(1, counts[sc.ObjectCategory.CHAIR] - 1)
            spec = sc.SceneSpec(floor_width=width, floor_height=height, counts=counts)
            scene = sc.generate_synthetic_scene(stable_seed(args.seed, "gen", i, side), spec)
            scene.id = f"pair{i:02d}{side}"
            path = out_dir / f"{scene.id}.json"
            path.write_bytes(sc.serialize_scene(scene))
            outputs.append(path)
        pairs.append(
            {"pair_id": f"pair{i:02d}", "scene_a": f"pair{i:02d}a", "scene_b": f"pair{i:02d}b"}
        )
    pairs_path = out_dir / "pairs.json"
    pairs_path.write_text(json.dumps({"pairs": pairs}, indent=1) + "\n")
    outputs.append(pairs_path)
    _write_manifest(
        out_dir, "gen-scenes",
        {"pairs": args.pairs, "floor": list(args.floor)},
        [], args.seed, outputs,
    )
    _emit({"scenes": [str(p) for p in outputs[:-1]], "pairs_file": str(pairs_path)})
    return 0


def cmd_gen_dataset(args) -> int:
    config = _load_config_file(args.config)
    feature_cfg = _feature_config(config)
    neg_cfg = ds.NegativeSamplingConfig(**config.get("negatives", {}))
    scenes = _load_scene_dir(args.scenes)
    inputs = [
        p for p in sorted(Path(args.scenes).glob("*.json"))
        if "manifest" not in p.name
    ]

    if args.survey:
        survey_path = Path(args.survey)
        questions = ds.load_survey(survey_path.read_bytes(), scenes)
        inputs.append(survey_path)
        log.info("loaded %d survey questions", len(questions))
    else:
        pairs = _scene_pairs(scenes, args.scenes)
        questions = ds.synthesize_survey(
            pairs, args.questions_per_pair, stable_seed(args.seed, "survey"), feature_cfg
        )
        log.info("synthesized %d questions over %d pairs", len(questions), len(pairs))

    triplets: list[ds.TripletSample] = []
    for qi, question in enumerate(questions):
        negatives = ds.sample_negatives(
            question, neg_cfg, stable_seed(args.seed, "negatives", question.id), feature_cfg
        )
        triplets.extend(ds.build_triplets(question, negatives, feature_cfg))
        log.info("question %s: %d triplets so far", question.id, len(triplets))

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(ds.save_triplets(triplets, feature_cfg))
    outputs = [out_path]

    survey_out = Path(args.survey_out) if args.survey_out else out_path.with_suffix(".survey.json")
    survey_out.write_bytes(ds.save_survey(questions))
    outputs.append(survey_out)

    _write_manifest(
        out_path.parent, "gen-dataset",
        {"feature": asdict(feature_cfg), "negatives": asdict(neg_cfg),
         "questions_per_pair": args.questions_per_pair},
        inputs, args.seed, outputs, name=out_path.name + ".manifest.json",
    )
    _emit({"triplets": len(triplets), "questions": len(questions),
           "data": str(out_path), "survey": str(survey_out)})
    return 0


def cmd_train(args) -> int:
    config = _load_config_file(args.config)
    data_path = Path(args.data)
    try:
        triplets, feature_cfg = ds.load_triplets(data_path.read_bytes())
    except OSError as exc:
        raise ParseError(f"cannot read {args.data}: {exc}") from exc
    if not triplets:
        raise EmptyInput("triplet file holds no samples")

    train_kwargs = dict(config.get("train", {}))
    for key, flag in (("learning_rate", args.lr), ("batch_size", args.batch_size),
                      ("epochs", args.epochs), ("optimizer", args.optimizer)):
        if flag is not None:
            train_kwargs[key] = flag
    train_kwargs["seed"] = stable_seed(args.seed, "train")
    try:
        cfg = trainer.TrainConfig(**train_kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad train config: {exc}") from exc

    pair_ids = sorted({t.pair_id for t in triplets})
    split = None
    train_set, val_set = triplets, None
    if args.holdout_pairs and len(pair_ids) >= 2:
        split = trainer.split_by_pairs(triplets, stable_seed(args.seed, "split"))
        train_set = [t for t in triplets if t.pair_id in set(split.train_pairs)]
        val_set = [t for t in triplets if t.pair_id in set(split.test_pairs)]
        log.info("split: %d train / %d test triplets", len(train_set), len(val_set))
    if args.subsample_triplets:
        train_set = trainer.subsample_triplets(
            train_set, args.subsample_triplets, stable_seed(args.seed, "subsample")
        )

    model = simnet.init_model(args.variant, stable_seed(args.seed, "init"), feature_cfg)
    model, history = trainer.train(model, train_set, cfg, val=val_set)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(simnet.save_model(model))
    outputs = [out_path]

    history_path = out_path.with_suffix(".history.csv")
    lines = ["epoch,phi,psi,total,train_acc,test_acc"]
    for row in history:
        lines.append(
            f"{row['epoch']},{row['phi']!r},{row['psi']!r},{row['total']!r},"
            f"{row['train_acc']!r},{row['test_acc']!r}"
        )
    history_path.write_text("\n".join(lines) + "\n")
    outputs.append(history_path)

    split_path = out_path.with_suffix(".split.json")
    split_doc = {"train_pairs": split.train_pairs, "test_pairs": split.test_pairs} if split else {
        "train_pairs": pair_ids, "test_pairs": []}
    split_path.write_text(json.dumps(split_doc, indent=1, sort_keys=True) + "\n")
    outputs.append(split_path)

    _write_manifest(
        out_path.parent, "train",
        {"variant": model.variant, "train": asdict(cfg), "feature": asdict(feature_cfg),
         "holdout_pairs": bool(args.holdout_pairs)},
        [data_path], args.seed, outputs, name=out_path.name + ".manifest.json",
    )
    final = history[-1] if history else {}
    _emit({"model": str(out_path), "epochs": len(history),
           "train_acc": final.get("train_acc"), "test_acc": final.get("test_acc"),
           "history": str(history_path), "split": str(split_path)})
    return 0


def cmd_place(args) -> int:
    model = simnet.load_model(Path(args.model).read_bytes())
    scene_a = sc.load_scene(Path(args.scene_a).read_bytes())
    scene_b = sc.load_scene(Path(args.scene_b).read_bytes())
    query = solver.PlacementQuery(
        scene_a=scene_a,
        scene_b=scene_b,
        p_x=_parse_placement(args.px),
        p_y_prime=_parse_placement(args.pyprime),
        p_y=_parse_placement(args.py),
        model=model,
    )
    grid = solver.GridSpec()
    pso = solver.PSOConfig(seed=stable_seed(args.seed, "pso"))
    result = solver.place_avatar(query, grid, pso, threads=args.threads)
    doc = result.to_dict()
    outputs = []
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        result_path = out_dir / "placement.json"
        stable = {k: v for k, v in doc.items() if k != "timings_ms"}
        result_path.write_text(json.dumps(stable, indent=1, sort_keys=True) + "\n")
        outputs.append(result_path)
        _write_manifest(
            out_dir, "place",
            {"grid": asdict(grid), "pso": asdict(pso), "threads": args.threads},
            [Path(args.model), Path(args.scene_a), Path(args.scene_b)],
            args.seed, outputs,
        )
    _emit(doc)
    return 0


def cmd_eval(args) -> int:
    model = simnet.load_model(Path(args.model).read_bytes())
    scenes = _load_scene_dir(args.scenes)
    survey_path = Path(args.survey)
    questions = ds.load_survey(survey_path.read_bytes(), scenes)
    if not questions:
        raise EmptyInput("survey holds no questions")
    grid = solver.GridSpec()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    tables: dict[str, solver.FeatureTable] = {}
    for question in questions:
        key = question.scene_b.id
        if key not in tables:
            tables[key] = solver.precompute_scene_features(
                question.scene_b, grid, model.feature_config
            )
        records.extend(ev.rank_positives(model, question, grid, table=tables[key]))
        log.info("ranked question %s", question.id)

    ranks_path = out_dir / "ranks.csv"
    lines = ["question_id,positive_index,rank,total,percentile"]
    for r in records:
        lines.append(f"{r.question_id},{r.positive_index},{r.rank},{r.total},{r.percentile}")
    ranks_path.write_text("\n".join(lines) + "\n")

    curve = ev.cmc_curve(records)
    cmc_path = out_dir / "cmc.csv"
    cmc_path.write_text(
        "k,fraction\n" + "\n".join(f"{k},{float(curve[k - 1])!r}" for k in range(1, 101)) + "\n"
    )

    _write_manifest(
        out_dir, "eval", {"grid": asdict(grid)},
        [Path(args.model), survey_path], args.seed, [ranks_path, cmc_path],
    )
    _emit({"questions": len(questions), "records": len(records),
           "mean_percentile": float(np.mean([r.percentile for r in records])),
           "ranks": str(ranks_path), "cmc": str(cmc_path)})
    return 0


def cmd_heatmap(args) -> int:
    model = simnet.load_model(Path(args.model).read_bytes())
    scenes = _load_scene_dir(args.scenes)
    survey_path = Path(args.survey)
    questions = ds.load_survey(survey_path.read_bytes(), scenes)
    by_id = {q.id: q for q in questions}
    if args.question not in by_id:
        raise UsageError(f"question {args.question!r} not in survey (have {sorted(by_id)[:10]}...)")
    question = by_id[args.question]

    _, image, csv_text = ev.export_heatmap(model, question)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    ppm_path = prefix.with_suffix(".ppm")
    csv_path = prefix.with_suffix(".csv")
    ppm_path.write_bytes(image)
    csv_path.write_text(csv_text)
    _write_manifest(
        prefix.parent, "heatmap", {"question": args.question},
        [Path(args.model), survey_path], args.seed, [ppm_path, csv_path],
        name=prefix.name + ".manifest.json",
    )
    _emit({"ppm": str(ppm_path), "csv": str(csv_path)})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _floor_type(text: str) -> tuple[float, float]:
    try:
        w, h = (float(p) for p in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected W,H: {exc}")
    return w, h


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semplace", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate paired synthetic scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--floor", type=_floor_type, default=(6.0, 6.0))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("gen-dataset", help="build a triplet training file")
    p.add_argument("--scenes", required=True)
    p.add_argument("--survey", default=None, help="ingest this survey instead of synthesizing")
    p.add_argument("--questions-per-pair", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--survey-out", default=None)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="train a similarity model")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", default="proposed_sfpm_dfn",
                   choices=sorted(simnet.VARIANTS) + sorted(simnet.VARIANT_ALIASES))
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--optimizer", choices=trainer.OPTIMIZERS, default=None)
    p.add_argument("--holdout-pairs", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--subsample-triplets", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("place", help="retarget one placement")
    p.add_argument("--model", required=True)
    p.add_argument("--scene-a", required=True)
    p.add_argument("--scene-b", required=True)
    p.add_argument("--px", required=True, help="person X in scene A: X,Y,HEADING_DEG")
    p.add_argument("--py", required=True, help="person Y in scene B: X,Y,HEADING_DEG")
    p.add_argument("--pyprime", required=True, help="avatar Y' in scene A: X,Y,HEADING_DEG")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("eval", help="rank survey positives and emit CMC data")
    p.add_argument("--model", required=True)
    p.add_argument("--survey", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="export a dissimilarity heatmap")
    p.add_argument("--model", required=True)
    p.add_argument("--survey", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SemplaceError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
