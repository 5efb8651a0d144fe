"""File-level pipeline stages shared by the CLI and the acceptance harness.

Each stage reads its inputs from disk, writes its artifacts, and records a
manifest entry (config, seed, input/output hashes, timings) in ``run.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import curriculum as cur
from .config import DEFAULTS, merge
from .detector import DetectorModel, TrainConfig, TrainingError, attack_probability, detect, train
from .difficulty import COMPONENTS, MeasurerConfig, Scores, score_episode, spearman_table
from .dtm import TimedAutomaton, label_episode, learn_offline
from .metrics import DriftConfig, complexity, detection_report, utt
from .synth import PlantConfig, default_scripts, dump_scripts, inject_attacks, load_scripts, simulate
from .timeseries import Episode, IngestionError, Label, dump_schema, load_csv, load_schema, write_csv

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """An error with a category the CLI maps to an exit code."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise PipelineError("missing-artifact", f"{what} not found at {p}; run the upstream subcommand first")
    return p


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def record(out_dir, command: str, config: dict, seed, inputs, outputs, started: float, extra=None) -> dict:
    """Merge one stage's entry into ``out_dir/run.json``."""
    out_dir = Path(out_dir)
    path = out_dir / "run.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    entry = {
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
        "timing": {"start": started, "end": time.time(), "seconds": time.time() - started},
    }
    if extra:
        entry.update(extra)
    manifest[command] = entry
    write_json(path, manifest)
    return entry


def _episode(schema_path, data_path) -> Episode:
    schema = load_schema(require(schema_path, "schema"))
    try:
        return load_csv(require(data_path, "data"), schema)
    except IngestionError as exc:
        raise PipelineError("data-error", str(exc)) from exc


# ---------------------------------------------------------------------------
# stages


def run_synth(out_dir, seed: int, cfg: dict | None = None) -> dict:
    cfg = merge(DEFAULTS, cfg or {})
    sc = cfg["synth"]
    started = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(sc["ticks"])
    plant_kw = {k: v for k, v in sc.items() if k in PlantConfig.__dataclass_fields__}
    plant_tr = PlantConfig.from_mapping({**plant_kw, "seed": seed})
    plant_te = PlantConfig.from_mapping({**plant_kw, "seed": seed + int(sc["test_seed_offset"])})
    n_att, dur = int(sc["attacks"]), int(sc["duration"])
    scripts = {
        "train": default_scripts(plant_tr, n, n_att, dur, seed=seed),
        "test": default_scripts(plant_te, n, n_att, dur, seed=plant_te.seed),
    }
    normal = simulate(plant_tr, n)
    train_ep = inject_attacks(normal, scripts["train"])
    test_ep = inject_attacks(simulate(plant_te, n), scripts["test"])
    paths = {
        "schema": out / "schema.toml",
        "normal": out / "normal.csv",
        "train": out / "train.csv",
        "test": out / "test.csv",
        "attacks": out / "attacks.toml",
    }
    dump_schema(normal.schema, paths["schema"])
    write_csv(normal, paths["normal"])
    write_csv(train_ep, paths["train"])
    write_csv(test_ep, paths["test"])
    dump_scripts(scripts, paths["attacks"])
    record(out, "synth", {"synth": sc}, seed, [], list(paths.values()), started)
    return paths


def run_learn_dtm(out_dir, schema_path, data_path) -> Path:
    started = time.time()
    ep = _episode(schema_path, data_path)
    a = learn_offline(ep)
    path = Path(out_dir) / "automaton.json"
    a.save(path)
    record(out_dir, "learn-dtm", {}, None, [schema_path, data_path], [path], started, {"nodes": len(a.nodes)})
    return path


def run_score(out_dir, schema_path, data_path, automaton_path, cfg: dict | None = None) -> tuple[Path, Path]:
    cfg = merge(DEFAULTS, cfg or {})
    started = time.time()
    ep = _episode(schema_path, data_path)
    automaton = TimedAutomaton.load(require(automaton_path, "automaton"))
    if automaton.schema != ep.schema:
        raise PipelineError("schema-mismatch", "automaton was learned on a different schema than the data")
    mcfg = MeasurerConfig.from_mapping({**cfg["score"], "tau_gt": cfg["dtm"]["tau_gt"]})
    variant = cfg["score"]["variant"]
    scores = score_episode(ep, automaton, mcfg, variant)
    # no curriculum: the whole set is one bucket from the first epoch
    k = 1 if variant == "none" else int(cfg["curriculum"]["buckets"])
    try:
        c = cur.build_curriculum(scores, k)
    except ValueError as exc:
        raise PipelineError("invalid-flags", str(exc)) from exc
    batches = cur.assign_batch_numbers(c, int(cfg["train"]["batch_size"]))
    scores.batch_number = batches
    out = Path(out_dir)
    scores_path, cur_path = out / "scores.csv", out / "curriculum.json"
    write_scores(scores, ep, scores_path)
    write_json(
        cur_path,
        {
            "variant": scores.variant,
            "k": k,
            "buckets": [b.tolist() for b in c.buckets],
            "scores": c.scores.tolist(),
        },
    )
    record(out, "score", {"score": cfg["score"], "curriculum": cfg["curriculum"]}, None,
           [schema_path, data_path, automaton_path], [scores_path, cur_path], started)
    return scores_path, cur_path


def write_scores(scores: Scores, ep: Episode, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "timestamp", *COMPONENTS, "batch_number"])
        for i in range(len(scores)):
            w.writerow(
                [i, repr(float(ep.timestamps[i]))]
                + [repr(float(getattr(scores, c)[i])) for c in COMPONENTS]
                + [int(scores.batch_number[i])]
            )


def read_scores(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows]) for c in COMPONENTS}


def load_curriculum(path) -> cur.Curriculum:
    doc = json.loads(require(path, "curriculum").read_text())
    buckets = tuple(np.array(b, dtype=np.int64) for b in doc["buckets"])
    return cur.Curriculum(buckets, np.concatenate(buckets), np.array(doc["scores"], dtype=np.float64))


def _curriculum_variant(path) -> str:
    return json.loads(require(path, "curriculum").read_text())["variant"]


def run_train(out_dir, schema_path, data_path, curriculum_path, automaton_path, seed: int, cfg: dict | None = None):
    cfg = merge(DEFAULTS, cfg or {})
    started = time.time()
    ep = _episode(schema_path, data_path)
    c = load_curriculum(curriculum_path)
    variant = cfg["train"].get("variant")
    if variant is not None and variant != _curriculum_variant(curriculum_path):
        if automaton_path is None:
            raise PipelineError("invalid-flags", "train --variant differing from the curriculum needs --automaton to rescore")
        _, curriculum_path = run_score(out_dir, schema_path, data_path, automaton_path,
                                       merge(cfg, {"score": {"variant": variant}}))
        c = load_curriculum(curriculum_path)
    if len(c) != len(ep):
        raise PipelineError("schema-mismatch", f"curriculum covers {len(c)} samples but the data has {len(ep)}")
    if ep.labeled:
        labels = ep.labels
    else:
        automaton = TimedAutomaton.load(require(automaton_path, "automaton"))
        labels = label_episode(automaton, ep, cfg["dtm"]["tau_gt"])
    cc = cfg["curriculum"]
    state = cur.new_scheduler(c, int(cc["patience"]), float(cc["delta"]), seed, int(cc["max_epochs_per_stage"]))
    tcfg = TrainConfig.from_mapping({**cfg["train"], "seed": seed, "tau": cfg["detect"]["tau"]})
    t0 = time.perf_counter()
    try:
        model, trace = train(ep, labels, c, state, tcfg)
    except TrainingError as exc:
        raise PipelineError("training-error", str(exc)) from exc
    tt = time.perf_counter() - t0
    out = Path(out_dir)
    model_path, trace_path = out / "model.json", out / "trace.jsonl"
    model.save(model_path)
    with open(trace_path, "w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    record(out, "train", {"train": cfg["train"], "curriculum": cc}, seed,
           [schema_path, data_path, curriculum_path], [model_path, trace_path], started,
           {"tt": tt, "epochs": len(trace), "finished": cur.is_finished(state), "exhausted": state.exhausted})
    return model_path, trace_path, tt


def run_detect(out_dir, schema_path, data_path, model_path, tau: float | None = None) -> Path:
    started = time.time()
    ep = _episode(schema_path, data_path)
    model = DetectorModel.load(require(model_path, "model"))
    if model.schema != ep.schema:
        raise PipelineError("schema-mismatch", "model was trained on a different schema than the data")
    tau = model.config.detect_threshold if tau is None else tau
    prob = attack_probability(ep, model)
    pred = detect(ep, model, tau)
    path = Path(out_dir) / "predictions.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "timestamp", "p_attack", "label"])
        for i in range(len(ep)):
            w.writerow([i, repr(float(ep.timestamps[i])), repr(float(prob[i])), int(pred[i])])
    record(out_dir, "detect", {"tau": tau}, None, [schema_path, data_path, model_path], [path], started)
    return path


def read_predictions(path) -> np.ndarray:
    with open(require(path, "predictions"), newline="") as fh:
        return np.array([int(r["label"]) for r in csv.DictReader(fh)], dtype=np.int8)


def run_eval(out_dir, schema_path, data_path, predictions_path, cfg: dict | None = None, train_run=None, scores_path=None, train_data=None):
    """Write the deterministic ``report.json`` and the wall-clock ``timing.json``."""
    cfg = merge(DEFAULTS, cfg or {})
    started = time.time()
    ep = _episode(schema_path, data_path)
    if not ep.labeled:
        raise PipelineError("data-error", "eval needs labeled data")
    pred = read_predictions(predictions_path)
    if len(pred) != len(ep):
        raise PipelineError("schema-mismatch", f"{len(pred)} predictions for {len(ep)} samples")
    report = detection_report(pred, ep.labels)
    ec = cfg["eval"]
    drift = DriftConfig(int(ec["drift_window"]), int(ec["drift_pairs"]), int(ec["drift_seed"]), ec["drift_mode"])
    breakdown = complexity(ep, drift_cfg=drift)
    report["complexity"] = breakdown.to_dict()
    if scores_path is not None:
        tr = _episode(schema_path, train_data) if train_data else None
        if tr is None or not tr.labeled:
            raise PipelineError("invalid-flags", "--scores needs --train-data with labels")
        cols = read_scores(require(scores_path, "scores"))
        sc = Scores(cols)
        report["spearman"] = spearman_table(sc, tr.labels)
    out = Path(out_dir)
    report_path = out / "report.json"
    write_json(report_path, report)
    outputs = [report_path]
    if train_run is not None:
        manifest = json.loads(require(train_run, "training manifest").read_text())
        tt = float(manifest["train"]["tt"])
        timing = {"tt": tt, "S": breakdown.total, "utt": utt(tt, breakdown.total)}
        timing_path = out / "timing.json"
        write_json(timing_path, timing)
        outputs.append(timing_path)
    record(out, "eval", {"eval": ec}, None, [schema_path, data_path, predictions_path], outputs, started)
    return report


def run_all(out_dir, seed: int, cfg: dict | None = None) -> dict:
    """synth -> learn-dtm -> score -> train -> detect -> eval for one seed."""
    cfg = merge(DEFAULTS, cfg or {})
    out = Path(out_dir)
    paths = run_synth(out, seed, cfg)
    a = run_learn_dtm(out, paths["schema"], paths["normal"])
    scores_path, cur_path = run_score(out, paths["schema"], paths["train"], a, cfg)
    model_path, _, _ = run_train(out, paths["schema"], paths["train"], cur_path, a, seed, cfg)
    pred = run_detect(out, paths["schema"], paths["test"], model_path, cfg["detect"]["tau"])
    return run_eval(out, paths["schema"], paths["test"], pred, cfg, train_run=out / "run.json")


def compare_runs(a: list[dict], b: list[dict], metrics=None) -> list[dict]:
    from .metrics import compare_samples

    if not a or not b:
        raise PipelineError("data-error", "compare needs two non-empty run arrays")
    if metrics is None:
        metrics = [k for k, v in a[0].items() if isinstance(v, (int, float)) and all(k in r for r in a + b)]
    rows = []
    for m in metrics:
        res = compare_samples([float(r[m]) for r in a], [float(r[m]) for r in b])
        rows.append({"metric": m, "U": res.u_statistic, "p": res.p_value, "A12": res.a12})
    return rows
