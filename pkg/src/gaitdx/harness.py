"""Subject-level splitting, evaluation and end-to-end experiment runs."""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable

import numpy as np

from . import pgm
from .classifier import (
    EnsembleModel,
    SvmModel,
    TrainConfig,
    majority,
    predict_many,
    svm_predict,
    train_model,
    train_svm,
)
from .features import feature_vector
from .neuralnet import load_weights, save_weights
from .preprocess import CaseBundle, GrayscaleImage, ImageKind, build_case
from .recording import Foot, Label, Recording, SynthConfig, iter_synthetic_subjects, load_manifest_pairs

log = logging.getLogger(__name__)

MODEL_NAMES = ("max", "sum", "average")
REPORT_MODELS = ("svm", "max", "sum", "average", "voting")


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


# ---------------------------------------------------------------------------
# splitting


@dataclass
class Split:
    train_cases: list[CaseBundle]
    test_cases: list[CaseBundle]
    train_subjects: set[str]
    test_subjects: set[str]

    def __post_init__(self):
        overlap = self.train_subjects & self.test_subjects
        if overlap:
            raise AssertionError(f"subjects on both sides of the split: {sorted(overlap)}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def subject_split(cases: list[CaseBundle], test_fraction: float, seed: int) -> Split:
    """Stratified by label, sampled per subject; all of a subject's cases move together."""
    if not 0.0 <= test_fraction <= 1.0:
        raise ValueError("test_fraction must lie in [0, 1]")
    labels: dict[str, Label] = {}
    for c in cases:
        if c.label is Label.UNKNOWN:
            raise ValueError(f"case {c.subject_id}/{c.case_id} is unlabeled")
        if labels.setdefault(c.subject_id, c.label) is not c.label:
            raise ValueError(f"subject {c.subject_id} has cases with different labels")
    rng = np.random.Generator(np.random.PCG64(seed))
    test_subjects: set[str] = set()
    for label in (Label.NEGATIVE, Label.POSITIVE):
        group = sorted(s for s, lab in labels.items() if lab is label)
        if len(group) < 2:
            raise ValueError(f"need at least 2 {label.value} subjects to stratify, found {len(group)}")
        n_test = _round_half_up(len(group) * test_fraction)
        test_subjects.update(group[i] for i in rng.permutation(len(group))[:n_test])
    train_subjects = set(labels) - test_subjects
    return Split(
        [c for c in cases if c.subject_id in train_subjects],
        [c for c in cases if c.subject_id in test_subjects],
        train_subjects,
        test_subjects,
    )


# ---------------------------------------------------------------------------
# evaluation


def confusion_matrix(truth: Iterable[Label], predicted: Iterable[Label]) -> list[list[int]]:
    """Rows: true Negative/Positive; columns: predicted Negative/Positive."""
    m = [[0, 0], [0, 0]]
    for t, p in zip(truth, predicted):
        m[int(t is Label.POSITIVE)][int(p is Label.POSITIVE)] += 1
    return m


def accuracy_from_confusion(m: list[list[int]]) -> float:
    total = sum(map(sum, m))
    return (m[0][0] + m[1][1]) / total if total else 0.0


@dataclass
class EvalReport:
    accuracies: dict[str, float]
    confusion: dict[str, list[list[int]]]
    case_count: int
    seed: int
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "accuracy": dict(self.accuracies),
            "confusion": {k: [list(r) for r in v] for k, v in self.confusion.items()},
            "case_count": self.case_count,
            "seed": self.seed,
            "config": self.config,
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return dumps_stable(self.to_dict()) + "\n"


def evaluate_predictions(
    truth: list[Label], predictions: dict[str, list[Label]], seed: int = 0, config: dict | None = None
) -> EvalReport:
    if not truth:
        raise ValueError("empty test set")
    confusion = {name: confusion_matrix(truth, preds) for name, preds in predictions.items()}
    accuracies = {name: accuracy_from_confusion(m) for name, m in confusion.items()}
    return EvalReport(accuracies, confusion, len(truth), seed, config or {})


def evaluate(
    ensemble: EnsembleModel, svm: SvmModel | None, split: Split, seed: int = 0, config: dict | None = None
) -> EvalReport:
    cases = split.test_cases
    if not cases:
        raise ValueError("empty test set")
    truth = [c.label for c in cases]
    preds: dict[str, list[Label]] = {}
    for kind in ImageKind:
        preds[kind.value] = predict_many(ensemble.model(kind), cases, kind)
    preds["voting"] = [majority(v) for v in zip(*(preds[k] for k in MODEL_NAMES))]
    if svm is not None:
        if any(c.features is None for c in cases):
            raise ValueError("SVM evaluation needs feature vectors on every test case")
        preds["svm"] = [svm_predict(svm, c.features) for c in cases]
    return evaluate_predictions(truth, preds, seed, config)


# ---------------------------------------------------------------------------
# stable JSON


def dumps_stable(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with sorted keys and every float written with 6 decimals."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_stable(v, indent, _level + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps_stable(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps_stable(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite number {obj!r} in report")
        return f"{float(obj):.6f}"
    return json.dumps(str(obj))


# ---------------------------------------------------------------------------
# case assembly and on-disk case directories


def assemble_case(
    left: Recording,
    right: Recording,
    case_id: str,
    side: int,
    critical_fraction: float,
    orient: bool,
    with_features: bool = True,
) -> CaseBundle:
    case = build_case(left, right, side, critical_fraction, orient, case_id)
    if with_features:
        case.features = feature_vector(left, right, critical_fraction)
    return case


def pgm_name(case: CaseBundle, kind: ImageKind, foot: Foot) -> str:
    return f"{case.subject_id}_{case.case_id}_{kind.value}_{foot.value}.pgm"


def write_case_dir(cases: list[CaseBundle], out_dir, meta: dict | None = None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for case in cases:
        images = {}
        for (kind, foot), img in sorted(case.images.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
            name = pgm_name(case, kind, foot)
            pgm.write_pgm(os.path.join(out_dir, name), img.pixels)
            images[f"{kind.value}_{foot.value}"] = name
        entry = {"subject_id": case.subject_id, "case_id": case.case_id, "label": case.label.value, "images": images}
        if case.features is not None:
            entry["features"] = [float(v) for v in case.features]
        entries.append(entry)
    manifest = {"side": cases[0].side if cases else None, "cases": entries}
    if meta:
        manifest.update(meta)
    with open(os.path.join(out_dir, "cases.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_case_dir(data_dir) -> list[CaseBundle]:
    with open(os.path.join(data_dir, "cases.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    cases = []
    for entry in manifest["cases"]:
        images = {}
        for key, name in entry["images"].items():
            kind, foot = key.rsplit("_", 1)
            images[(ImageKind(kind), Foot(foot))] = GrayscaleImage(pgm.read_pgm(os.path.join(data_dir, name)))
        features = np.asarray(entry["features"], dtype=np.float64) if "features" in entry else None
        cases.append(CaseBundle(entry["subject_id"], Label(entry["label"]), images, entry["case_id"], features))
    return cases


def read_case_images(case_dir, subject_id: str = "case", case_id: str = "") -> CaseBundle:
    """Load one case from a directory holding ``*_<kind>_<foot>.pgm`` files."""
    images = {}
    for kind in ImageKind:
        for foot in Foot:
            suffix = f"_{kind.value}_{foot.value}.pgm"
            hits = sorted(n for n in os.listdir(case_dir) if n.endswith(suffix))
            if len(hits) != 1:
                raise ValueError(f"expected exactly one '*{suffix}' in {case_dir}, found {len(hits)}")
            images[(kind, foot)] = GrayscaleImage(pgm.read_pgm(os.path.join(case_dir, hits[0])))
    return CaseBundle(subject_id, Label.UNKNOWN, images, case_id)


# ---------------------------------------------------------------------------
# configuration


def default_config() -> dict:
    text = resources.files("gaitdx").joinpath("data/default_experiment.json").read_text(encoding="utf-8")
    return json.loads(text)


_SCHEMA: dict[str, dict[str, tuple[type, ...]]] = {
    "data": {"source": (str,)},
    "preprocess": {"side": (int,), "critical_fraction": (float, int), "normalize_orientation": (bool,)},
    "split": {"test_fraction": (float, int), "seed": (int,)},
    "training": {
        "epochs": (int,),
        "batch_size": (int,),
        "learning_rate": (float, int),
        "momentum": (float, int),
        "seed": (int,),
    },
    "baseline": {"lambda": (float, int), "epochs": (int,), "seed": (int,)},
}
_SYNTH_FIELDS = {"subjects": (int,), "positive_fraction": (float, int), "walks": (int,), "seed": (int,)}


def _require(section: dict, name: str, key: str, types: tuple[type, ...]):
    if key not in section:
        raise ConfigError(f"missing field '{name}.{key}'")
    value = section[key]
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"field '{name}.{key}' must be {types[0].__name__}")
    if not isinstance(value, types):
        raise ConfigError(f"field '{name}.{key}' must be {types[0].__name__}, got {type(value).__name__}")
    return value


def validate_config(config: dict) -> dict:
    """Check required fields and types; returns a deep copy."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    cfg = copy.deepcopy(config)
    for name, fields in _SCHEMA.items():
        if name not in cfg or not isinstance(cfg[name], dict):
            raise ConfigError(f"missing field '{name}'")
        for key, types in fields.items():
            _require(cfg[name], name, key, types)
    source = cfg["data"]["source"]
    if source == "synthetic":
        for key, types in _SYNTH_FIELDS.items():
            _require(cfg["data"], "data", key, types)
    elif source == "directory":
        _require(cfg["data"], "data", "path", (str,))
    else:
        raise ConfigError(f"field 'data.source' must be 'synthetic' or 'directory', got {source!r}")
    models = cfg["training"].get("models", {})
    if not isinstance(models, dict) or set(models) - set(MODEL_NAMES):
        raise ConfigError(f"field 'training.models' may only override {list(MODEL_NAMES)}")
    if not 0 <= cfg["split"]["test_fraction"] <= 1:
        raise ConfigError("field 'split.test_fraction' must lie in [0, 1]")
    if "output_dir" in cfg and not isinstance(cfg["output_dir"], str):
        raise ConfigError("field 'output_dir' must be a string")
    return cfg


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def model_train_config(cfg: dict, name: str) -> TrainConfig:
    base = {k: cfg["training"][k] for k in _SCHEMA["training"]}
    base.update(cfg["training"].get("models", {}).get(name, {}))
    return TrainConfig(
        epochs=int(base["epochs"]),
        batch_size=int(base["batch_size"]),
        learning_rate=float(base["learning_rate"]),
        momentum=float(base["momentum"]),
        seed=int(base["seed"]),
    )


# ---------------------------------------------------------------------------
# experiment


def _stage(name: str, fn: Callable, *args, **kwargs):
    t0 = time.perf_counter()
    log.info("stage %s: start", name)
    try:
        result = fn(*args, **kwargs)
    except (ConfigError, ExperimentError):
        raise
    except Exception as exc:  # surfaced with the stage name
        raise ExperimentError(name, exc) from exc
    log.info("stage %s: done in %.1fs", name, time.perf_counter() - t0)
    return result


def _recording_pairs(cfg: dict):
    data = cfg["data"]
    if data["source"] == "synthetic":
        synth = SynthConfig(**data.get("generator", {}))
        for _meta, recs in iter_synthetic_subjects(
            data["subjects"], float(data["positive_fraction"]), data["walks"], data["seed"], synth
        ):
            for w in range(len(recs) // 2):
                yield recs[2 * w], recs[2 * w + 1], f"w{w + 1}"
    else:
        yield from load_manifest_pairs(data["path"])


def _ingest(cfg: dict) -> list[CaseBundle]:
    pre = cfg["preprocess"]
    cases = []
    for left, right, case_id in _recording_pairs(cfg):
        if left.label is Label.UNKNOWN:
            raise ValueError(f"{left.subject_id}: unlabeled recordings cannot be used for training")
        cases.append(
            assemble_case(
                left, right, case_id, pre["side"], float(pre["critical_fraction"]), pre["normalize_orientation"]
            )
        )
    return cases


def _write_curve(path, curve: list[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(curve, start=1):
            fh.write(f"{epoch},{loss:.10f}\n")


def run_experiment(config: dict | str | os.PathLike, output_dir=None) -> EvalReport:
    """Synthesize or ingest, preprocess, split, train, evaluate, write artifacts.

    Writes ``report.json``, ``loss_<kind>.csv``, ``model_<kind>.gdxw`` and
    ``svm.json`` into the output directory.
    """
    if not isinstance(config, dict):
        config = load_config(config)
    cfg = validate_config(config)
    out = output_dir or cfg.get("output_dir")
    if not out:
        raise ConfigError("missing field 'output_dir'")
    os.makedirs(out, exist_ok=True)

    cases = _stage("ingest", _ingest, cfg)
    split = _stage("split", subject_split, cases, float(cfg["split"]["test_fraction"]), cfg["split"]["seed"])
    if not split.test_cases:
        raise ExperimentError("split", ValueError("empty test set"))
    log.info("split: %d train / %d test cases", len(split.train_cases), len(split.test_cases))

    models = {}
    curves = {}
    for name in MODEL_NAMES:
        kind = ImageKind(name)
        tcfg = model_train_config(cfg, name)
        net, curve = _stage(f"train-{name}", train_model, kind, split.train_cases, tcfg)
        path = os.path.join(out, f"model_{name}.gdxw")
        save_weights(net, path)
        # evaluate what was written (32-bit weights), not the 64-bit training copy
        models[name], curves[name] = load_weights(path, net), curve
        _write_curve(os.path.join(out, f"loss_{name}.csv"), curve)
    ensemble = EnsembleModel(models["max"], models["sum"], models["average"])

    base = cfg["baseline"]
    svm = _stage(
        "train-svm",
        train_svm,
        np.array([c.features for c in split.train_cases]),
        [c.label for c in split.train_cases],
        float(base["lambda"]),
        base["epochs"],
        base["seed"],
    )
    svm.save(os.path.join(out, "svm.json"))

    echo = {k: v for k, v in cfg.items() if k != "output_dir"}
    report = _stage("evaluate", evaluate, ensemble, svm, split, cfg["split"]["seed"], echo)
    report.extra = {
        "train_case_count": len(split.train_cases),
        "test_subjects": sorted(split.test_subjects),
        "final_training_loss": {name: curves[name][-1] if curves[name] else None for name in MODEL_NAMES},
        "svm_dropped_features": list(svm.dropped),
    }
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    return report
