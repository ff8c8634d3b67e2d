import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitdx.classifier import EnsembleModel, SvmModel, build_default_cnn
from gaitdx.harness import (
    ConfigError,
    ExperimentError,
    Split,
    accuracy_from_confusion,
    confusion_matrix,
    default_config,
    dumps_stable,
    evaluate,
    evaluate_predictions,
    read_case_dir,
    read_case_images,
    run_experiment,
    subject_split,
    validate_config,
    write_case_dir,
)
from gaitdx.preprocess import CaseBundle, GrayscaleImage, ImageKind
from gaitdx.recording import Foot, Label, write_synthetic_dataset

P, N = Label.POSITIVE, Label.NEGATIVE
_IMAGES = {(k, f): GrayscaleImage(np.zeros((8, 8), dtype=np.uint8)) for k in ImageKind for f in Foot}


def dummy_cases(n_pos, n_neg, walks=5):
    cases = []
    for s in range(n_pos + n_neg):
        label = P if s < n_pos else N
        for w in range(walks):
            cases.append(CaseBundle(f"S{s:03d}", label, _IMAGES, f"w{w + 1}"))
    return cases


def balance_ok(split, cases):
    labels = {c.subject_id: c.label for c in cases}
    n_test = len(split.test_subjects)
    pos_test = sum(labels[s] is P for s in split.test_subjects)
    global_frac = sum(v is P for v in labels.values()) / len(labels)
    return abs(pos_test - n_test * global_frac) <= 1


def test_clinical_scale_split():
    cases = dummy_cases(64, 65)
    assert len(cases) == 645
    split = subject_split(cases, 0.225, seed=1)
    assert len(split.test_cases) == 145 and len(split.train_cases) == 500
    assert not split.train_subjects & split.test_subjects
    assert balance_ok(split, cases)


def test_zero_fraction_gives_empty_test():
    split = subject_split(dummy_cases(3, 3), 0.0, seed=0)
    assert split.test_cases == [] and len(split.train_cases) == 30


def test_split_sweep_100_seeds():
    cases = dummy_cases(50, 50)
    for seed in range(100):
        split = subject_split(cases, 0.2, seed)
        assert not split.train_subjects & split.test_subjects
        assert len(split.train_cases) + len(split.test_cases) == len(cases)
        assert balance_ok(split, cases)
        for c in split.test_cases:
            assert c.subject_id in split.test_subjects


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.floats(0, 1), st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_split_properties(n_pos, n_neg, frac, seed, walks):
    cases = dummy_cases(n_pos, n_neg, walks)
    split = subject_split(cases, frac, seed)
    assert not split.train_subjects & split.test_subjects
    ids = [id(c) for c in split.train_cases + split.test_cases]
    assert sorted(ids) == sorted(id(c) for c in cases)
    assert balance_ok(split, cases)
    assert subject_split(cases, frac, seed).test_subjects == split.test_subjects


def test_split_errors():
    with pytest.raises(ValueError):
        subject_split(dummy_cases(1, 5), 0.2, 0)
    bad = dummy_cases(3, 3) + [CaseBundle("U1", Label.UNKNOWN, _IMAGES, "w1")]
    with pytest.raises(ValueError):
        subject_split(bad, 0.2, 0)
    mixed = dummy_cases(3, 3)
    mixed.append(CaseBundle(mixed[0].subject_id, N, _IMAGES, "w9"))
    with pytest.raises(ValueError):
        subject_split(mixed, 0.2, 0)
    with pytest.raises(AssertionError):
        Split([], [], {"a"}, {"a"})


# ---------------------------------------------------------------------------
# evaluation


def test_perfect_and_constant_predictors():
    truth = [P, N, P, N, N, P]
    rep = evaluate_predictions(truth, {"oracle": list(truth), "never": [N] * 6})
    assert rep.accuracies["oracle"] == 1.0
    assert rep.confusion["oracle"][0][1] == 0 and rep.confusion["oracle"][1][0] == 0
    assert rep.accuracies["never"] == 0.5
    assert confusion_matrix(truth, [N] * 6) == [[3, 0], [3, 0]]
    with pytest.raises(ValueError):
        evaluate_predictions([], {})


def zero_ensemble(side):
    nets = []
    for _ in range(3):
        net = build_default_cnn(side, seed=0)
        net.layers[-1].params["W"][:] = 0.0
        nets.append(net)
    return EnsembleModel(*nets)


def test_evaluate_constant_negative(small_cases):
    split = Split([], small_cases, set(), {c.subject_id for c in small_cases})
    svm = SvmModel(np.zeros(40), 0.0, np.zeros(40), np.ones(40))
    rep = evaluate(zero_ensemble(64), svm, split, seed=3)
    n_pos = sum(c.label is P for c in small_cases)
    assert set(rep.accuracies) == {"max", "sum", "average", "voting", "svm"}
    for name, acc in rep.accuracies.items():
        assert acc == pytest.approx(1 - n_pos / len(small_cases))
        assert acc == accuracy_from_confusion(rep.confusion[name])
        assert sum(map(sum, rep.confusion[name])) == rep.case_count == len(small_cases)
    with pytest.raises(ValueError):
        evaluate(zero_ensemble(64), svm, Split(small_cases, [], {"x"}, set()))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=50))
def test_accuracy_reproducible_from_confusion(pairs):
    truth = [P if t else N for t, _ in pairs]
    pred = [P if p else N for _, p in pairs]
    rep = evaluate_predictions(truth, {"m": pred})
    assert rep.accuracies["m"] == accuracy_from_confusion(rep.confusion["m"])
    assert 0.0 <= rep.accuracies["m"] <= 1.0
    back = json.loads(rep.to_json())
    m = back["confusion"]["m"]
    assert back["accuracy"]["m"] == pytest.approx((m[0][0] + m[1][1]) / sum(map(sum, m)), abs=5e-7)


def test_stable_json_format():
    text = dumps_stable({"b": 1.0, "a": [0.5, 2], "c": {"z": None, "y": True}, "d": "x"})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "1.000000" in text and "0.500000" in text and "[0.500000, 2]" in text
    assert json.loads(text)["c"] == {"y": True, "z": None}
    with pytest.raises(ValueError):
        dumps_stable({"x": float("nan")})


# ---------------------------------------------------------------------------
# configuration and end-to-end


def tiny_config(out_dir, **data):
    cfg = default_config()
    cfg["data"].update({"subjects": 8, "walks": 2, "seed": 3}, **data)
    cfg["training"].update(epochs=2, batch_size=8)
    cfg["training"]["models"] = {"average": {"seed": 7}}
    cfg["baseline"]["epochs"] = 20
    cfg["split"]["test_fraction"] = 0.25
    cfg["output_dir"] = str(out_dir)
    return cfg


def test_default_config_is_valid():
    cfg = validate_config(default_config())
    assert cfg["data"] == {"source": "synthetic", "subjects": 100, "positive_fraction": 0.5, "walks": 5, "seed": 42}
    assert cfg["split"]["test_fraction"] == 0.2 and cfg["preprocess"]["side"] == 64


@pytest.mark.parametrize(
    "path, field",
    [(("data", "subjects"), "data.subjects"), (("training", "epochs"), "training.epochs"),
     (("split", None), "split"), (("preprocess", "critical_fraction"), "preprocess.critical_fraction")],
)
def test_missing_field_is_named(path, field):
    cfg = default_config()
    section, key = path
    if key is None:
        del cfg[section]
    else:
        del cfg[section][key]
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        validate_config(cfg)


def test_bad_values_rejected():
    cfg = default_config()
    cfg["training"]["epochs"] = "many"
    with pytest.raises(ConfigError, match="training.epochs"):
        validate_config(cfg)
    cfg = default_config()
    cfg["data"]["source"] = "ftp"
    with pytest.raises(ConfigError):
        validate_config(cfg)
    cfg = default_config()
    cfg["training"]["models"] = {"median": {}}
    with pytest.raises(ConfigError):
        validate_config(cfg)


def test_run_experiment_small(tmp_path):
    rep = run_experiment(tiny_config(tmp_path / "a"))
    out = tmp_path / "a"
    for name in ("report.json", "svm.json", "model_max.gdxw", "model_sum.gdxw", "model_average.gdxw",
                 "loss_max.csv", "loss_sum.csv", "loss_average.csv"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert set(report["accuracy"]) == {"svm", "max", "sum", "average", "voting"}
    assert report["case_count"] == 4 and report["train_case_count"] == 12
    for name, m in report["confusion"].items():
        assert sum(map(sum, m)) == report["case_count"]
        assert report["accuracy"][name] == pytest.approx(accuracy_from_confusion(m), abs=5e-7)
    assert "output_dir" not in report["config"]
    assert (out / "loss_max.csv").read_text().splitlines()[0] == "epoch,mean_loss"
    assert len((out / "loss_max.csv").read_text().splitlines()) == 3
    assert rep.accuracies == pytest.approx(report["accuracy"], abs=5e-7)
    run_experiment(tiny_config(tmp_path / "b"))
    assert (tmp_path / "b" / "report.json").read_bytes() == (out / "report.json").read_bytes()


def test_run_experiment_from_directory(tmp_path):
    write_synthetic_dataset(tmp_path / "data", 8, 0.5, 2, seed=3)
    cfg = tiny_config(tmp_path / "out")
    cfg["data"] = {"source": "directory", "path": str(tmp_path / "data")}
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    rep = run_experiment(cfg_path)
    synthetic = run_experiment(tiny_config(tmp_path / "synth"))
    assert rep.confusion == synthetic.confusion


def test_stage_errors_name_the_stage(tmp_path):
    cfg = tiny_config(tmp_path / "out")
    cfg["data"] = {"source": "directory", "path": str(tmp_path / "missing")}
    with pytest.raises(ExperimentError) as err:
        run_experiment(cfg)
    assert err.value.stage == "ingest" and "ingest" in str(err.value)
    cfg = tiny_config(tmp_path / "out", subjects=3)
    with pytest.raises(ExperimentError, match="split"):
        run_experiment(cfg)
    cfg = tiny_config(tmp_path / "out")
    del cfg["output_dir"]
    with pytest.raises(ConfigError, match="output_dir"):
        run_experiment(cfg)


def test_case_dir_round_trip(tmp_path, small_cases):
    write_case_dir(small_cases[:4], tmp_path)
    back = read_case_dir(tmp_path)
    for a, b in zip(small_cases[:4], back):
        assert (a.subject_id, a.case_id, a.label) == (b.subject_id, b.case_id, b.label)
        assert all(a.images[k] == b.images[k] for k in a.images)
        assert np.array_equal(a.features, b.features)
    names = sorted(os.listdir(tmp_path))
    assert f"{small_cases[0].subject_id}_w1_max_left.pgm" in names
    single = tmp_path / "one"
    single.mkdir()
    for (kind, foot), img in small_cases[0].images.items():
        (single / f"x_{kind.value}_{foot.value}.pgm").write_bytes((tmp_path / f"{small_cases[0].subject_id}_w1_{kind.value}_{foot.value}.pgm").read_bytes())
    case = read_case_images(single)
    assert case.label is Label.UNKNOWN
    assert all(case.images[k] == small_cases[0].images[k] for k in case.images)
