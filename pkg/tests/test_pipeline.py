"""Pipeline config handling, stage ordering, and artifact hygiene.

Stages talk through files, so the tests lean on the fingerprint checks: a
stale or foreign artifact must be refused, never silently consumed.
"""

import json

import numpy as np
import pytest

from triqa.encoder import save_checkpoint
from triqa.errors import DataError, UsageError
from triqa.images import save_image
from triqa.pipeline import (
    Artifacts,
    PipelineConfig,
    load_pipeline_config,
    run_pipeline,
    write_config_template,
)
from triqa.synth import synth_image, write_corpus, write_toy_mos_dataset
from triqa.triplets import read_manifest


# -- configuration ------------------------------------------------------------


def test_defaults_without_file():
    assert load_pipeline_config(None) == PipelineConfig()


def test_file_values_parsed(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[train]\nepochs = 2\nmargin = 2.0\n[features]\nscales = full\n[run]\nseed = 9\n")
    config = load_pipeline_config(cfg)
    assert config.epochs == 2
    assert config.margin == 2.0
    assert config.scales == ("full",)
    assert config.seed == 9


def test_overrides_beat_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nseed = 9\n")
    config = load_pipeline_config(cfg, overrides={"seed": 3, "epochs": None})
    assert config.seed == 3
    assert config.epochs == 1  # None overrides are "not given", not "reset"


def test_unknown_config_entry(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[eval]\niterations = 10\n")  # iterations belongs to [protocol]
    with pytest.raises(UsageError, match=r"unknown config entry \[eval\] iterations"):
        load_pipeline_config(cfg)


def test_bad_config_value(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[train]\nepochs = soon\n")
    with pytest.raises(UsageError, match="bad value 'soon'"):
        load_pipeline_config(cfg)


def test_bad_bool_word(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[forge]\nmaterialize = maybe\n")
    with pytest.raises(UsageError, match="bad value"):
        load_pipeline_config(cfg)


def test_unknown_override_key():
    with pytest.raises(UsageError, match="unknown config overrides"):
        load_pipeline_config(None, overrides={"epohcs": 2})


def test_config_file_not_found(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_pipeline_config(tmp_path / "nope.ini")


def test_malformed_config_file(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("epochs = 2\n")  # key before any section header
    with pytest.raises(UsageError, match="malformed"):
        load_pipeline_config(cfg)


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"preset": "huge"}, "unknown preset"),
        ({"epochs": 0}, "epochs"),
        ({"crop": -8}, "crop"),
        ({"scales": ("giant",)}, "unknown scale"),
        ({"scales": ()}, "at least one"),
    ],
)
def test_config_validation(overrides, message):
    with pytest.raises(UsageError, match=message):
        load_pipeline_config(None, overrides=overrides)


def test_template_round_trips(tmp_path):
    path = write_config_template(tmp_path / "template.ini")
    config = load_pipeline_config(path)
    # the template spells out the defaults, so loading it changes nothing
    # except the path placeholders, which parse as empty strings
    assert config.preset == "desk-scale"
    assert config.epochs == 1
    assert config.margin == 1.5
    assert config.scales == ("full", "half")
    assert config.seed == 0
    assert config.include_combined is True


def test_resolved_crop_follows_preset():
    assert PipelineConfig().resolved_crop() > 0
    assert PipelineConfig(crop=96).resolved_crop() == 96


# -- stage selection ----------------------------------------------------------


def test_unknown_stage_rejected(tmp_path):
    config = load_pipeline_config(None, overrides={"workdir": str(tmp_path)})
    with pytest.raises(UsageError, match="unknown stages"):
        run_pipeline(config, ["forge", "deploy"])


def test_no_stages_rejected(tmp_path):
    config = load_pipeline_config(None, overrides={"workdir": str(tmp_path)})
    with pytest.raises(UsageError, match="no stages"):
        run_pipeline(config, [])


def test_stages_run_in_dependency_order(tmp_path, monkeypatch):
    import triqa.pipeline as pipeline_module

    seen = []
    stubs = {name: (lambda n: lambda cfg, art: seen.append(n) or [])(name) for name in pipeline_module.STAGES}
    monkeypatch.setattr(pipeline_module, "_STAGE_FUNCS", stubs)
    config = load_pipeline_config(None, overrides={"workdir": str(tmp_path)})
    run_pipeline(config, ["eval", "forge", "train"])  # given out of order
    assert seen == ["forge", "train", "eval"]


def test_missing_upstream_names_producer(tmp_path, corpus_dir):
    config = load_pipeline_config(
        None, overrides={"workdir": str(tmp_path), "images": str(corpus_dir)}
    )
    with pytest.raises(DataError, match="run the forge stage first"):
        run_pipeline(config, ["train"])


def test_stage_needs_configured_path(tmp_path):
    config = load_pipeline_config(None, overrides={"workdir": str(tmp_path)})
    with pytest.raises(UsageError, match=r"\[paths\] images"):
        run_pipeline(config, ["forge"])


# -- forge stage --------------------------------------------------------------


def test_forge_writes_manifest(tmp_path):
    images = tmp_path / "imgs"
    write_corpus(images, 1, size=64, seed=4)  # forge never renders, small is fine
    config = load_pipeline_config(
        None,
        overrides={"workdir": str(tmp_path / "run"), "images": str(images), "include_combined": False},
    )
    written = run_pipeline(config, ["forge"])
    (manifest_path,) = written["forge"]
    manifest = read_manifest(manifest_path)
    assert len(manifest.entries) == 400
    assert "corpus_fingerprint" in manifest.extras


def test_forge_is_reproducible(tmp_path):
    images = tmp_path / "imgs"
    write_corpus(images, 1, size=64, seed=4)
    paths = []
    for run in ("a", "b"):
        config = load_pipeline_config(
            None,
            overrides={"workdir": str(tmp_path / run), "images": str(images), "include_combined": False},
        )
        paths.append(run_pipeline(config, ["forge"])["forge"][0])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_forge_rejects_foreign_grouping(tmp_path):
    images = tmp_path / "imgs"
    write_corpus(images, 1, size=64, seed=4)
    config = load_pipeline_config(
        None,
        overrides={
            "workdir": str(tmp_path / "run"),
            "images": str(images),
            "grouping_version": "lab-custom-v9",
        },
    )
    with pytest.raises(DataError, match="grouping"):
        run_pipeline(config, ["forge"])


# -- artifact hygiene ---------------------------------------------------------


def test_train_refuses_changed_corpus(tmp_path):
    images = tmp_path / "imgs"
    write_corpus(images, 1, size=288, seed=4)
    config = load_pipeline_config(
        None,
        overrides={"workdir": str(tmp_path / "run"), "images": str(images), "include_combined": False},
    )
    run_pipeline(config, ["forge"])
    # repaint one pristine image after forging
    save_image(synth_image(999, size=288), images / "synth-000.png")
    with pytest.raises(DataError, match="corpus changed"):
        run_pipeline(config, ["train"])


def test_fit_head_refuses_foreign_checkpoint(tmp_path, corpus_dir, micro_ckpt, toy_dataset):
    _, csv_path = toy_dataset
    workdir = tmp_path / "run"
    art = Artifacts(workdir)
    workdir.mkdir()
    save_checkpoint(micro_ckpt, art.checkpoint)
    config = load_pipeline_config(
        None,
        overrides={"workdir": str(workdir), "images": str(corpus_dir), "dataset": str(csv_path)},
    )
    run_pipeline(config, ["extract"])
    # tamper with the recorded provenance: fit-head must notice the mismatch
    sidecar = art.features.with_suffix(".json")
    meta = json.loads(sidecar.read_text())
    meta["checkpoint_fingerprint"] = "0" * 64
    sidecar.write_text(json.dumps(meta))
    with pytest.raises(DataError, match="different checkpoint"):
        run_pipeline(config, ["fit-head"])


def test_extract_then_fit_head_dataset_mode(tmp_path, micro_ckpt, toy_dataset):
    _, csv_path = toy_dataset
    workdir = tmp_path / "run"
    art = Artifacts(workdir)
    workdir.mkdir()
    save_checkpoint(micro_ckpt, art.checkpoint)
    config = load_pipeline_config(
        None,
        overrides={"workdir": str(workdir), "dataset": str(csv_path)},
    )
    written = run_pipeline(config, ["extract", "fit-head"])
    assert art.features in written["extract"]
    assert art.model in written["fit-head"]
    meta = json.loads(art.features.with_suffix(".json").read_text())
    assert meta["source"] == "dataset"
    assert len(meta["rows"]) == 15


def test_fit_head_refuses_changed_dataset(tmp_path, micro_ckpt, toy_dataset):
    _, csv_path = toy_dataset
    workdir = tmp_path / "run"
    art = Artifacts(workdir)
    workdir.mkdir()
    save_checkpoint(micro_ckpt, art.checkpoint)
    private_csv = tmp_path / "mos.csv"
    private_csv.write_text(csv_path.read_text())
    config = load_pipeline_config(
        None,
        overrides={
            "workdir": str(workdir),
            "dataset": str(private_csv),
            "dataset_images": str(csv_path.parent),
        },
    )
    run_pipeline(config, ["extract"])
    # appending a row changes the table hash recorded at extract time
    private_csv.write_text(csv_path.read_text() + "\n")
    with pytest.raises(DataError, match="dataset table changed"):
        run_pipeline(config, ["fit-head"])
