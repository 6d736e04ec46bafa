import pytest

from robusthcn.cli import main
from robusthcn.config import ConfigError, RunConfig
from robusthcn.corpus import parse_dialogs
from robusthcn.evaluation import parse_report


def _run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("toydata")
    code = _run("toy", "--out-dir", str(out), "--seed", "3", "--n-dialogs", "24",
                "--n-actions", "8", "--foreign-per-domain", "10")
    assert code == 0
    return out


def test_version_flag(capsys):
    assert _run("--version") == 0
    out = capsys.readouterr().out
    assert "corpus format 1" in out and "checkpoint format 1" in out


def test_no_command_prints_help(capsys):
    assert _run() == 2


def test_toy_writes_expected_files(toy_files):
    for name in ("train.txt", "dev.txt", "test.txt", "ood_pool.txt",
                 "lexicon.txt", "segment_pool.txt"):
        assert (toy_files / name).exists()
    dialogs = parse_dialogs((toy_files / "train.txt").read_text())
    assert dialogs


def test_augment_cli_deterministic(toy_files, tmp_path):
    args = [
        "augment", "--input", str(toy_files / "test.txt"),
        "--ood-pool", str(toy_files / "ood_pool.txt"),
        "--segment-pool", str(toy_files / "segment_pool.txt"),
        "--p-start", "0.3", "--p-cont", "0.4", "--seed", "5",
    ]
    out_a = tmp_path / "a.txt"
    out_b = tmp_path / "b.txt"
    assert _run(*args, "--output", str(out_a), "--stats-out", str(tmp_path / "a.stats")) == 0
    assert _run(*args, "--output", str(out_b)) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    assert (tmp_path / "a.txt.labels").read_bytes() == (tmp_path / "b.txt.labels").read_bytes()
    stats = (tmp_path / "a.stats").read_text()
    assert "blocks = " in stats and "config.p_ood_start = 0.3" in stats


def test_missing_input_names_the_flag(tmp_path, capsys):
    code = _run("augment", "--input", str(tmp_path / "nope.txt"),
                "--ood-pool", str(tmp_path / "nope2.txt"),
                "--segment-pool", str(tmp_path / "nope3.txt"),
                "--output", str(tmp_path / "out.txt"))
    assert code == 1
    err = capsys.readouterr().err
    assert "--input" in err


def test_train_evaluate_report_chain(toy_files, tmp_path):
    ckpt = tmp_path / "model.ckpt"
    history = tmp_path / "history.txt"
    code = _run(
        "train", "--variant", "HCN",
        "--train", str(toy_files / "train.txt"), "--dev", str(toy_files / "dev.txt"),
        "--lexicon", str(toy_files / "lexicon.txt"),
        "--vocab-corpus", str(toy_files / "test.txt"),
        "--actions-corpus", str(toy_files / "test.txt"),
        "--td-ratio", "0.0", "--max-epochs", "2", "--seed", "7",
        "--out-checkpoint", str(ckpt), "--history-out", str(history),
    )
    assert code == 0
    assert ckpt.exists()
    lines = history.read_text().split("\n")
    assert lines[0] == "epoch\ttrain_loss\tdev_acc\tkl_mean"
    assert len([l for l in lines if l and not l.startswith("#")]) == 3  # header + 2 epochs

    report = tmp_path / "report.txt"
    code = _run("evaluate", "--checkpoint", str(ckpt),
                "--plain-test", str(toy_files / "test.txt"),
                "--report-out", str(report), "--model-name", "HCN")
    assert code == 0
    record = parse_report(report.read_text())
    assert record["model"] == "HCN"
    assert "plain.overall_acc" in record

    table = tmp_path / "table.txt"
    csv = tmp_path / "table.csv"
    assert _run("report", str(report), "--out", str(table), "--csv-out", str(csv)) == 0
    assert "HCN" in table.read_text()
    assert csv.read_text().startswith("model,")


def test_evaluate_requires_some_test(toy_files, tmp_path, capsys):
    ckpt = tmp_path / "model.ckpt"
    _run("train", "--variant", "HCN",
         "--train", str(toy_files / "train.txt"), "--dev", str(toy_files / "dev.txt"),
         "--lexicon", str(toy_files / "lexicon.txt"),
         "--td-ratio", "0.0", "--max-epochs", "1", "--seed", "1",
         "--out-checkpoint", str(ckpt))
    assert _run("evaluate", "--checkpoint", str(ckpt), "--report-out",
                str(tmp_path / "r.txt")) == 1
    assert "--test" in capsys.readouterr().err


def test_train_config_file_precedence(toy_files, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("model.variant = HCN\ntrain.max_epochs = 1\nturn_dropout.ratio = 0\n"
                   "train.seed = 4\n")
    base = ["train", "--config", str(cfg),
            "--train", str(toy_files / "train.txt"), "--dev", str(toy_files / "dev.txt"),
            "--lexicon", str(toy_files / "lexicon.txt")]
    hist_a = tmp_path / "a.hist"
    assert _run(*base, "--out-checkpoint", str(tmp_path / "a.ckpt"),
                "--history-out", str(hist_a)) == 0
    epochs_a = [l for l in hist_a.read_text().split("\n")[1:] if l and not l.startswith("#")]
    assert len(epochs_a) == 1  # file value used
    hist_b = tmp_path / "b.hist"
    assert _run(*base, "--max-epochs", "2",
                "--out-checkpoint", str(tmp_path / "b.ckpt"),
                "--history-out", str(hist_b)) == 0
    epochs_b = [l for l in hist_b.read_text().split("\n")[1:] if l and not l.startswith("#")]
    assert len(epochs_b) == 2  # flag overrides the file


def test_gridsearch_cli(toy_files, tmp_path):
    results = tmp_path / "grid.tsv"
    code = _run(
        "gridsearch", "--variant", "HCN",
        "--train", str(toy_files / "train.txt"), "--dev", str(toy_files / "dev.txt"),
        "--lexicon", str(toy_files / "lexicon.txt"),
        "--stage1-grid", "8", "--stage2-grid", "0.2,0.4",
        "--max-epochs", "1", "--seed", "2", "--results-out", str(results),
    )
    assert code == 0
    lines = [l for l in results.read_text().split("\n") if l and not l.startswith("#")]
    assert lines[0].startswith("stage\t")
    assert len(lines) == 1 + 3  # header + one stage-1 cell + two stage-2 cells


def test_pipeline_and_rerun_identical(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text(
        "run.seed = 11\n"
        "toy.n_dialogs = 24\n"
        "toy.n_actions = 8\n"
        "model.variant = HCN\n"
        "turn_dropout.ratio = 0.3\n"
        "train.max_epochs = 2\n"
        "# comment lines are fine\n"
    )
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    assert _run("pipeline", "--config", str(config), "--out-dir", str(out_a)) == 0
    assert _run("pipeline", "--config", str(config), "--out-dir", str(out_b)) == 0
    for name in ("test_ood.txt", "test_ood.labels", "report.txt", "augment_stats.txt",
                 "results_table.csv", "run_config.txt"):
        assert (out_a / name).exists(), name
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
    record = parse_report((out_a / "report.txt").read_text())
    assert record["model"] == "TD-HCN"
    assert "augmented.ood_f1" in record and "plain.overall_acc" in record
    assert record["config.run.seed"] == "11"


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.parse("nonsense.key = 1\n")
    with pytest.raises(ConfigError):
        RunConfig.parse("augment.p_ood_start = not-a-number\n")


def test_config_overrides_and_defaults():
    config = RunConfig.parse("augment.p_ood_start = 0.5\n")
    assert config.get("augment.p_ood_start") == 0.5
    assert config.get("augment.p_ood_cont") == 0.4  # default
    merged = config.with_overrides({"augment.p_ood_start": 0.7, "run.seed": None})
    assert merged.get("augment.p_ood_start") == 0.7
    assert config.get("augment.p_ood_start") == 0.5  # original untouched
    # derived stage seeds are stable and distinct per stage
    assert config.seed_for("augment") == config.seed_for("augment")
    assert config.seed_for("augment") != config.seed_for("train")
    pinned = config.with_overrides({"augment.seed": 123})
    assert pinned.seed_for("augment") == 123
