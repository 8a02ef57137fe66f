import os
from pathlib import Path

import numpy as np
import pytest

from ssdrec import cli
from ssdrec.checkpoint import load_checkpoint
from ssdrec.data import load_prepared
from ssdrec.model import ModelConfig, init_params
from ssdrec.training import NumericError

SMALL = ["--embed-dim", "6", "--hidden-dim", "6", "--batch-size", "16", "--epochs", "2", "--timing", "false"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("generate", "--out", root / "gen", "--developers", 12, "--packages", 20, "--weeks", 6, "--seed", 2) == 0
    gen = root / "gen"
    args = ["--events", gen / "events.tsv", "--social", gen / "social.tsv", "--deps", gen / "dependency.tsv"]
    assert run("prepare", *args, "--out", root / "corpus", "--reserve-weeks", 2) == 0
    assert run("train", "--corpus", root / "corpus", "--out", root / "run", *SMALL) == 0
    return root, args


def test_generate_writes_the_three_inputs(workspace):
    root, _ = workspace
    assert {"events.tsv", "social.tsv", "dependency.tsv", "synth.cfg", "manifest.txt"} <= set(tree(root / "gen"))


def test_prepare_is_byte_identical_on_rerun(workspace, tmp_path):
    root, args = workspace
    assert run("prepare", *args, "--out", tmp_path / "again", "--reserve-weeks", 2) == 0
    a, b = tree(root / "corpus"), tree(tmp_path / "again")
    a.pop("manifest.txt"), b.pop("manifest.txt")
    assert a == b


def test_prepare_without_thresholds_only_filters_length(workspace, tmp_path):
    root, args = workspace
    code = run("prepare", *args, "--out", tmp_path / "c", "--m", 0, "--n", 0, "--k", 0, "--lifespan", 1, "--reserve-weeks", 2)
    assert code == 0
    rows = [line.split("\t") for line in (root / "gen" / "events.tsv").read_text().splitlines()]
    buckets = {(d, int(t) // (7 * 86_400)) for d, _, t in rows}
    summary = dict(line.split("\t") for line in (tmp_path / "c" / "summary.txt").read_text().splitlines())
    # generator sessions already have 2..5 items, so nothing is filtered
    assert int(summary["developers"]) == 12 and int(summary["events"]) <= len(rows)
    corpus = load_prepared(tmp_path / "c")
    split = corpus.split
    assert len(split.train) + len(split.valid) + len(split.test) + len(split.dropped) <= len(buckets)
    assert all(2 <= len(s) <= 30 for s in split.train)


def test_default_train_echo(workspace, tmp_path, capsys):
    root, _ = workspace
    assert run("train", "--corpus", root / "corpus", "--out", tmp_path / "r", "--epochs", 0) == 0
    echo = capsys.readouterr().out.splitlines()
    assert {"embed_dim=100", "hidden_dim=100", "layers=2", "dropout=0.2", "batch_size=200", "epochs=0"} <= set(echo)
    assert (tmp_path / "r" / "config.txt").read_text().splitlines() == echo[: len(cli.TRAIN_SETTINGS)]


def test_zero_epochs_checkpoint_is_the_initialization(workspace, tmp_path):
    root, _ = workspace
    assert run("train", "--corpus", root / "corpus", "--out", tmp_path / "r", "--epochs", 0, "--seed", 5) == 0
    ckpt = load_checkpoint(tmp_path / "r" / "model.ckpt")
    corpus = load_prepared(root / "corpus")
    stream = np.random.SeedSequence(5).spawn(5)[0]
    init = init_params(ModelConfig(), corpus.num_packages, corpus.num_developers, np.random.default_rng(stream))
    assert ckpt.seed == 5 and list(ckpt.params) == list(init)
    assert all(np.array_equal(ckpt.params[k], init[k]) for k in init)


def test_unflagged_defaults_are_the_published_ones():
    values = cli.resolve(cli.build_parser().parse_args(["train", "--corpus", "c", "--out", "o"]), cli.TRAIN_SETTINGS)
    assert (values["embed_dim"], values["hidden_dim"], values["layers"]) == (100, 100, 2)
    assert (values["dropout"], values["epochs"], values["batch_size"]) == (0.2, 20, 200)


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nepochs=7\nlr=0.01\nvariant=social-only\n")
    args = cli.build_parser().parse_args(["train", "--corpus", "c", "--out", "o", "--config", str(cfg), "--lr", "0.5"])
    values = cli.resolve(args, cli.TRAIN_SETTINGS)
    assert values["epochs"] == 7 and values["lr"] == 0.5 and values["variant"] == "social-only"


def test_unknown_config_key_is_a_usage_error(workspace, tmp_path):
    root, _ = workspace
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("epochz=3\n")
    assert run("train", "--corpus", root / "corpus", "--out", tmp_path / "r", "--config", cfg) == cli.EXIT_USAGE


def test_bad_flags_exit_with_usage_code(capsys):
    with pytest.raises(SystemExit) as err:
        run("train", "--corpus", "x", "--out", "y", "--bogus")
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        run("train", "--corpus", "x", "--out", "y", "--variant", "social")
    assert err.value.code == 1


def test_training_outputs_and_log(workspace):
    root, _ = workspace
    files = tree(root / "run")
    assert {"manifest.txt", "config.txt", "train_log.tsv", "model.ckpt"} <= set(files)
    log = files["train_log.tsv"].decode().splitlines()
    assert log[0] == "epoch\ttrain_nll\tvalid_hr10\twall_seconds" and len(log) == 3
    assert all(line.endswith("\t0.000") for line in log[1:])


def test_training_runs_are_byte_identical(workspace, tmp_path):
    root, _ = workspace
    assert run("train", "--corpus", root / "corpus", "--out", tmp_path / "again", *SMALL) == 0
    a, b = tree(root / "run"), tree(tmp_path / "again")
    a.pop("manifest.txt"), b.pop("manifest.txt")
    assert a == b


def test_manifest_written_first_and_reproducible(tmp_path):
    assert run("train", "--corpus", tmp_path / "missing", "--out", tmp_path / "r1") == cli.EXIT_DATA
    assert run("train", "--corpus", tmp_path / "missing", "--out", tmp_path / "r2") == cli.EXIT_DATA
    m1 = (tmp_path / "r1" / "manifest.txt").read_text().splitlines()
    m2 = (tmp_path / "r2" / "manifest.txt").read_text().splitlines()
    assert m1[0] == "subcommand=train" and "seed=0" in m1
    assert [l for l in m1 if not l.startswith("output=")] == [l for l in m2 if not l.startswith("output=")]


def test_missing_corpus_names_the_path(tmp_path, capsys):
    assert run("train", "--corpus", tmp_path / "nowhere", "--out", tmp_path / "r") == 2
    assert "nowhere/developers.txt: file not found" in capsys.readouterr().err


def test_malformed_events_is_a_data_error(tmp_path, capsys):
    (tmp_path / "e.tsv").write_text("dev\tpkg\tnot-a-time\n")
    (tmp_path / "s.tsv").write_text("")
    (tmp_path / "d.tsv").write_text("")
    code = run("prepare", "--events", tmp_path / "e.tsv", "--social", tmp_path / "s.tsv",
               "--deps", tmp_path / "d.tsv", "--out", tmp_path / "o")
    assert code == 2 and "e.tsv" in capsys.readouterr().err


def test_numeric_failure_exit_code(workspace, tmp_path, monkeypatch):
    root, _ = workspace

    def explode(*args, **kwargs):
        raise NumericError("non-finite loss at epoch 1, batch 0")

    monkeypatch.setattr(cli, "train", explode)
    assert run("train", "--corpus", root / "corpus", "--out", tmp_path / "r", *SMALL) == 3


def test_variant_modification_recorded(workspace, tmp_path):
    root, _ = workspace
    assert run("train", "--corpus", root / "corpus", "--out", tmp_path / "r", *SMALL, "--variant", "social-only") == 0
    manifest = (tmp_path / "r" / "manifest.txt").read_text()
    assert "config.variant=social-only" in manifest
    assert "variant_modification=item final repr e_i = e_i^(0)" in manifest


def test_eval_reports(workspace, tmp_path):
    root, _ = workspace
    assert run("eval", "--corpus", root / "corpus", "--checkpoint", root / "run" / "model.ckpt", "--out", tmp_path / "e") == 0
    csv = (tmp_path / "e" / "report.csv").read_text().splitlines()
    assert csv[0] == "K,hr,ndcg,instances" and [r.split(",")[0] for r in csv[1:]] == ["10", "20", "50"]
    again = tmp_path / "e2"
    run("eval", "--corpus", root / "corpus", "--checkpoint", root / "run" / "model.ckpt", "--out", again)
    assert (again / "report.txt").read_bytes() == (tmp_path / "e" / "report.txt").read_bytes()


def test_eval_on_tiny_catalog_hits_everything(workspace, tmp_path):
    root, _ = workspace
    code = run("eval", "--corpus", root / "corpus", "--checkpoint", root / "run" / "model.ckpt",
               "--out", tmp_path / "e", "--split", "train", "--ks", "20,50")
    assert code == 0
    rows = (tmp_path / "e" / "report.csv").read_text().splitlines()[1:]
    # the catalog has at most 20 packages, so every target is inside the top 20
    assert all(float(r.split(",")[1]) == 100.0 for r in rows)


def test_checkpoint_corpus_mismatch_prints_diff(workspace, tmp_path, capsys):
    root, args = workspace
    assert run("generate", "--out", tmp_path / "g", "--developers", 12, "--packages", 26, "--weeks", 6) == 0
    g = tmp_path / "g"
    run("prepare", "--events", g / "events.tsv", "--social", g / "social.tsv", "--deps", g / "dependency.tsv",
        "--out", tmp_path / "other", "--reserve-weeks", 2)
    capsys.readouterr()
    code = run("eval", "--corpus", tmp_path / "other", "--checkpoint", root / "run" / "model.ckpt", "--out", tmp_path / "e")
    err = capsys.readouterr().err
    assert code == 2
    assert "does not match corpus" in err and "item_embedding: checkpoint" in err


def test_eval_variant_assertion(workspace, tmp_path):
    root, _ = workspace
    code = run("eval", "--corpus", root / "corpus", "--checkpoint", root / "run" / "model.ckpt",
               "--out", tmp_path / "e", "--variant", "social-only")
    assert code == cli.EXIT_USAGE


def test_sweep_beta_zero_matches_dependency_only_eval(workspace, tmp_path):
    root, _ = workspace
    assert run("sweep", "--corpus", root / "corpus", "--out", tmp_path / "s", "--axis", "beta", "--values", "0", *SMALL[:-2]) == 0
    assert run("train", "--corpus", root / "corpus", "--out", tmp_path / "t", *SMALL, "--variant", "dependency-only") == 0
    assert run("eval", "--corpus", root / "corpus", "--checkpoint", tmp_path / "t" / "model.ckpt", "--out", tmp_path / "e") == 0
    assert (tmp_path / "s" / "report_beta_0.csv").read_bytes() == (tmp_path / "e" / "report.csv").read_bytes()
    assert (tmp_path / "s" / "sweep.csv").read_text().startswith("axis,value,K,hr,ndcg,instances\nbeta,0,10,")


def test_attention_export(workspace, tmp_path):
    root, _ = workspace
    assert run("attention", "--corpus", root / "corpus", "--checkpoint", root / "run" / "model.ckpt", "--out", tmp_path / "a") == 0
    rows = (tmp_path / "a" / "attention.csv").read_text().splitlines()
    assert rows[0] == "developer,session_T,position,friend,layer,alpha" and len(rows) > 1
    kinds = {line.split(",")[0] for line in (tmp_path / "a" / "variance.csv").read_text().splitlines()[1:]}
    assert kinds == {"intra", "inter", "across"}


def test_attention_with_one_friend_has_zero_across_variance(tmp_path):
    assert run("generate", "--out", tmp_path / "g", "--developers", 10, "--packages", 16, "--weeks", 6,
               "--friends-per-developer", 1) == 0
    g = tmp_path / "g"
    run("prepare", "--events", g / "events.tsv", "--social", g / "social.tsv", "--deps", g / "dependency.tsv",
        "--out", tmp_path / "c", "--reserve-weeks", 2)
    assert run("train", "--corpus", tmp_path / "c", "--out", tmp_path / "r", *SMALL) == 0
    assert run("attention", "--corpus", tmp_path / "c", "--checkpoint", tmp_path / "r" / "model.ckpt", "--out", tmp_path / "a") == 0
    across = [l for l in (tmp_path / "a" / "variance.csv").read_text().splitlines() if l.startswith("across,")]
    assert across and all(float(l.split(",")[-1]) == 0.0 for l in across)


def test_outputs_stay_under_out(workspace, tmp_path, monkeypatch):
    root, _ = workspace
    monkeypatch.chdir(tmp_path)
    before = tree(root)
    assert run("eval", "--corpus", root / "corpus", "--checkpoint", root / "run" / "model.ckpt", "--out", "o") == 0
    assert tree(root) == before
    assert sorted(os.listdir(tmp_path)) == ["o"]
