"""End-to-end command-line tests."""

import collections
import json

import pytest

from sciner import cli, corpus_ingest, dataset, synth
from sciner.errors import FormatError
from test_corpus_ingest import PROCEEDINGS_BIB


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def corpus():
    return synth.make_corpus(n_manual=40, n_auto=120, n_test=60, seed=3)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, corpus):
    """Annotation files, token dir, and loop config for CLI runs."""
    root = tmp_path_factory.mktemp("cliws")
    with open(root / "train.ann", "w", encoding="utf-8") as handle:
        dataset.write_annotations(corpus.manual, handle)
    with open(root / "test.ann", "w", encoding="utf-8") as handle:
        dataset.write_annotations(corpus.test, handle)
    token_dir = root / "tokens"
    token_dir.mkdir()
    by_paper = collections.defaultdict(list)
    for p in corpus.auto_inputs:
        by_paper[p.paper_id].append(p)
    for pid, paras in by_paper.items():
        doc = corpus_ingest.TokenizedDocument(
            pid, [q.words for q in sorted(paras, key=lambda q: q.paragraph_index)]
        )
        with open(token_dir / f"{pid}.txt", "w", encoding="utf-8") as handle:
            corpus_ingest.write_token_file(doc, handle)
    config = root / "run.cfg"
    config.write_text(
        "# loop configuration for the cli test\n"
        f"train_annotations={root / 'train.ann'}\n"
        f"test_annotations={root / 'test.ann'}\n"
        f"token_dir={token_dir}\n"
        "iterations=2\n"
        "gamma=0.98\n"
        "seed=11\n"
        "hash_dim=16384\n"
        "step1_epochs=8\n"
        "step1_learning_rate=16.0\n"
        "step3_epochs=3\n"
        "step3_learning_rate=16.0\n"
        "draws=12\n"
        "draw_size=50\n",
        encoding="utf-8",
    )
    return root


class TestIngest:
    def test_valid_bib_exits_zero(self, tmp_path, capsys):
        bib = tmp_path / "anthology.bib"
        bib.write_text(PROCEEDINGS_BIB, encoding="utf-8")
        out_csv = tmp_path / "catalog.csv"
        code, out, err = run_cli(capsys, "ingest", str(bib), "--csv", str(out_csv))
        assert code == 0
        assert "cataloged 1 papers" in out
        header = out_csv.read_text(encoding="utf-8").splitlines()[0]
        assert header == corpus_ingest.CSV_HEADER

    def test_malformed_entries_reported_on_stderr(self, tmp_path, capsys):
        bib = tmp_path / "broken.bib"
        bib.write_text(
            '@article{a, title = "ok"}\n'
            "@article{b, title = {broken\n"
            "@article{c, title = {broken again\n"
            "@article{d, title = {third break\n"
            '@article{e, title = "fine"}\n',
            encoding="utf-8",
        )
        out_csv = tmp_path / "catalog.csv"
        code, out, err = run_cli(capsys, "ingest", str(bib), "--csv", str(out_csv))
        assert code == 0
        assert "skipped 3 malformed entries" in err
        assert len(out_csv.read_text(encoding="utf-8").splitlines()) == 3

    def test_missing_bib_exits_two(self, tmp_path, capsys):
        code, out, err = run_cli(
            capsys, "ingest", str(tmp_path / "nope.bib"), "--csv", str(tmp_path / "x.csv")
        )
        assert code == 2
        assert "error" in err

    def test_fetch_partial_failure_exits_one(self, tmp_path, capsys, monkeypatch):
        bib = tmp_path / "two.bib"
        bib.write_text(
            '@article{a, title = "A", url = "https://x.test/ok"}\n'
            '@article{b, title = "B", url = "https://x.test/bad"}\n',
            encoding="utf-8",
        )

        def fake_fetch(url):
            if url.endswith("bad"):
                raise IOError("404")
            return b"%PDF"

        monkeypatch.setattr(cli, "_urllib_fetcher", fake_fetch)
        code, out, err = run_cli(
            capsys, "ingest", str(bib), "--csv", str(tmp_path / "c.csv"),
            "--fetch", "--pdf-dir", str(tmp_path / "pdfs"),
            "--manifest", str(tmp_path / "manifest.tsv"), "--max-attempts", "1",
        )
        assert code == 1
        assert "1 (50.0%)" in out
        manifest = (tmp_path / "manifest.tsv").read_text(encoding="utf-8")
        assert "failed" in manifest and "ok" in manifest


class TestPartition:
    def make_catalog(self, tmp_path, n_auto=3, n_other=2):
        records = []
        for i in range(n_auto):
            records.append(corpus_ingest.PaperRecord(
                title=f"a{i}", url=f"https://x.test/a{i}",
                booktitle="NAACL 2022", year=2022,
            ))
        for i in range(n_other):
            records.append(corpus_ingest.PaperRecord(
                title=f"o{i}", url=f"https://x.test/o{i}",
                booktitle="COLING 2020", year=2020,
            ))
        path = tmp_path / "catalog.csv"
        with open(path, "w", encoding="utf-8") as handle:
            corpus_ingest.write_catalog_csv(records, handle)
        return path, records

    def test_counts_reported(self, tmp_path, capsys):
        path, records = self.make_catalog(tmp_path)
        ids = tmp_path / "manual.txt"
        ids.write_text(records[0].paper_id + "\n", encoding="utf-8")
        out_path = tmp_path / "partition.tsv"
        code, out, err = run_cli(
            capsys, "partition", str(path), "--manual-ids", str(ids),
            "--out", str(out_path),
        )
        assert code == 0
        assert "manual=1 auto=2 unannotated=2" in out
        lines = out_path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 5
        assert all("\t" in line for line in lines)

    def test_empty_manual_list(self, tmp_path, capsys):
        path, _ = self.make_catalog(tmp_path)
        code, out, err = run_cli(
            capsys, "partition", str(path), "--out", str(tmp_path / "p.tsv")
        )
        assert code == 0
        assert "manual=0" in out

    def test_35_manual_ids_reported(self, tmp_path, capsys):
        path, records = self.make_catalog(tmp_path, n_auto=50, n_other=10)
        ids = tmp_path / "manual.txt"
        ids.write_text(
            "".join(r.paper_id + "\n" for r in records[:35]), encoding="utf-8"
        )
        code, out, err = run_cli(
            capsys, "partition", str(path), "--manual-ids", str(ids),
            "--out", str(tmp_path / "p.tsv"),
        )
        assert code == 0
        assert "manual=35 auto=15 unannotated=10" in out

    def test_unknown_manual_id_exits_two(self, tmp_path, capsys):
        path, _ = self.make_catalog(tmp_path)
        ids = tmp_path / "manual.txt"
        ids.write_text("f" * 64 + "\n", encoding="utf-8")
        code, out, err = run_cli(
            capsys, "partition", str(path), "--manual-ids", str(ids),
            "--out", str(tmp_path / "p.tsv"),
        )
        assert code == 2
        assert "f" * 64 in err


class TestLoop:
    def test_loop_produces_records_and_report(self, workspace, tmp_path, capsys):
        run_dir = tmp_path / "run"
        code, out, err = run_cli(
            capsys, "loop", "--config", str(workspace / "run.cfg"),
            "--run-dir", str(run_dir),
        )
        assert code == 0
        assert (run_dir / "iteration_01.json").exists()
        assert (run_dir / "iteration_02.json").exists()
        assert (run_dir / "comparison.json").exists()
        assert "iteration 1:" in out
        assert "bootstrap: 12 draws of 50" in out
        assert "span_f1" in out

    def test_rerun_identical_report(self, workspace, tmp_path, capsys):
        first_code, first_out, _ = run_cli(
            capsys, "loop", "--config", str(workspace / "run.cfg"),
            "--run-dir", str(tmp_path / "r1"),
        )
        second_code, second_out, _ = run_cli(
            capsys, "loop", "--config", str(workspace / "run.cfg"),
            "--run-dir", str(tmp_path / "r2"),
        )
        assert first_code == second_code == 0
        assert first_out == second_out

    def test_missing_annotations_exit_two(self, workspace, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text(
            "train_annotations=/nonexistent/train.ann\n"
            f"test_annotations={workspace / 'test.ann'}\n"
            f"token_dir={workspace / 'tokens'}\n",
            encoding="utf-8",
        )
        code, out, err = run_cli(capsys, "loop", "--config", str(config))
        assert code == 2
        assert "train_annotations" in err

    def test_unknown_config_key_rejected(self, tmp_path):
        config = tmp_path / "weird.cfg"
        config.write_text("mystery_knob=1\n", encoding="utf-8")
        with pytest.raises(FormatError, match="mystery_knob"):
            cli.read_config(config)

    def test_env_var_run_dir(self, workspace, tmp_path, capsys, monkeypatch):
        run_dir = tmp_path / "envrun"
        monkeypatch.setenv(cli.RUN_DIR_ENV, str(run_dir))
        monkeypatch.chdir(tmp_path)
        code, out, err = run_cli(
            capsys, "loop", "--config", str(workspace / "run.cfg")
        )
        assert code == 0
        assert (run_dir / "comparison.json").exists()


@pytest.fixture(scope="module")
def trained_run(workspace, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("run")
    code = cli.main([
        "loop", "--config", str(workspace / "run.cfg"), "--run-dir", str(run_dir),
    ])
    assert code == 0
    return run_dir


class TestAnnotateEvalCountsDiff:
    def test_annotate_writes_annotations_and_stats(self, workspace, trained_run,
                                                   tmp_path, capsys):
        out_path = tmp_path / "auto.ann"
        stats_path = tmp_path / "stats.json"
        code, out, err = run_cli(
            capsys, "annotate",
            "--model", str(trained_run / "model_iter02.npz"),
            "--tokens", str(workspace / "tokens"),
            "--out", str(out_path), "--gamma", "0.98",
            "--stats-json", str(stats_path),
        )
        assert code == 0
        assert "amb" in out
        paragraphs = dataset.read_annotations(
            open(out_path, encoding="utf-8"), filename=str(out_path)
        )
        assert paragraphs and all(p.provenance == "auto" for p in paragraphs)
        stats = json.loads(stats_path.read_text(encoding="utf-8"))
        assert stats["total_words"] == sum(len(p.words) for p in paragraphs)

    def test_annotate_gamma_out_of_range_exits_two(self, workspace, trained_run,
                                                   tmp_path, capsys):
        code, out, err = run_cli(
            capsys, "annotate",
            "--model", str(trained_run / "model_iter02.npz"),
            "--tokens", str(workspace / "tokens"),
            "--out", str(tmp_path / "x.ann"), "--gamma", "1.01",
        )
        assert code == 2
        assert "gamma" in err

    def test_eval_single_prediction_scores(self, workspace, capsys):
        code, out, err = run_cli(
            capsys, "eval", str(workspace / "test.ann"), str(workspace / "test.ann"),
        )
        assert code == 0
        assert "token_accuracy  1.0000" in out

    def test_eval_bootstrap_two_predictions(self, workspace, capsys):
        code, out, err = run_cli(
            capsys, "eval", str(workspace / "test.ann"),
            str(workspace / "test.ann"), str(workspace / "test.ann"),
            "--draws", "12", "--draw-size", "50", "--seed", "4",
        )
        assert code == 0
        assert "12 draws of 50" in out

    def test_eval_json_output(self, workspace, capsys):
        code, out, err = run_cli(
            capsys, "eval", str(workspace / "test.ann"), str(workspace / "test.ann"),
            "--json",
        )
        assert code == 0
        assert json.loads(out)["f1"] == 1.0

    def test_counts_excludes_o(self, workspace, capsys):
        code, out, err = run_cli(capsys, "counts", str(workspace / "train.ann"))
        assert code == 0
        assert "B-MethodName" in out
        assert "\nO" not in out

    def test_diff_markup_output(self, workspace, capsys):
        code, out, err = run_cli(
            capsys, "diff", str(workspace / "test.ann"), str(workspace / "test.ann"),
        )
        assert code == 0
        assert "[+" in out
        assert "[-" not in out


class TestHelp:
    @pytest.mark.parametrize(
        "command",
        ["ingest", "partition", "loop", "annotate", "eval", "counts", "diff"],
    )
    def test_help_exits_zero(self, command, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main([command, "--help"])
        assert excinfo.value.code == 0

    def test_top_level_help(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["--help"])
        assert excinfo.value.code == 0
