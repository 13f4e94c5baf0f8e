import os

import numpy as np
import pytest

from corrhash import corpus as cp
from corrhash.cli import build_parser, main
from corrhash.synthetic import topic_corpus

SMALL = ["--hidden", "16,16", "--epochs", "2", "--batch-size", "20", "--k", "2", "--v", "2"]


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    c = topic_corpus(200, n_topics=3, vocab_size=80, seed=0)
    cp.write_corpus(c, tmp_path / "corpus.txt")
    cp.write_splits(c.splits, tmp_path / "splits.txt")
    monkeypatch.chdir(tmp_path)
    return tmp_path


def files(root):
    return {os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs}


class TestUsage:
    def test_missing_config(self, workdir, capsys):
        assert main(["train", "--config", "missing.cfg"]) == 2
        assert "config not found" in capsys.readouterr().err

    def test_unknown_config_key(self, workdir, capsys):
        (workdir / "bad.cfg").write_text("learning_speed = 3\n")
        assert main(["train", "--config", "bad.cfg"]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_unknown_flag(self, workdir):
        assert main(["train", "--bogus"]) == 2

    def test_missing_input(self, workdir, capsys):
        assert main(["train", "--corpus", "nope.txt", "--splits", "splits.txt"]) == 2
        assert "corpus not found" in capsys.readouterr().err

    def test_bad_train_value(self, workdir, capsys):
        assert main(["train", "--corpus", "corpus.txt", "--splits", "splits.txt", "--m", "0"]) == 2

    def test_runtime_failure(self, workdir, capsys):
        (workdir / "broken.txt").write_text("1\t3:1 2:1\n")
        assert main(["train", "--corpus", "broken.txt", "--splits", "splits.txt"]) == 1
        assert "not ascending" in capsys.readouterr().err

    def test_every_subcommand_documents_every_flag(self, capsys):
        parser = build_parser()
        subs = parser._subparsers._group_actions[0].choices
        assert set(subs) == {"build-vocab", "train", "hash", "query", "eval", "verify", "bench"}
        for name, sub in subs.items():
            with pytest.raises(SystemExit) as exc:
                parser.parse_args([name, "--help"])
            assert exc.value.code == 0
            text = capsys.readouterr().out
            for act in sub._actions:
                for opt in act.option_strings:
                    assert opt in text
                assert act.help, (name, act.dest)
            assert "--seed" in text and "--config" in text


class TestPipeline:
    def test_train_hash_query_eval(self, workdir, capsys):
        before = files(workdir)
        (workdir / "run.cfg").write_text("# small run\nm = 8\nepochs = 2  # short\nhidden = 16,16\n")
        before.add("run.cfg")
        assert main(["train", "--config", "run.cfg", "--corpus", "corpus.txt", "--splits", "splits.txt",
                     "--batch-size", "20", "--v", "2", "--k", "2", "--output-dir", "out"]) == 0
        log = (workdir / "out" / "train.log").read_text().splitlines()
        assert log[0] == "iter\tloss\tval_precision\tlr\telapsed_s" and len(log) == 3
        assert main(["hash", "--checkpoint", "out/model.ckpt", "--corpus", "corpus.txt",
                     "--splits", "splits.txt", "--output-dir", "out"]) == 0
        codes = (workdir / "out" / "codes.txt").read_text().splitlines()
        assert codes[0] == "# m=8" and len(codes) == 201
        assert main(["query", "--codes", "out/codes.txt", "--doc-id", "5", "--k-at", "3",
                     "--output-dir", "out"]) == 0
        rows = (workdir / "out" / "query_5.tsv").read_text().splitlines()
        assert len(rows) == 4 and all(r.split("\t")[1] != "5" for r in rows[1:])
        assert main(["eval", "--corpus", "corpus.txt", "--splits", "splits.txt", "--checkpoint",
                     "out/model.ckpt", "--bits", "8,16", "--k-at", "10", "--output-dir", "out"]) == 0
        table = (workdir / "out" / "precision.tsv").read_text().splitlines()
        assert table[0] == "method\t8 bits\t16 bits"
        assert table[1].startswith("model\t") and table[1].endswith("n.a.")
        assert table[2].startswith("lsh\t")
        csv_rows = (workdir / "out" / "precision.csv").read_text().splitlines()
        assert csv_rows[0] == "method,bits,precision_at_10" and len(csv_rows) == 4
        assert {f for f in files(workdir) - before if not f.startswith("out" + os.sep)} == set()

    def test_eval_trains_per_width(self, workdir):
        assert main(["eval", "--corpus", "corpus.txt", "--splits", "splits.txt", "--bits", "4,8",
                     "--no-lsh", "--output-dir", "ev"] + SMALL) == 0
        assert {"model_4.ckpt", "model_8.ckpt", "precision.tsv", "precision.csv"} <= set(os.listdir("ev"))

    def test_train_is_seed_deterministic(self, workdir):
        for d in ("a", "b"):
            assert main(["train", "--corpus", "corpus.txt", "--splits", "splits.txt", "--m", "8",
                         "--seed", "3", "--output-dir", d] + SMALL) == 0
        assert (workdir / "a" / "model.ckpt").read_bytes() == (workdir / "b" / "model.ckpt").read_bytes()

    def test_flags_override_config(self, workdir):
        (workdir / "c.cfg").write_text("m = 4\noutput_dir = fromcfg\n")
        assert main(["train", "--config", "c.cfg", "--corpus", "corpus.txt", "--splits", "splits.txt",
                     "--m", "6"] + SMALL) == 0
        from corrhash.model import load_checkpoint

        assert load_checkpoint(workdir / "fromcfg" / "model.ckpt").m == 6

    def test_build_vocab(self, workdir):
        (workdir / "tok.txt").write_text("1\ta b c\n2,3\tb c d\n1\tc c\n")
        assert main(["build-vocab", "--input", "tok.txt", "--output-dir", "v", "--seed", "1"]) == 0
        vocab = cp.load_vocab(workdir / "v" / "vocab.txt")
        assert vocab.terms[0] == "c" and vocab.df.tolist()[0] == 3
        c = cp.load_corpus(workdir / "v" / "corpus.txt", workdir / "v" / "splits.txt")
        assert len(c) == 3 and c.documents[2].counts.tolist() == [2]

    def test_query_unknown_doc(self, workdir):
        (workdir / "codes.txt").write_text("# m=4\n0 0f 1\n")
        assert main(["query", "--codes", "codes.txt", "--doc-id", "9", "--output-dir", "q"]) == 2

    def test_bench_grid(self, workdir):
        assert main(["bench", "--synthetic-docs", "100", "--v-grid", "0,2", "--k-grid", "1,3",
                     "--hidden", "8", "--output-dir", "bench"]) == 0
        rows = (workdir / "bench" / "bench.tsv").read_text().splitlines()
        assert rows[0] == "v\tk\tseconds_per_epoch" and len(rows) == 5

    @pytest.mark.slow
    def test_verify_exit_zero(self, workdir, capsys):
        assert main(["verify", "--seed", "7", "--fast", "--output-dir", "ver"]) == 0
        assert (workdir / "ver" / "verify.tsv").exists()
        assert "[FAIL]" not in capsys.readouterr().out
