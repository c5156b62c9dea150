import json
from pathlib import Path

import pytest

from mssan.cli import main
from mssan.data import gen_order_task, gen_tree_task, save_conllu

FIXTURES = Path(__file__).parent / "fixtures"


def run_config_json(tmp_path, **overrides):
    cfg = {
        "d_e": 8,
        "n_heads": 2,
        "d_h": 16,
        "distance_cycle": ["word"],
        "epochs": 1,
        "batch_size": 8,
        "seed": 0,
        "cls_hidden": 8,
    }
    cfg.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture()
def order_file(tmp_path):
    path = tmp_path / "order.conllu"
    save_conllu(gen_order_task(30, 6, seed=0), path)
    return path


class TestTrainEval:
    def test_train_then_eval(self, tmp_path, order_file, capsys):
        cfg = run_config_json(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--data", str(order_file), "--out", str(out)]) == 0
        assert (out / "params.bin").exists()
        assert (out / "config.json").exists()
        assert (out / "vocab.json").exists()
        assert (out / "metrics.csv").exists()
        code = main(["eval", "--checkpoint", str(out), "--data", str(order_file)])
        assert code == 0
        assert "accuracy" in capsys.readouterr().out

    def test_train_with_data_dir_and_test_split(self, tmp_path):
        data_dir = tmp_path / "data"
        data_dir.mkdir()
        save_conllu(gen_order_task(24, 6, seed=1), data_dir / "train.conllu")
        save_conllu(gen_order_task(8, 6, seed=2), data_dir / "test.conllu")
        cfg = run_config_json(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--data", str(data_dir), "--out", str(out)]) == 0

    def test_missing_data_is_validation_failure(self, tmp_path):
        cfg = run_config_json(tmp_path)
        code = main(["train", "--config", str(cfg), "--data", str(tmp_path / "nope.conllu"), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_bad_config_is_validation_failure(self, tmp_path, order_file):
        cfg = run_config_json(tmp_path, n_heads=3)
        code = main(["train", "--config", str(cfg), "--data", str(order_file), "--out", str(tmp_path / "o")])
        assert code == 2


class TestOtherCommands:
    def test_gradcheck_default_passes(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "gradcheck passed" in out

    def test_bench_smoke(self, capsys):
        code = main(["bench", "--variant", "mssan", "--d_e", "12", "--len", "5", "--batch", "2", "--batches", "2"])
        assert code == 0
        assert "median_ms_per_batch" in capsys.readouterr().out

    def test_ablation(self, tmp_path, order_file):
        cfg = run_config_json(tmp_path)
        out = tmp_path / "ablation.csv"
        assert main(["ablation", "--config", str(cfg), "--data", str(order_file), "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 9

    def test_emit_masks_on_fixture(self, tmp_path):
        enc = {"d_e": 12, "n_heads": 6, "d_h": 24,
               "distance_cycle": ["word", "dependency", "none"]}
        cfg = tmp_path / "enc.json"
        cfg.write_text(json.dumps(enc))
        out = tmp_path / "masks"
        code = main([
            "emit-masks",
            "--sentence-file", str(FIXTURES / "ballgame.conllu"),
            "--config", str(cfg),
            "--out", str(out),
        ])
        assert code == 0
        assert (out / "head2_forward_dependency.csv").exists()

    def test_heatmap_from_checkpoint(self, tmp_path):
        data = tmp_path / "tree.conllu"
        save_conllu(gen_tree_task(20, 8, seed=3), data)
        cfg = run_config_json(
            tmp_path, n_heads=6, d_e=12, d_h=24,
            distance_cycle=["word", "dependency", "none"],
        )
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(out)]) == 0
        maps = tmp_path / "maps"
        code = main([
            "heatmap",
            "--checkpoint", str(out),
            "--sentence-file", str(data),
            "--out", str(maps),
            "--index", "1",
        ])
        assert code == 0
        assert len(list(maps.glob("*.csv"))) == 6
        assert len(list(maps.glob("*.pgm"))) == 6

    def test_sentence_index_out_of_range(self, tmp_path, order_file):
        enc = {"d_e": 8, "n_heads": 2, "d_h": 16, "distance_cycle": ["word"]}
        cfg = tmp_path / "enc.json"
        cfg.write_text(json.dumps(enc))
        code = main([
            "emit-masks", "--sentence-file", str(order_file),
            "--config", str(cfg), "--out", str(tmp_path / "m"), "--index", "99",
        ])
        assert code == 2

    def test_thread_env_validated(self, monkeypatch, capsys):
        monkeypatch.setenv("MSSAN_THREADS", "-2")
        assert main(["gradcheck", "--seed", "0"]) == 2
