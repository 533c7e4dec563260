import csv
import json

import numpy as np
import pytest

from robustpt import config as cfgmod
from robustpt.bounds import REPORT_HEADER
from robustpt.cli import EVAL_HEADER, eval_grid, run
from robustpt.envs import read_pgm
from robustpt.policy import load_params, save_params
from robustpt.trainer import METRICS_HEADER, initial_params

SMALL = {
    "train.M": 2,
    "train.N": 2,
    "train.K": 2,
    "train.contexts": 2,
    "train.batch_size": 16,
    "policy.hidden": [4],
    "train.eval_episodes": 2,
    "eval.episodes": 3,
}


def write_config(tmp_path, name="cfg.json", **kw):
    cfg = dict(SMALL)
    cfg.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfigErrors:
    def test_unknown_key(self, tmp_path, capsys):
        path = write_config(tmp_path, **{"train.bogus": 1})
        assert run(["train", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "config error [train.bogus]" in capsys.readouterr().err

    def test_bad_value_type(self, tmp_path, capsys):
        path = write_config(tmp_path, **{"loss.alpha": "big"})
        assert run(["train", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "config error [loss.alpha]" in capsys.readouterr().err

    def test_domain_value(self, tmp_path, capsys):
        path = write_config(tmp_path, **{"curriculum.obs_range": [0.0]})
        assert run(["train", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "[curriculum.obs_range]" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert run(["train", "--config", str(tmp_path / "nope.json")]) == 2
        assert "[--config]" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert run(["verify-bounds", "--config", str(p)]) == 2
        assert "[--config]" in capsys.readouterr().err

    def test_eval_without_checkpoint(self, tmp_path, capsys):
        path = write_config(tmp_path)
        assert run(["eval", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "[eval.checkpoint]" in capsys.readouterr().err

    def test_demo_bad_channel(self, tmp_path, capsys):
        path = write_config(tmp_path, **{"demo.channels": ["sparkle"]})
        assert run(["perturb-demo", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "[demo.channels]" in capsys.readouterr().err

    def test_demo_bad_level(self, tmp_path, capsys):
        path = write_config(tmp_path, **{"demo.levels": [1.5]})
        assert run(["perturb-demo", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "[demo.levels]" in capsys.readouterr().err


class TestResolvedConfig:
    def test_defaults_and_overrides_echoed(self, tmp_path):
        out = tmp_path / "o"
        path = write_config(tmp_path)
        assert run(["perturb-demo", "--config", path, "--seed", "7", "--out", str(out)]) == 0
        echoed = json.loads((out / "config.resolved.json").read_text())
        assert set(echoed) == set(cfgmod.DEFAULTS)
        assert echoed["seed"] == 7 and echoed["out"] == str(out)
        assert echoed["train.M"] == 2
        assert echoed["loss.alpha"] == 0.005

    def test_rerun_from_echo_reproduces(self, tmp_path):
        out = tmp_path / "a"
        assert run(["train", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        echo = out / "config.resolved.json"
        out2 = tmp_path / "b"
        assert run(["train", "--config", str(echo), "--out", str(out2)]) == 0
        assert (out / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()


class TestTrainEval:
    def test_train_outputs(self, tmp_path):
        out = tmp_path / "o"
        assert run(["train", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 3
        p = load_params(out / "checkpoints" / "final.ckpt")
        assert p.obs_dim == 2 and p.action_dim == 2

    def test_train_twice_byte_identical(self, tmp_path):
        path = write_config(tmp_path)
        run(["train", "--config", path, "--out", str(tmp_path / "a")])
        run(["train", "--config", path, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_seed_changes_metrics(self, tmp_path):
        path = write_config(tmp_path)
        run(["train", "--config", path, "--seed", "1", "--out", str(tmp_path / "a")])
        run(["train", "--config", path, "--seed", "2", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_behavior_clone_init(self, tmp_path):
        out = tmp_path / "o"
        path = write_config(
            tmp_path,
            **{"env.kind": "point-image", "env.params": {"G": 8, "horizon": 5}, "perturb.channel": "rotation",
               "train.bc_contexts": 4, "train.bc_steps": 5},
        )
        assert run(["train", "--config", path, "--out", str(out)]) == 0
        p = load_params(out / "checkpoints" / "final.ckpt")
        assert p.obs_dim == 8 * 8 + 2

    def test_behavior_clone_needs_expert(self, tmp_path, capsys):
        path = write_config(tmp_path, **{"train.bc_contexts": 4})
        assert run(["train", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "config error [train.bc_contexts]: " in capsys.readouterr().err

    def test_eval_grid_rows(self, tmp_path):
        out = tmp_path / "o"
        assert run(["train", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        ckpt = str(out / "checkpoints" / "final.ckpt")
        path = write_config(tmp_path, "eval.json", **{"eval.checkpoint": ckpt})
        assert run(["eval", "--config", path, "--out", str(tmp_path / "e")]) == 0
        rows = list(csv.reader((tmp_path / "e" / "eval.csv").read_text().splitlines()))
        assert ",".join(rows[0]) == EVAL_HEADER
        cfg = cfgmod.resolve(json.loads(open(path).read()))
        names = [name for name, _ in eval_grid("linear", cfg)]
        assert [r[0] for r in rows[1:]] == names
        assert names == ["clean", "vector-ball", "action-0.1", "action-0.2", "action-0.3", "vector-ball+action"]
        for r in rows[1:]:
            sr = float(r[1])
            assert 0.0 <= sr <= 1.0
            assert round(sr * 3) == pytest.approx(sr * 3)
            assert np.isfinite(float(r[2]))

    def test_eval_twice_byte_identical(self, tmp_path):
        out = tmp_path / "o"
        run(["train", "--config", write_config(tmp_path), "--out", str(out)])
        path = write_config(tmp_path, "eval.json", **{"eval.checkpoint": str(out / "checkpoints" / "final.ckpt")})
        run(["eval", "--config", path, "--out", str(tmp_path / "a")])
        run(["eval", "--config", path, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()

    def test_image_eval_grid(self):
        cfg = cfgmod.resolve({})
        names = [n for n, _ in eval_grid("point-image", cfg)]
        assert names == [
            "clean", "shift", "rotation", "color", "occlusion", "erasing",
            "action-0.1", "action-0.2", "action-0.3", "rotation+action",
        ]

    def test_eval_dimension_mismatch(self, tmp_path, capsys):
        out = tmp_path / "o"
        run(["train", "--config", write_config(tmp_path), "--out", str(out)])
        path = write_config(
            tmp_path, "eval.json",
            **{"eval.checkpoint": str(out / "checkpoints" / "final.ckpt"), "env.kind": "point-image", "env.params": {"G": 8}},
        )
        assert run(["eval", "--config", path, "--out", str(tmp_path / "e")]) == 2
        assert "[eval.checkpoint]" in capsys.readouterr().err

    def test_image_eval_ignores_training_channel(self, tmp_path):
        out = tmp_path / "o"
        img = {"env.kind": "point-image", "env.params": {"G": 8, "horizon": 5}}
        assert run(["train", "--config", write_config(tmp_path, **img, **{"perturb.channel": "mixed"}), "--out", str(out)]) == 0
        path = write_config(tmp_path, "eval.json", **img, **{"eval.checkpoint": str(out / "checkpoints" / "final.ckpt")})
        assert run(["eval", "--config", path, "--out", str(tmp_path / "e")]) == 0
        rows = (tmp_path / "e" / "eval.csv").read_text().splitlines()
        assert [r.split(",")[0] for r in rows[1:]] == [n for n, _ in eval_grid("point-image", cfgmod.resolve({}))]

    def test_numerical_abort_exit_code(self, tmp_path, capsys):
        tc = cfgmod.train_config(cfgmod.resolve(SMALL))
        p = initial_params(tc, tc.build_env())
        arrays = p.arrays()
        arrays[0] = np.full_like(arrays[0], np.nan)
        ckpt = tmp_path / "nan.ckpt"
        save_params(p.with_arrays(arrays), ckpt)
        out = tmp_path / "o"
        path = write_config(tmp_path, **{"train.init_checkpoint": str(ckpt)})
        assert run(["train", "--config", path, "--out", str(out)]) == 4
        assert "numerical abort" in capsys.readouterr().err
        assert (out / "abort_state.json").exists()


class TestVerifyBounds:
    def test_shipped_suite(self, tmp_path):
        out = tmp_path / "o"
        assert run(["verify-bounds", "--out", str(out)]) == 0
        rows = list(csv.reader((out / "bounds.csv").read_text().splitlines()))
        assert ",".join(rows[0]) == REPORT_HEADER
        col = rows[0].index("satisfied")
        assert len(rows) > 1 and all(r[col] == "true" for r in rows[1:])
        checks = (out / "bounds_checks.txt").read_text()
        assert "FAIL" not in checks and "audit" in checks

    def test_bad_suite(self, tmp_path, capsys):
        path = write_config(tmp_path, **{"bounds.suite": [{"name": "x", "kind": "nope"}]})
        assert run(["verify-bounds", "--config", path, "--out", str(tmp_path / "o")]) == 2
        assert "[bounds" in capsys.readouterr().err


class TestPerturbDemo:
    def test_files_and_zero_level_identity(self, tmp_path):
        out = tmp_path / "o"
        assert run(["perturb-demo", "--out", str(out)]) == 0
        names = sorted(p.name for p in out.glob("*.pgm"))
        want = ["clean.pgm"] + [
            f"{ch}_{m}.pgm" for ch in ("shift", "rotation", "color", "occlusion", "erasing") for m in ("0000", "0500", "1000")
        ]
        assert names == sorted(want)
        clean = (out / "clean.pgm").read_bytes()
        for ch in ("shift", "rotation", "color", "occlusion", "erasing"):
            assert (out / f"{ch}_0000.pgm").read_bytes() == clean
        assert (out / "rotation_1000.pgm").read_bytes() != clean
        img = read_pgm(out / "clean.pgm")
        assert img.shape == (32, 32)

    def test_deterministic(self, tmp_path):
        run(["perturb-demo", "--out", str(tmp_path / "a")])
        run(["perturb-demo", "--out", str(tmp_path / "b")])
        for p in (tmp_path / "a").glob("*.pgm"):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
