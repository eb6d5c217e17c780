import numpy as np
import pytest

from pixelpose.cli import main
from pixelpose.config import RunConfig, save_config
from pixelpose.training import MetricsWriter

from conftest import tiny_run_config


class TestDemoCommand:
    def test_writes_trajectory_files(self, tmp_path, capsys):
        rc = main(
            ["demo", "--task", "lift_block", "--demos", "2", "--out",
             str(tmp_path / "demos"), "--seed", "3"]
        )
        assert rc == 0
        files = sorted((tmp_path / "demos").glob("*.traj"))
        assert len(files) == 2
        assert "wrote" in capsys.readouterr().out


class TestInspectKeyframes:
    def test_prints_keyframe_table(self, tmp_path, capsys):
        main(["demo", "--task", "lift_block", "--demos", "1", "--out",
              str(tmp_path), "--seed", "0"])
        traj_file = next(tmp_path.glob("*.traj"))
        rc = main(["inspect-keyframes", "--traj", str(traj_file)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "gripper" in out and "final" in out
        assert "label_x" in out

    def test_synthetic_toggle_trajectory_rows(self, tmp_path, capsys):
        # hand-built trajectory with gripper toggles at 10 and 20
        from test_keyframes import build_traj, walk
        from pixelpose.teacher import save_trajectory

        grip = [1.0] * 40
        for t in range(10, 20):
            grip[t] = 0.0
        traj = build_traj(walk(40, 0.005), grip)
        path = tmp_path / "toggles.traj"
        save_trajectory(path, traj)
        main(["inspect-keyframes", "--traj", str(path)])
        out = capsys.readouterr().out
        rows = [
            l.split() for l in out.splitlines() if l.strip() and l.strip()[0].isdigit()
        ]
        assert [r[0] for r in rows] == ["10", "20", "39"]
        assert rows[0][1] == "gripper"
        assert "final" in rows[2][1]


class TestTrainAndReport:
    def test_train_twice_identical_metrics(self, tmp_path, capsys):
        cfg = tiny_run_config()
        cfg_path = tmp_path / "run.cfg"
        save_config(cfg_path, cfg)
        main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "seed_0" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "seed_0" / "metrics.csv").read_bytes()
        assert a == b

    def test_train_overrides(self, tmp_path):
        cfg = tiny_run_config()
        cfg_path = tmp_path / "run.cfg"
        save_config(cfg_path, cfg)
        main(
            ["train", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
             "--seed", "9", "--toggle", "qattention=off"]
        )
        assert (tmp_path / "o" / "seed_9" / "metrics.csv").exists()
        from pixelpose.config import load_config

        saved = load_config(tmp_path / "o" / "config.cfg")
        assert saved.use_qattention is False
        assert saved.seeds == (9,)

    def test_bad_toggle_rejected(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["train", "--out", str(tmp_path), "--toggle", "bogus=maybe"])

    def test_report_aggregates_and_is_idempotent(self, tmp_path, capsys):
        for name, rates in (("s0", [0.0, 0.5]), ("s1", [0.2, 0.9])):
            d = tmp_path / "runs" / name
            d.mkdir(parents=True)
            w = MetricsWriter(d / "metrics.csv")
            for k, r in enumerate(rates, start=1):
                w.log_eval(k * 100, k * 100, r)
        out = tmp_path / "curve.csv"
        main(["report", "--runs", str(tmp_path / "runs"), "--out", str(out)])
        first = out.read_bytes()
        main(["report", "--runs", str(tmp_path / "runs"), "--out", str(out)])
        assert out.read_bytes() == first
        lines = first.decode().splitlines()
        assert lines[0] == "env_step,mean,min,max,n"
        assert len(lines) == 3  # two evaluation rounds
        assert lines[1].split(",")[0] == "100"

    def test_report_without_csvs_fails(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "c.csv")])


class TestInspectQmap:
    def test_dumps_numeric_grids(self, tmp_path, capsys):
        cfg = tiny_run_config(env_steps=2, eval_interval=0, demo_count=1)
        cfg_path = tmp_path / "run.cfg"
        save_config(cfg_path, cfg)
        main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r")])
        main(["demo", "--task", "lift_block", "--demos", "1", "--out",
              str(tmp_path / "d"), "--seed", "1"])
        traj = next((tmp_path / "d").glob("*.traj"))
        ckpt = tmp_path / "r" / "seed_0" / "checkpoints" / "latest.ckpt"
        rc = main(
            ["inspect-qmap", "--ckpt", str(ckpt), "--traj", str(traj),
             "--out", str(tmp_path / "q"), "--frame", "0"]
        )
        assert rc == 0
        grid = np.loadtxt(tmp_path / "q" / "qmap_0000.csv", delimiter=",")
        assert grid.shape == (64, 64)
        chosen = (tmp_path / "q" / "chosen.csv").read_text().splitlines()
        assert chosen[0] == "frame,x,y"
        assert chosen[1].startswith("0,")


class TestBCCommand:
    def test_bc_runs_on_demo_dir(self, tmp_path, capsys):
        main(["demo", "--task", "lift_block", "--demos", "2", "--out",
              str(tmp_path / "d"), "--seed", "0"])
        cfg = tiny_run_config(eval_episodes=2)
        cfg_path = tmp_path / "run.cfg"
        save_config(cfg_path, cfg)
        rc = main(
            ["bc", "--demo-dir", str(tmp_path / "d"), "--epochs", "1",
             "--out", str(tmp_path / "bc"), "--config", str(cfg_path)]
        )
        assert rc == 0
        assert (tmp_path / "bc" / "bc.ckpt").exists()

    def test_bc_empty_dir_fails(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(SystemExit):
            main(["bc", "--demo-dir", str(tmp_path / "empty"), "--out",
                  str(tmp_path / "o")])


class TestUsageErrors:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code != 0

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["report", "--out", "x.csv"])
        assert exc.value.code != 0
