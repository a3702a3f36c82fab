import numpy as np
import pytest

from nariqa.checkpoint import load_checkpoint
from nariqa.cli import main
from nariqa.data import generate_synthetic_hq, save_image
from nariqa.network import init_params

TINY_CONFIG = """\
# tiny end-to-end configuration
patch_count = 2
patch_size = 16
backbone_channels = 4,6,8,8
proj_channels = 4
pooled_size = 2
depth_lq = 1
depth_diff = 2
epochs = 1
batch_size = 4
seed = 0
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train-teacher -> distill-student, shared by the tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    assert main(["gen-data", "--out", str(data), "--images", "6",
                 "--distortions-per", "2", "--seed", "3", "--pool", "3"]) == 0
    teacher = root / "teacher.ckpt"
    assert main(["train-teacher", "--data", str(data / "manifest.csv"),
                 "--config", str(cfg), "--out", str(teacher)]) == 0
    student = root / "student.ckpt"
    assert main(["distill-student", "--data", str(data / "manifest.csv"),
                 "--pool", str(data / "pool"), "--teacher", str(teacher),
                 "--config", str(cfg), "--out", str(student)]) == 0
    return {"root": root, "data": data, "cfg": cfg, "teacher": teacher,
            "student": student}


class TestGenData:
    def test_counts_and_layout(self, tmp_path, capsys):
        out = tmp_path / "ds"
        assert main(["gen-data", "--out", str(out), "--images", "2",
                     "--distortions-per", "2", "--seed", "1", "--pool", "2"]) == 0
        captured = capsys.readouterr().out
        assert "4 samples" in captured and "2 pristine" in captured
        manifest = (out / "manifest.csv").read_text().splitlines()
        assert manifest[0] == "id,lq,fr,mos"
        assert len(manifest) == 5
        assert len(list((out / "pool").glob("*.png"))) == 2

    def test_same_seed_identical_manifest_bytes(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            main(["gen-data", "--out", str(out), "--images", "3",
                  "--distortions-per", "2", "--seed", "9"])
        assert (a / "manifest.csv").read_bytes() == (b / "manifest.csv").read_bytes()

    def test_zero_distortions_warns(self, tmp_path, capsys):
        out = tmp_path / "empty"
        assert main(["gen-data", "--out", str(out), "--images", "2",
                     "--distortions-per", "0", "--seed", "0"]) == 0
        assert "warning" in capsys.readouterr().err
        assert len((out / "manifest.csv").read_text().splitlines()) == 1

    def test_unwritable_out_exits_2(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["gen-data", "--out", str(blocker / "sub"), "--images", "2",
                     "--distortions-per", "1"]) == 2


class TestTrainTeacher:
    def test_emits_loadable_checkpoint_and_report(self, pipeline):
        ckpt = load_checkpoint(pipeline["teacher"])
        assert ckpt.stage == "teacher"
        report = (pipeline["teacher"].parent / "teacher.ckpt.report.csv").read_text()
        assert report.splitlines()[0] == "epoch,label_loss,distill_loss,total_loss"

    def test_missing_config_key_exits_4(self, pipeline, tmp_path, capsys):
        cfg = tmp_path / "incomplete.cfg"
        cfg.write_text(TINY_CONFIG.replace("epochs = 1\n", ""))
        code = main(["train-teacher", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--config", str(cfg), "--out", str(tmp_path / "t.ckpt")])
        assert code == 4
        assert "epochs" in capsys.readouterr().err

    def test_unknown_config_key_exits_4(self, pipeline, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(TINY_CONFIG + "momentum = 0.9\n")
        code = main(["train-teacher", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--config", str(cfg), "--out", str(tmp_path / "t.ckpt")])
        assert code == 4
        assert "momentum" in capsys.readouterr().err

    def test_zero_epochs_equals_initialization(self, pipeline, tmp_path):
        out = tmp_path / "init.ckpt"
        assert main(["train-teacher", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--config", str(pipeline["cfg"]), "--out", str(out),
                     "--epochs", "0"]) == 0
        ckpt = load_checkpoint(out)
        ref = init_params(ckpt.arch, seed=0)
        for name, arr in ckpt.tensors.items():
            assert arr.tobytes() == ref[name].data.tobytes()

    def test_manifest_without_fr_exits_3(self, pipeline, tmp_path):
        manifest = (pipeline["data"] / "manifest.csv").read_text().splitlines()
        rows = [manifest[0]] + [",".join(
            line.split(",")[:2] + ["-"] + line.split(",")[3:])
            for line in manifest[1:]]
        broken_dir = tmp_path
        (broken_dir / "manifest.csv").write_text("\n".join(rows) + "\n")
        import shutil
        shutil.copytree(pipeline["data"] / "images", broken_dir / "images")
        code = main(["train-teacher", "--data", str(broken_dir / "manifest.csv"),
                     "--config", str(pipeline["cfg"]),
                     "--out", str(tmp_path / "x.ckpt")])
        assert code == 3


class TestDistillStudent:
    def test_student_checkpoint_stage(self, pipeline):
        assert load_checkpoint(pipeline["student"]).stage == "student"

    def test_no_kd_zeroes_distill_column(self, pipeline, tmp_path):
        out = tmp_path / "nokd.ckpt"
        assert main(["distill-student", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--pool", str(pipeline["data"] / "pool"),
                     "--teacher", str(pipeline["teacher"]),
                     "--config", str(pipeline["cfg"]), "--out", str(out),
                     "--no-kd"]) == 0
        lines = (tmp_path / "nokd.ckpt.report.csv").read_text().splitlines()[1:]
        assert all(float(line.split(",")[2]) == 0.0 for line in lines)

    def test_nar_mode_aligned_fr(self, pipeline, tmp_path):
        out = tmp_path / "aligned.ckpt"
        assert main(["distill-student", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--teacher", str(pipeline["teacher"]),
                     "--config", str(pipeline["cfg"]), "--out", str(out),
                     "--nar-mode", "aligned_fr"]) == 0
        assert load_checkpoint(out).meta["nar_mode"] == "aligned_fr"

    def test_student_as_teacher_exits_5(self, pipeline, tmp_path):
        code = main(["distill-student", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--pool", str(pipeline["data"] / "pool"),
                     "--teacher", str(pipeline["student"]),
                     "--config", str(pipeline["cfg"]),
                     "--out", str(tmp_path / "x.ckpt")])
        assert code == 5

    def test_missing_pool_exits_6(self, pipeline, tmp_path):
        code = main(["distill-student", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--teacher", str(pipeline["teacher"]),
                     "--config", str(pipeline["cfg"]),
                     "--out", str(tmp_path / "x.ckpt")])
        assert code == 6


class TestEvaluate:
    def test_single_shuffle_prints_zero_std(self, pipeline, tmp_path, capsys):
        out = tmp_path / "report.csv"
        assert main(["evaluate", "--ckpt", str(pipeline["student"]),
                     "--data", str(pipeline["data"] / "manifest.csv"),
                     "--pool", str(pipeline["data"] / "pool"),
                     "--shuffles", "1", "--seed", "0", "--out", str(out)]) == 0
        assert "±0.0000" in capsys.readouterr().out

    def test_deterministic_report_bytes(self, pipeline, tmp_path):
        outs = []
        for name in ("r1.csv", "r2.csv"):
            out = tmp_path / name
            assert main(["evaluate", "--ckpt", str(pipeline["student"]),
                         "--data", str(pipeline["data"] / "manifest.csv"),
                         "--pool", str(pipeline["data"] / "pool"),
                         "--shuffles", "3", "--seed", "7", "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_teacher_checkpoint_evaluates_aligned(self, pipeline, tmp_path, capsys):
        out = tmp_path / "teacher_report.csv"
        assert main(["evaluate", "--ckpt", str(pipeline["teacher"]),
                     "--data", str(pipeline["data"] / "manifest.csv"),
                     "--shuffles", "3", "--out", str(out)]) == 0
        assert "±0.0000" in capsys.readouterr().out

    def test_nr_checkpoint_ignores_pool_with_warning(self, pipeline, tmp_path, capsys):
        nr = tmp_path / "nr.ckpt"
        assert main(["distill-student", "--data", str(pipeline["data"] / "manifest.csv"),
                     "--teacher", str(pipeline["teacher"]),
                     "--config", str(pipeline["cfg"]), "--out", str(nr),
                     "--nar-mode", "none"]) == 0
        capsys.readouterr()
        out = tmp_path / "nr_report.csv"
        assert main(["evaluate", "--ckpt", str(nr),
                     "--data", str(pipeline["data"] / "manifest.csv"),
                     "--pool", str(pipeline["data"] / "pool"),
                     "--shuffles", "4", "--out", str(out)]) == 0
        captured = capsys.readouterr()
        assert "ignoring --pool" in captured.err
        assert "±0.0000" in captured.out


class TestScore:
    def test_deterministic_output(self, pipeline, tmp_path, capsys):
        img = pipeline["data"] / "images"
        image = sorted(img.glob("*.png"))[0]
        ref = sorted((pipeline["data"] / "pool").glob("*.png"))[0]
        argv = ["score", "--ckpt", str(pipeline["student"]), "--image", str(image),
                "--ref", str(ref), "--seed", "5"]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first
        assert first.startswith("score: ")
        assert "crops:" in first
        value = float(first.splitlines()[0].split(": ")[1])
        assert 0.0 <= value <= 100.0

    def test_missing_ref_exits_6(self, pipeline, tmp_path):
        image = sorted((pipeline["data"] / "images").glob("*.png"))[0]
        assert main(["score", "--ckpt", str(pipeline["student"]),
                     "--image", str(image)]) == 6

    def test_undecodable_image_exits_7(self, pipeline, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image at all")
        ref = sorted((pipeline["data"] / "pool").glob("*.png"))[0]
        assert main(["score", "--ckpt", str(pipeline["student"]),
                     "--image", str(bad), "--ref", str(ref)]) == 7

    def test_nr_checkpoint_needs_no_ref(self, pipeline, tmp_path, capsys):
        nr = tmp_path / "nr.ckpt"
        main(["distill-student", "--data", str(pipeline["data"] / "manifest.csv"),
              "--teacher", str(pipeline["teacher"]), "--config", str(pipeline["cfg"]),
              "--out", str(nr), "--nar-mode", "none"])
        capsys.readouterr()
        image = sorted((pipeline["data"] / "images").glob("*.png"))[0]
        assert main(["score", "--ckpt", str(nr), "--image", str(image)]) == 0
        assert capsys.readouterr().out.startswith("score: ")


class TestUsage:
    def test_bad_subcommand_exits_6(self, capsys):
        assert main(["frobnicate"]) == 6

    def test_missing_required_flag_exits_6(self, capsys):
        assert main(["evaluate"]) == 6

    def test_entry_point_runs(self, tmp_path):
        import subprocess
        import sys
        res = subprocess.run([sys.executable, "-m", "nariqa.cli", "gen-data",
                              "--out", str(tmp_path / "d"), "--images", "2",
                              "--distortions-per", "1"],
                             capture_output=True, text=True)
        assert res.returncode == 0
        assert "2 samples" in res.stdout
