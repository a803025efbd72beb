import subprocess
import sys

import pytest

from galforge import cli
from galforge import generator as G
from galforge.engine import parse_rows
from galforge.worldgen import save_world

SMALL = ["--set", "classifier.epochs=10", "--cycles", "2", "--b-al", "15"]


@pytest.fixture(scope="module")
def assets(tmp_path_factory, small_world, tiny_gen):
    root = tmp_path_factory.mktemp("cli")
    save_world(small_world, root / "world")
    G.save_generator(tiny_gen, root / "gen.glt")
    return root


def _run(assets, out, *extra):
    return cli.main(["run", "--world", str(assets / "world"), "--generator-ckpt", str(assets / "gen.glt"),
                     "--out", str(out), *SMALL, *extra])


def test_run_is_byte_identical(assets, tmp_path):
    assert _run(assets, tmp_path / "a.csv", "--seeds", "0,1") == 0
    assert _run(assets, tmp_path / "b.csv", "--seeds", "0,1") == 0
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    assert a == b
    assert a.decode().splitlines()[0] == ("run_id,seed,method,cycle,annotation_budget,test_accuracy,"
                                          "mean_sigma_generated,pseudo_label_accuracy,wall_ms")
    rows = parse_rows(a.decode())
    assert [(r.seed, r.cycle) for r in rows] == [(0, 1), (0, 2), (1, 1), (1, 2)]
    manifest = (tmp_path / "a.csv.manifest").read_text()
    assert "tool.version" in manifest and "generator.digest" in manifest and "al.cycles = 2" in manifest


def test_parallel_matches_serial(assets, tmp_path, monkeypatch):
    assert _run(assets, tmp_path / "serial.csv", "--seeds", "0,1", "--mode", "al") == 0
    monkeypatch.setenv("GALFORGE_THREADS", "2")
    assert _run(assets, tmp_path / "par.csv", "--seeds", "0,1", "--mode", "al") == 0
    assert (tmp_path / "serial.csv").read_bytes() == (tmp_path / "par.csv").read_bytes()


def test_usage_errors_exit_2(assets, tmp_path, capsys):
    assert cli.main(["run", "--bogus"]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert _run(assets, tmp_path / "x.csv", "--set", "no.such.key=1") == 2
    assert _run(assets, tmp_path / "x.csv", "--set", "missing_equals") == 2
    assert "usage" in capsys.readouterr().err


def test_mid_run_failure_flushes_partial_csv(assets, tmp_path):
    # 240-point pool: cycles of 100 fail in cycle 3
    out = tmp_path / "abort.csv"
    code = cli.main(["run", "--world", str(assets / "world"), "--mode", "al", "--cycles", "3", "--b-al", "100",
                     "--set", "classifier.epochs=5", "--out", str(out)])
    assert code == 1
    lines = out.read_text().splitlines()
    assert lines[-1] == "# ABORTED"
    assert len(parse_rows(out.read_text())) == 2


def test_snapshots_reuse_and_report(assets, tmp_path):
    snaps = tmp_path / "snaps"
    assert _run(assets, tmp_path / "joint.csv", "--seeds", "0", "--snapshots", str(snaps)) == 0
    assert (snaps / "seed0.csv").exists()
    assert cli.main(["reuse", "--world", str(assets / "world"), "--snapshots", str(snaps), "--new-arch", "mlp-32",
                     "--set", "classifier.epochs=10", "--out", str(tmp_path / "reuse.csv")]) == 0
    assert _run(assets, tmp_path / "al.csv", "--seeds", "0", "--mode", "al") == 0
    assert cli.main(["report", str(tmp_path / "joint.csv"), str(tmp_path / "al.csv"),
                     "--out", str(tmp_path / "report.csv")]) == 0
    report = (tmp_path / "report.csv").read_text().splitlines()
    assert report[0] == "method,15,30,average"
    assert [ln.split(",")[0] for ln in report[1:]] == ["al:margin", "galot", "improvement"]
    # single seed: cells are the CSV values verbatim
    joint = parse_rows((tmp_path / "joint.csv").read_text())
    assert report[2].split(",")[1:3] == [repr(joint[0].test_accuracy), repr(joint[1].test_accuracy)]


def test_report_averages_seeds():
    from galforge.engine import ResultRow

    rows = [ResultRow("a", s, "al:margin", 1, 10, acc) for s, acc in [(0, 0.5), (1, 0.7)]]
    rows += [ResultRow("b", 0, "galot", 1, 10, 0.65), ResultRow("f", 0, "full", 0, 99, 0.9)]
    text = cli.build_report(rows).splitlines()
    assert text[1] == f"al:margin,{(0.5 + 0.7) / 2!r},{(0.5 + 0.7) / 2!r}"
    assert text[3].startswith("improvement,")
    assert float(text[3].split(",")[1]) == pytest.approx(0.05)
    assert text[-1] == "# ceiling full = 0.9"


def test_ablate_writes_one_file_per_value(assets, tmp_path):
    code = cli.main(["ablate", "opt.epsilon_max", "--values", "0,0.3", "--world", str(assets / "world"),
                     "--generator-ckpt", str(assets / "gen.glt"), "--out-dir", str(tmp_path), *SMALL])
    assert code == 0
    assert sorted(p.name for p in tmp_path.glob("*.csv")) == ["opt.epsilon_max=0.3.csv", "opt.epsilon_max=0.csv"]
    assert cli.main(["ablate", "nope", "--values", "1", "--out-dir", str(tmp_path)]) == 2


def test_world_make_and_audit(tmp_path, assets):
    assert cli.main(["world", "make", "--set", "world.pretrain_n=200", "--set", "world.pool_n=50",
                     "--set", "world.test_n=50", "--out", str(tmp_path / "w")]) == 0
    assert (tmp_path / "w" / "world.meta").exists()
    out = tmp_path / "audit.csv"
    assert cli.main(["audit", "--world", str(assets / "world"), "--generator-ckpt", str(assets / "gen.glt"),
                     "--eps", "0,0.5", "--templates", "0", "--n", "10", "--audit-seeds", "0,1", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("seed,template,eps,n,correct,accuracy,class0")
    assert len(lines) == 1 + 2 * 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "galforge", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "report" in proc.stdout
