import json
from pathlib import Path

import pytest

from seedprop.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Small on-disk dataset: 3 scenes on 16x16 grids."""
    root = tmp_path_factory.mktemp("ds")
    code = main(["synth", "--count", "3", "--seed", "11", "--grid", "16",
                 "--pixel-scale", "4", "--output", str(root)])
    assert code == 0
    return root


def bundle_paths(dataset):
    return sorted(str(p) for p in (Path(dataset) / "bundles").glob("*.zip"))


def test_synth_writes_layout(dataset):
    root = Path(dataset)
    assert (root / "annotations.json").exists()
    assert len(list((root / "bundles").glob("*.zip"))) == 3
    assert len(list((root / "masks").glob("*.pgm"))) >= 6


def test_ground_writes_three_files_per_pair(dataset, tmp_path, capsys):
    bundle = bundle_paths(dataset)[0]
    out = tmp_path / "res"
    code, stdout, _ = run_cli(
        capsys, "ground", bundle, "--output", str(out), "--steps", "40"
    )
    assert code == 0
    payload = json.loads(stdout)
    items = payload["report"]["items"]
    assert payload["report"]["report_version"] == 1
    for item in items:
        assert (out / item["heat_pgm"]).exists()
        assert (out / item["mask_pgm"]).exists()
        assert item["tau_w"] is not None
        assert {"concept", "token_index", "row", "col", "value"} <= set(item["anchor"])
    assert (out / "ground_report.json").exists()


def test_ground_unknown_concept_exits_1(dataset, tmp_path, capsys):
    bundle = bundle_paths(dataset)[0]
    code, _, err = run_cli(
        capsys, "ground", bundle, "--concepts", "unicorn", "--output", str(tmp_path / "x")
    )
    assert code == 1
    assert json.loads(err)["kind"] == "validation"
    assert "concept not in bundle" in json.loads(err)["error"]


def test_missing_bundle_exits_2(tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "ground", str(tmp_path / "nope.zip"), "--output", str(tmp_path / "o")
    )
    assert code == 2
    assert json.loads(err)["kind"] == "io"


def test_eval_round_trip(dataset, tmp_path, capsys):
    out = tmp_path / "res"
    code, _, _ = run_cli(
        capsys, "ground", *bundle_paths(dataset), "--output", str(out), "--steps", "40"
    )
    assert code == 0
    code, stdout, _ = run_cli(
        capsys, "eval", "--results", str(out), "--annotations", str(dataset)
    )
    assert code == 0
    report = json.loads(stdout)["report"]
    assert report["pair_count"] >= 6
    assert report["anchor_hit_rate"] == 1.0
    assert report["miou_fg"] > 0.9


def test_thread_count_outputs_byte_identical(dataset, tmp_path, capsys):
    outs = {}
    for threads in ("1", "4"):
        out = tmp_path / f"res_t{threads}"
        code, _, _ = run_cli(
            capsys,
            "ground", *bundle_paths(dataset),
            "--output", str(out), "--steps", "40", "--threads", threads,
        )
        assert code == 0
        outs[threads] = out
    files1 = sorted(p.name for p in outs["1"].iterdir())
    files4 = sorted(p.name for p in outs["4"].iterdir())
    assert files1 == files4
    for name in files1:
        assert (outs["1"] / name).read_bytes() == (outs["4"] / name).read_bytes(), name


def test_validate_ok_and_failure(dataset, tmp_path, capsys):
    good = bundle_paths(dataset)[0]
    bad = tmp_path / "bad.zip"
    bad.write_bytes(b"PK\x05\x06" + b"\x00" * 18)  # empty zip, no manifest
    code, stdout, _ = run_cli(capsys, "validate", good, str(bad))
    assert code == 0
    payload = json.loads(stdout)
    assert payload["ok"] is False
    states = {Path(b["bundle"]).name: b["ok"] for b in payload["bundles"]}
    assert states[Path(good).name] is True
    assert states["bad.zip"] is False


def test_stats_locality_csv(dataset, tmp_path, capsys):
    bundle = bundle_paths(dataset)[0]
    csv_path = tmp_path / "loc.csv"
    code, stdout, _ = run_cli(
        capsys, "stats", "--bundle", bundle, "--locality", "--output", str(csv_path)
    )
    assert code == 0
    payload = json.loads(stdout)["stats"]
    assert payload["kind"] == "locality"
    header = csv_path.read_text().splitlines()[0]
    assert header == "bin_min,bin_max,mean_weight"
    # short-distance attention dominates long-distance attention
    means = [b["mean_weight"] for b in payload["bins"]]
    assert means[0] > means[-1]


def test_stats_affinity(dataset, capsys):
    bundle = bundle_paths(dataset)[0]
    code, stdout, _ = run_cli(
        capsys,
        "stats", "--bundle", bundle, "--affinity", "--dataset", str(dataset),
        "--affinity-kind", "gated",
    )
    assert code == 0
    stats = json.loads(stdout)["stats"]
    assert stats["same_object"] > 10 * stats["confusable_diff"]


def test_sweep_steps_csv(dataset, tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    code, stdout, _ = run_cli(
        capsys,
        "sweep", "--dataset", str(dataset), "--sweep-steps", "10,40",
        "--output", str(csv_path),
    )
    assert code == 0
    rows = json.loads(stdout)["rows"]
    assert [r["config"] for r in rows] == ["10", "40"]
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "config,miou_fg,map_fg,nar,acc_fg"
    assert len(lines) == 3


def test_sweep_layer_sets(dataset, capsys):
    code, stdout, _ = run_cli(
        capsys, "sweep", "--dataset", str(dataset), "--layer-sets", "0;1;0,1"
    )
    assert code == 0
    rows = json.loads(stdout)["rows"]
    assert len(rows) == 3
    assert {r["config"] for r in rows} == {"L0", "L1", "L0+L1"}


def test_stats_requires_exactly_one_kind(dataset, capsys):
    bundle = bundle_paths(dataset)[0]
    code, _, err = run_cli(capsys, "stats", "--bundle", bundle)
    assert code == 1
    assert json.loads(err)["kind"] == "validation"


def test_config_file_and_flag_precedence(dataset, tmp_path, capsys):
    bundle = bundle_paths(dataset)[0]
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_steps": 7, "gate_quantile": 0.9}))
    out = tmp_path / "res"
    code, stdout, _ = run_cli(
        capsys, "ground", bundle, "--config", str(cfg), "--steps", "9",
        "--output", str(out),
    )
    assert code == 0
    report = json.loads(stdout)["report"]
    assert report["config"]["n_steps"] == 9  # flag wins
    assert report["config"]["gate_quantile"] == 0.9  # file survives
    assert report["items"][0]["steps"] == 9


def test_ground_snapshot_dumps(dataset, tmp_path, capsys):
    bundle = bundle_paths(dataset)[0]
    out = tmp_path / "snap"
    code, _, _ = run_cli(
        capsys, "ground", bundle, "--output", str(out), "--steps", "20",
        "--snapshots", "10",
    )
    assert code == 0
    snaps = sorted(p.name for p in out.glob("*.step*.pgm"))
    assert any(name.endswith(".step0010.pgm") for name in snaps)
    assert any(name.endswith(".step0020.pgm") for name in snaps)


def test_ground_dump_graph_edges(dataset, tmp_path, capsys):
    bundle = bundle_paths(dataset)[0]
    out = tmp_path / "dg"
    code, _, _ = run_cli(
        capsys, "ground", bundle, "--output", str(out), "--steps", "5", "--dump-graph"
    )
    assert code == 0
    dumps = list(out.glob("*.edges.txt"))
    assert len(dumps) == 1
    first = dumps[0].read_text().splitlines()[0].split()
    assert len(first) == 3
