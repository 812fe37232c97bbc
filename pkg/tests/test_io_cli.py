import json

import numpy as np
import pytest

from ppdmkit import io as pio
from ppdmkit.cli import main
from ppdmkit.experiments import load_preset
from ppdmkit.ppdm import PPDM, build_ppdm, random_mask


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    summary = json.loads(out.strip().splitlines()[-1]) if code == 0 else None
    return code, summary, err


def test_setup_round_trip_is_byte_identical(tmp_path):
    s = load_preset("hexahedron3d")
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    pio.write_setup(p1, s)
    pio.write_setup(p2, pio.read_setup(p1))
    assert p1.read_bytes() == p2.read_bytes()
    back = pio.read_setup(p1)
    assert np.array_equal(back.normals, s.normals) and np.array_equal(back.waypoints, s.waypoints)


def test_setup_parse_errors_name_the_field(tmp_path):
    p = tmp_path / "bad.json"
    doc = pio.setup_to_dict(load_preset("square2d"))
    doc["planes"][2]["normal"] = [1.0, 1.0]
    p.write_text(json.dumps(doc))
    with pytest.raises(pio.FormatError, match=r"planes\[2\]"):
        pio.read_setup(p)
    doc["planes"][2]["normal"] = [1.0, "x"]
    p.write_text(json.dumps(doc))
    with pytest.raises(pio.FormatError, match=r"planes\[2\]\.normal"):
        pio.read_setup(p)
    p.write_text('{"dim": 2,\n "planes": [,]}')
    with pytest.raises(pio.FormatError, match="line 2"):
        pio.read_setup(p)


def test_ppdm_csv_round_trip_with_missing(tmp_path):
    m = build_ppdm(load_preset("pentagon2d"))
    masked = m.with_mask(random_mask(m.shape, 0.2, np.random.default_rng(0)))
    path = tmp_path / "d.csv"
    pio.write_ppdm(path, masked, sigma=0.1, seed=4)
    back, meta = pio.read_ppdm(path)
    assert meta == {"dim": 2, "sigma": 0.1, "seed": 4}
    assert np.array_equal(back.mask, masked.mask)
    assert np.array_equal(back.entries[back.mask], m.entries[masked.mask])
    assert path.read_text().splitlines()[0] == "j=1,j=2,j=3,j=4,j=5"


def test_ppdm_csv_errors_report_line(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("j=1,j=2,j=3\n1,2,3\n1,oops,3\n")
    with pytest.raises(pio.FormatError, match="line 3.*j=2"):
        pio.read_ppdm(path, dim=2)
    path.write_text("j=1,j=2,j=3\n1,2\n")
    with pytest.raises(pio.FormatError, match="line 2"):
        pio.read_ppdm(path, dim=2)
    with pytest.raises(pio.FormatError, match="dimension unknown"):
        pio.read_ppdm(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    pio.atomic_write(tmp_path / "x.txt", "hello")
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_cli_generate_ppdm_rank(tmp_path, capsys):
    s, d = str(tmp_path / "s.json"), str(tmp_path / "d.csv")
    assert run(capsys, "generate", "--preset", "shoebox3d", "--waypoints", "20", "--seed", "7", "--output", s)[0] == 0
    assert run(capsys, "ppdm", "--setup", s, "--output", d)[0] == 0
    code, summary, _ = run(capsys, "rank", "--input", d)
    assert code == 0 and summary["rank"] <= 4


def test_cli_generate_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        run(capsys, "generate", "--dim", "3", "--planes", "7", "--waypoints", "12", "--seed", "3", "--output", str(p))
    assert a.read_bytes() == b.read_bytes()


def test_cli_noise_solve_with_fixed_normals(tmp_path, capsys):
    s, d, n, rep = (str(tmp_path / f) for f in ("s.json", "d.csv", "n.csv", "rep.json"))
    run(capsys, "generate", "--preset", "hexahedron3d", "--output", s)
    run(capsys, "ppdm", "--setup", s, "--output", d)
    code, summary, _ = run(capsys, "noise", "--input", d, "--sigma", "0.02", "--seed", "1", "--output", n)
    assert code == 0 and summary["sigma"] == 0.02
    code, summary, _ = run(capsys, "solve", "--input", n, "--fix-normal", "0", "--fix-normal", "1",
                           "--known-planes", s, "--restarts", "2", "--output", rep)
    assert code == 0
    report = json.loads(open(rep).read())
    assert set(report) >= {"estimate", "cost", "restart_costs", "iterations", "converged", "gauge", "seed"}
    assert len(report["restart_costs"]) == 2
    truth = load_preset("hexahedron3d")
    assert report["estimate"]["planes"][0]["normal"] == truth.normals[0].tolist()


def test_cli_fix_normal_with_inline_values(tmp_path, capsys):
    s, d, rep = (str(tmp_path / f) for f in ("s.json", "d.csv", "rep.json"))
    run(capsys, "generate", "--preset", "shoebox3d", "--output", s)
    run(capsys, "ppdm", "--setup", s, "--output", d)
    code, _, _ = run(capsys, "solve", "--input", d, "--fix-normal", "5:0,0,-1:0", "--fix-normal", "4:0,-1,0",
                     "--restarts", "2", "--output", rep)
    assert code == 0
    assert json.loads(open(rep).read())["gauge"]["planes"][1]["offset"] is None


def test_cli_denoise_and_complete(tmp_path, capsys):
    s, d, dn, c = (str(tmp_path / f) for f in ("s.json", "d.csv", "dn.csv", "c.csv"))
    run(capsys, "generate", "--preset", "pentagon2d", "--output", s)
    run(capsys, "ppdm", "--setup", s, "--output", d)
    assert run(capsys, "denoise", "--input", d, "--output", dn)[0] == 0
    code, summary, _ = run(capsys, "complete", "--input", d, "--mask-rate", "0.1", "--output", c)
    assert code == 0 and summary["missing"] == 6 and summary["converged"]
    done, _ = pio.read_ppdm(c)
    truth, _ = pio.read_ppdm(d)
    assert np.max(np.abs(done.entries - truth.entries)) < 1e-6


def test_cli_ambiguity_classes(tmp_path, capsys):
    s, cop = str(tmp_path / "s.json"), str(tmp_path / "cop.json")
    run(capsys, "generate", "--preset", "shoebox3d", "--output", s)
    code, summary, _ = run(capsys, "ambiguity", "--class", "transform", "--setup", s, "--output",
                           str(tmp_path / "t.json"))
    assert code == 0 and summary["residual"] < 1e-8 and not summary["congruent"]
    pair = json.loads((tmp_path / "t.json").read_text())
    assert pair["class"] == "Transform" and len(pair["transform"]) == 9
    run(capsys, "generate", "--preset", "shoebox3d", "--layout", "degenerate", "--seed", "2", "--output", cop)
    code, summary, _ = run(capsys, "ambiguity", "--class", "reflection", "--setup", cop, "--output",
                           str(tmp_path / "r.json"))
    assert code == 0 and summary["class"] == "Reflection" and summary["deviation"] < 1e-10
    code, summary, _ = run(capsys, "ambiguity", "--class", "row-dependence", "--dim", "2", "--output",
                           str(tmp_path / "rd.json"))
    assert code == 0 and summary["class"] == "RowDependence"


def test_cli_verdict(tmp_path, capsys):
    s = str(tmp_path / "s.json")
    run(capsys, "generate", "--preset", "pentagon2d", "--output", s)
    assert run(capsys, "verdict", "--setup", s)[1]["verdict"] == "Unique"
    run(capsys, "generate", "--preset", "square2d", "--output", s)
    assert run(capsys, "verdict", "--setup", s)[1]["verdict"] == "AmbiguousParallelogram"


def test_cli_sweep_writes_csv_and_manifest(tmp_path, capsys):
    out = tmp_path / "sw.csv"
    code, summary, _ = run(capsys, "sweep", "--sigmas", "0,0.05,0.1", "--trials", "3", "--restarts", "1",
                           "--output", str(out))
    assert code == 0 and summary["rows"] == 3
    assert out.read_text().splitlines()[0].startswith("sigma,mean_room_err")
    manifest = json.loads(pio.sidecar_path(out).read_text())
    assert manifest["trials_per_sigma"] == 3 and "fit" in manifest


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    code, _, err = run(capsys, "rank", "--input", str(tmp_path / "missing.csv"), "--dim", "3")
    assert code == 1 and "error" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim": 3, "planes": [], "waypoints": [[0, 0, 0]]}')
    code, _, err = run(capsys, "ppdm", "--setup", str(bad), "--output", str(tmp_path / "x.csv"))
    assert code == 1 and "planes" in err
    assert not (tmp_path / "x.csv").exists()
    s, d = str(tmp_path / "s.json"), str(tmp_path / "d.csv")
    run(capsys, "generate", "--preset", "shoebox3d", "--output", s)
    run(capsys, "ppdm", "--setup", s, "--output", d)
    code, _, err = run(capsys, "solve", "--input", d, "--fix-normal", "0", "--output", str(tmp_path / "r.json"))
    assert code == 2 and "--known-planes" in err
    code, _, err = run(capsys, "noise", "--input", d, "--sigma", "-1", "--output", str(tmp_path / "n.csv"))
    assert code == 1 and "sigma" in err


def test_pair_json_contains_both_setups():
    from ppdmkit.ambiguity import ClassTag, verify_equivalence
    s = load_preset("square2d")
    pair = verify_equivalence(s, s, class_tag=ClassTag.TRANSFORM)
    doc = pio.pair_to_dict(pair)
    assert doc["first"] == doc["second"] == pio.setup_to_dict(s)
    assert doc["congruent"] is True
    json.dumps(doc)


def test_ppdm_from_csv_without_mask_is_full(tmp_path):
    m = PPDM(np.arange(12.0).reshape(3, 4), 2)
    pio.write_ppdm(tmp_path / "m.csv", m)
    back, _ = pio.read_ppdm(tmp_path / "m.csv")
    assert back.mask is None and np.array_equal(back.entries, m.entries)
