import json
import math
import subprocess
import sys

import numpy as np
import pytest

from crystalopt import cli, lattice
from crystalopt.configuration import Configuration, read_xyz, write_xyz


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def dimer_xyz(tmp_path):
    path = tmp_path / "dimer.xyz"
    write_xyz(str(path), Configuration([[0, 0, 0], [1, 0, 0]]))
    return str(path)


def test_shells_json(capsys):
    code, out, _ = run(capsys, "lattice", "shells", "--kind", "fcc", "--rmax", "1.8", "--json")
    assert code == 0
    table = {float(k): v for k, v in json.loads(out).items()}
    assert table == pytest.approx({1.0: 12, math.sqrt(2): 6, math.sqrt(3): 24})


def test_lattice_gen_round_trips_through_xyz(capsys, tmp_path):
    out = str(tmp_path / "ball.xyz")
    code, _, _ = run(capsys, "lattice", "gen", "--kind", "hcp", "--radius", "2.0", "--out", out)
    assert code == 0
    cfg = read_xyz(out)
    np.testing.assert_array_equal(cfg.positions, lattice.generate(lattice.HCP, 2.0).cart)
    manifest = json.loads(open(out + ".manifest.json").read())
    assert {"command", "parameters", "potential_sha256", "version", "seed", "timestamp"} <= set(manifest)


def test_energy_of_a_dimer(capsys, dimer_xyz):
    code, out, _ = run(capsys, "energy", "eval", "--xyz", dimer_xyz, "--per-particle")
    assert code == 0
    doc = json.loads(out)
    assert doc["total"] == pytest.approx(-2.0, abs=1e-14)


def test_missing_required_argument_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["energy", "eval"])
    assert info.value.code == 64


def test_unknown_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 64


def test_missing_file_is_an_error(capsys, tmp_path):
    code, _, err = run(capsys, "energy", "eval", "--xyz", str(tmp_path / "absent.xyz"))
    assert code == 1
    assert "error" in err


def test_infeasible_alpha_is_an_error(capsys):
    code, _, err = run(capsys, "potential", "build", "--alpha", "0.2")
    assert code == 1
    assert "vnorm" in err


def test_potential_round_trip_and_validate(capsys, tmp_path):
    out = str(tmp_path / "pot.json")
    assert run(capsys, "potential", "build", "--alpha", "0.05", "--out", out)[0] == 0
    code, text, _ = run(capsys, "potential", "validate", "--potential", out)
    assert code == 0
    doc = json.loads(text)
    assert doc["ok"]


def test_failed_relaxation_exits_2(capsys, tmp_path):
    xyz = str(tmp_path / "c.xyz")
    write_xyz(xyz, Configuration([[0, 0, 0], [1.3, 0, 0], [0, 1.2, 0]]))
    code, _, _ = run(capsys, "relax", "run", "--xyz", xyz, "--max-steps", "2")
    assert code == 2
    code, _, _ = run(capsys, "relax", "run", "--xyz", xyz)
    assert code == 0


def test_classify_csv(capsys, tmp_path):
    xyz = str(tmp_path / "ball.xyz")
    write_xyz(xyz, Configuration(lattice.generate(lattice.FCC, 3.0).cart))
    csv_path = str(tmp_path / "cls.csv")
    assert run(capsys, "classify", "run", "--xyz", xyz, "--csv", csv_path)[0] == 0
    rows = open(csv_path).read().splitlines()
    assert rows[0] == "id,class,degree,half_edges,rmsd"
    assert rows[1].startswith("0,CO,12,24,")


def test_written_results_are_byte_identical_across_runs(capsys, tmp_path):
    a, b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    args = ["relax", "upper-bound", "--radii", "3", "4"]
    assert run(capsys, *args, "--threads", "1", "--out", a)[0] == 0
    assert run(capsys, *args, "--threads", "3", "--out", b)[0] == 0
    assert open(a, "rb").read() == open(b, "rb").read()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "crystalopt", "lattice", "shells", "--rmax", "1.0", "--json"],
                         capture_output=True, text=True, check=True)
    assert json.loads(res.stdout) == {"1.0": 12}
