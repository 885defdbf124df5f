import subprocess
import sys

import pytest

from tensorfem.cli import EXIT_CONFIG, EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, main
from tensorfem.mesh import make_cartesian, save_native


def test_single_solve_writes_outputs(tmp_path, capsys):
    table = tmp_path / "t.txt"
    vtk = tmp_path / "u.vtk"
    code = main(["--cartesian", "3", "--order", "2", "--table", str(table), "--vtk", str(vtk)])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert table.read_text() == out
    text = vtk.read_text()
    assert "SCALARS u_h double 1" in text and "SCALARS u_exact double 1" in text


def test_convergence_and_amr_flags(capsys):
    assert main(["--cartesian", "2", "--convergence", "2", "--assembly", "partial", "--prec", "jacobi"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    args = ["--cartesian", "2", "--order", "2", "--solution", "front", "--amr-iters", "2", "--aniso"]
    assert main(args + ["--max-irregularity", "1", "--theta", "0.5", "--threads", "2"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 4


def test_mesh_file_input(tmp_path):
    path = tmp_path / "m.mesh"
    path.write_text(save_native(make_cartesian(2, 3)))
    assert main(["--mesh", str(path), "--order", "2"]) == EXIT_OK


@pytest.mark.parametrize(
    "argv",
    [
        ["--theta", "0"],
        ["--order", "0"],
        ["--assembly", "dense"],
        ["--bogus"],
        ["--mesh", "a", "--cartesian", "2"],
    ],
)
def test_config_errors(argv, capsys):
    assert main(argv) == EXIT_CONFIG


def test_bad_mesh_file_is_config_error(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("tensorfem-mesh v1\ndimension 3\n")
    assert main(["--mesh", str(path)]) == EXIT_CONFIG


def test_io_errors(tmp_path):
    assert main(["--mesh", str(tmp_path / "missing.mesh")]) == EXIT_IO
    assert main(["--cartesian", "2", "--table", str(tmp_path / "no" / "dir" / "t.txt")]) == EXIT_IO


def test_non_convergence_exit_code():
    assert main(["--cartesian", "8", "--order", "3", "--solution", "front", "--max-iters", "2"]) == EXIT_NOT_CONVERGED


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "tensorfem", "--cartesian", "2"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 0 and "l2_error" in proc.stdout


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "--max-irregularity" in capsys.readouterr().out
