import numpy as np
import pytest

from dynbc.adapt import ConvergenceTable
from dynbc.assembly import assemble
from dynbc.cli import Manufactured, build_parser, resolve_options, run
from dynbc.mesh import (
    GammaMesh, Mesh2D, create_unit_square, trace_gamma, uniform_refine, uniform_refine_gamma,
)
from dynbc.solver import solve
from dynbc.spaces import SchemeConfig, build_spaces
from oracles import fd_laplacian


def read_table(path):
    return ConvergenceTable.from_csv(path.read_text())


def test_square_csv(tmp_path):
    out = tmp_path / "square.csv"
    assert run(["square", "--max-dofs", "150", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    meta = lines[0]
    for key in ("scheme=p1", "theta=0.75", "sigma=1.0", "lambda_norm=h-weighted-L2", "mode=adaptive"):
        assert key in meta
    assert lines[1] == "step,dofs_u,dofs_p,dofs_lambda,error,estimator"
    table = read_table(out)
    assert table.rows[0].dofs == 13 + 8 + 8
    assert table.dofs[-1] >= 150


def test_reproducible_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert run(["lshape", "--scheme", "p2p0", "--max-dofs", "300", "--with-error",
                    "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nscheme = p2p0\ntheta=0.5\nmax-dofs = 100\n")
    args = build_parser().parse_args(["lshape", "--config", str(cfg), "--theta", "0.3"])
    opts = resolve_options(args)
    assert opts["scheme"] == "p2p0" and opts["max_dofs"] == 100 and opts["theta"] == 0.3


@pytest.mark.parametrize("argv", [
    ["square", "--theta", "1.5"],
    ["square", "--sigma", "-1"],
    ["square", "--scheme", "p3"],
    ["square", "--max-dofs", "0"],
    ["parabolic", "--t0", "2", "--t1", "1"],
    ["nonsense"],
])
def test_invalid_arguments(argv, capsys):
    assert run(argv) == 1
    assert "error" in capsys.readouterr().err


def test_bad_config(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert run(["square", "--config", str(cfg)]) == 1
    cfg.write_text("theta\n")
    assert run(["square", "--config", str(cfg)]) == 1
    assert run(["square", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_unwritable_output(tmp_path):
    assert run(["square", "--max-dofs", "40", "--out", str(tmp_path / "no" / "x.csv")]) == 1


def test_numerical_failure_exit_code(tmp_path):
    argv = ["parabolic", "--t1", "1.015", "--tol", "1e-14", "--max-rounds", "1",
            "--out", str(tmp_path / "h.csv")]
    assert run(argv) == 2


def test_dump_meshes(tmp_path):
    dump = tmp_path / "sol.txt"
    assert run(["square", "--max-dofs", "80", "--out", str(tmp_path / "s.csv"),
                "--dump-meshes", str(dump)]) == 0
    text = dump.read_text()
    bulk = Mesh2D.load(text)
    rest = text.splitlines()[1 + bulk.n_vertices + bulk.n_triangles + bulk.n_boundary:]
    gamma = GammaMesh.load("\n".join(rest), bulk)
    fields = [line.split()[0] for line in rest[1 + gamma.n_segments:]]
    dofs = build_spaces(bulk, gamma, SchemeConfig.p1())
    assert fields.count("u") == dofs.n_u
    assert fields.count("p") == dofs.n_p
    assert fields.count("lambda") == dofs.n_lambda


def test_parabolic_short(tmp_path):
    out = tmp_path / "h.csv"
    assert run(["parabolic", "--t1", "1.045", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert "tau=0.015" in lines[0] and "scheme=p2p0" in lines[0]
    assert lines[1] == "n,t,dofs_u,dofs_p,dofs_lambda,estimator,refine_rounds"
    rows = np.array([[float(v) for v in line.split(",")] for line in lines[2:]])
    assert len(rows) == 3
    assert np.all(np.diff(rows[:, 2:5], axis=0) >= 0)


def test_infsup_report(capsys):
    assert run(["infsup", "--max-dofs", "400"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1] == "level,dofs,beta"
    k = out.index("gamma_level,dofs,beta")
    betas = [float(line.split(",")[2]) for line in out[2:k]]
    assert len(betas) >= 2 and min(betas) > 0


def test_manufactured_data_by_finite_differences(rng):
    m = Manufactured(sigma=2.0)
    data = m.data()
    x, y = rng.uniform(0.1, 0.9, (2, 20))
    assert np.allclose(data.f(x, y), 2.0 * m.u(x, y) - fd_laplacian(m.u, x, y), atol=1e-5)
    # on the bottom side p(s) = cos(pi s), so -p'' = pi^2 p and lambda = 0
    s = rng.uniform(0, 1, 10)
    h = 1e-4
    p_ss = (m.u(s + h, 0 * s) - 2 * m.u(s, 0 * s) + m.u(s - h, 0 * s)) / h ** 2
    assert np.allclose(data.g(s, 0 * s), 2.0 * m.u(s, 0 * s) - p_ss, atol=1e-5)
    # the normal derivative vanishes on all sides
    for side in ([0.0, 0.5], [1.0, 0.3], [0.2, 0.0], [0.7, 1.0]):
        g = m.grad(np.array(side[0]), np.array(side[1]))
        normal_axis = 0 if side[0] in (0.0, 1.0) else 1
        assert abs(g[normal_axis]) < 1e-12


def test_manufactured_multiplier_tends_to_zero():
    m = Manufactured()
    bulk = create_unit_square(2)
    gamma = trace_gamma(bulk)
    lam = []
    for _ in range(3):
        sol = solve(assemble(build_spaces(bulk, gamma, SchemeConfig.p1()), m.data()))
        lam.append(m.errors(sol)[2])
        bulk = uniform_refine(bulk)
        gamma = uniform_refine_gamma(gamma, bulk)
    assert lam[2] < lam[1] < lam[0]


def test_manufactured_cli(tmp_path):
    out = tmp_path / "m.csv"
    assert run(["manufactured", "--max-dofs", "800", "--out", str(out)]) == 0
    table = read_table(out)
    assert "error=analytic-H1" in out.read_text().splitlines()[0]
    assert np.all(np.diff(table.error) < 0)
