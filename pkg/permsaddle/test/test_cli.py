import io
import json

import pytest
from numpy import arange
from numpy.testing import assert_, assert_allclose, assert_equal

from permsaddle import DomainError, MalformedCsv, MixedArity, RunConfig, parse_input, run
from permsaddle._cli import config_from_args, main


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _config(**kwargs):
    options = dict(
        command="table1",
        input=None,
        scores="rank",
        u_grid=(0.3, 0.5, 0.7),
        M=20,
        mc_reps=0,
        seed=0,
        format="text",
        output=None,
        n_jobs=1,
        verbose=False,
    )
    options.update(kwargs)
    return RunConfig(**options)


def _run(config):
    out, err = io.StringIO(), io.StringIO()
    status = run(config, stdout=out, stderr=err)
    return status, out.getvalue(), err.getvalue()


INTERLEAVED_CSV = "group,value\n" + "".join(
    f"{g},{v}\n"
    for g, vs in [
        ("b", [1, 4, 7, 10, 14, 18]),
        ("a", [2, 6, 8, 12, 15, 16]),
        ("c", [3, 5, 9, 11, 13, 17]),
    ]
    for v in vs
)


def test_parse_ksample(tmp_path):
    rows = "".join(f"g{i // 5 + 1},{i + 1}\n" for i in range(20))
    data = parse_input(_write(tmp_path, "group,value\n" + rows), "ksample")
    assert_equal(data.values, arange(1, 21))
    assert_equal(data.groups[0], "g1")
    assert_equal(data.groups[-1], "g4")


def test_parse_twosample(tmp_path):
    rows = "".join(f"s{i // 40 + 1},{i},{2 * i},{i % 7}\n" for i in range(80))
    data = parse_input(_write(tmp_path, "group,v1,v2,v3\n" + rows), "twosample")
    assert_equal(data.values.shape, (80, 3))
    assert_equal(data.values[5], [5, 10, 5])


def test_parse_errors(tmp_path):
    with pytest.raises(MalformedCsv):
        parse_input(_write(tmp_path, ""), "ksample")
    with pytest.raises(MalformedCsv):
        parse_input(_write(tmp_path, "grp,value\na,1\n"), "ksample")

    with pytest.raises(MalformedCsv) as e:
        parse_input(_write(tmp_path, "group,value\na,1\na,2\nb,x\n"), "ksample")
    assert_equal(e.value.line, 4)
    assert_("line 4" in str(e.value))

    with pytest.raises(MixedArity):
        parse_input(_write(tmp_path, "group,v1,v2\na,1,2\nb,3\n"), "twosample")
    with pytest.raises(MixedArity):
        parse_input(_write(tmp_path, "group,v1,v2\na,1,2\nb,3,4,5\n"), "twosample")
    with pytest.raises(MalformedCsv):
        parse_input(_write(tmp_path, "group,x1,x2\na,1,2\n"), "twosample")


def test_table1_text():
    status, out, err = _run(_config())
    assert_equal(status, 0)
    assert_equal(err, "")
    lines = out.splitlines()
    assert_(lines[0].startswith("û"))
    labels = [line[:10].strip() for line in lines[1:]]
    assert_equal(labels, ["χ²_3", "SP LR Λ", "SP BN Λ"])
    assert_equal(lines[1].split()[1:], ["0.6149", "0.1718", "0.0203"])


def test_table1_text_with_mc():
    status, out, _ = _run(_config(mc_reps=200))
    assert_equal(status, 0)
    labels = [line[:10].strip() for line in out.splitlines()[1:]]
    assert_equal(labels, ["MC Λ", "MC K-W", "χ²_3", "SP LR Λ", "SP BN Λ"])


def test_json_deterministic():
    config = _config(format="json", mc_reps=100)
    status, first, _ = _run(config)
    assert_equal(status, 0)
    _, second, _ = _run(config)
    assert_equal(first, second)

    document = json.loads(first)
    assert_equal(document["schema_version"], 1)
    assert_equal(document["kind"], "KSAMPLE")
    assert_equal(document["mode"], "grid")
    assert_equal(document["sizes"], [5, 5, 5, 5])
    assert_equal(document["labels"], ["g1", "g2", "g3", "g4"])
    assert_equal(len(document["cells"]), 3)
    cell = document["cells"][1]
    assert_allclose(cell["u"], 0.5)
    assert_allclose(cell["lam"], 0.125)
    assert_equal(round(cell["p_chisq"], 4), 0.1718)
    assert_equal(cell["comparator"], "KRUSKAL_WALLIS")
    assert_equal(cell["mc"]["total"], 100)


def test_csv_format():
    status, out, _ = _run(_config(format="csv"))
    assert_equal(status, 0)
    lines = out.splitlines()
    header = lines[0].split(",")
    assert_("p_bn" in header and "p_lr" in header and "mc_tail" in header)
    assert_equal(len(lines), 4)


def test_observed_mode(tmp_path):
    path = _write(tmp_path, INTERLEAVED_CSV)
    status, out, _ = _run(_config(command="ksample", input=path, u_grid=None, format="json"))
    assert_equal(status, 0)
    document = json.loads(out)
    assert_equal(document["mode"], "observed")
    assert_equal(document["labels"], ["a", "b", "c"])
    assert_equal(len(document["cells"]), 1)
    assert_(document["cells"][0]["lam"] > 0)

    status, out, _ = _run(_config(command="ksample", input=path, u_grid=None))
    assert_(out.startswith("λ_obs = "))


def test_output_file(tmp_path):
    target = tmp_path / "report.txt"
    status, out, _ = _run(_config(output=str(target)))
    assert_equal(status, 0)
    assert_equal(out, "")
    assert_("SP BN Λ" in target.read_text(encoding="utf-8"))


def test_errors_exit_two(tmp_path):
    status, out, err = _run(_config(command="ksample"))
    assert_equal(status, 2)
    assert_equal(out, "")
    assert_equal(json.loads(err)["error"]["code"], "DomainError")

    path = _write(tmp_path, "group,value\na,1\na,2\nb,3\nb,4\n")
    status, out, err = _run(_config(command="ksample", input=path, u_grid=None))
    assert_equal(status, 2)
    assert_equal(json.loads(err)["error"]["code"], "NoConvergence")

    status, _, err = _run(_config(command="ksample", input=str(tmp_path / "missing.csv")))
    assert_equal(status, 2)


def test_unexpected_error_exit_two(monkeypatch):
    def broken(config):
        raise RuntimeError("worker pool died")

    monkeypatch.setattr("permsaddle._cli.execute", broken)
    status, out, err = _run(_config())
    assert_equal(status, 2)
    assert_equal(out, "")
    error = json.loads(err)["error"]
    assert_equal(error["code"], "RuntimeError")
    assert_equal(error["message"], "worker pool died")


def test_main(capsys):
    assert_equal(main(["ksample"]), 2)
    captured = capsys.readouterr()
    assert_equal(json.loads(captured.err)["error"]["code"], "DomainError")


def test_config_from_args():
    config = config_from_args(["table2", "--M", "50", "--seed", "3"])
    assert_equal(config.M, 50)
    assert_equal(config.scores, "raw")
    assert_equal(config.u_grid, (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8))

    config = config_from_args(["ksample", "--input", "x.csv", "--u-grid", ""])
    assert_(config.u_grid is None)
    assert_equal(config.scores, "rank")

    config = config_from_args(["table1", "--u-grid", "0.2,0.4", "--sphere-samples", "7"])
    assert_equal(config.u_grid, (0.2, 0.4))
    assert_equal(config.M, 7)

    with pytest.raises(DomainError):
        config_from_args(["table1", "--u-grid", "0.2,abc"])


def test_run_config_validate():
    _config().validate()
    for bad in [
        dict(command="other"),
        dict(scores="log"),
        dict(format="xml"),
        dict(u_grid=(0.5, 0.3)),
        dict(M=0),
        dict(mc_reps=-1),
        dict(n_jobs=0),
        dict(command="twosample"),
    ]:
        with pytest.raises(DomainError):
            _config(**bad).validate()
