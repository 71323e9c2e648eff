from ncs.cli import main


def test_timing_text(capsys):
    assert main(["timing", "--cell-radius", "500", "--d-int", "100", "--d-min", "200"]) == 0
    assert "T_GP >= 3.3356 us" in capsys.readouterr().out


def test_timing_csv(capsys):
    assert main(["timing", "--cell-radius", "500", "--d-int", "0", "--d-min", "1", "--csv"]) == 0
    assert capsys.readouterr().out.startswith("quantity,value_s\n")


def test_crlb(capsys):
    assert main(["crlb", "--config", "scenarios/reference_fd.toml", "--tx-power", "40"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "target,axis,quantity,bound" and len(out) == 19


def test_run_writes_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["run", "--config", "scenarios/reference_hd.toml", "--pipeline", "ideal_mm", "--trials", "5",
                 "--sweep", "txpower=30,40", "--out", str(out)])
    assert code == 0
    assert out.read_text().startswith("sweep,target,quantity")
    assert "pos3d" in capsys.readouterr().out


def test_run_stdout(capsys):
    assert main(["run", "--config", "scenarios/reference_fd.toml", "--pipeline", "crlb_only"]) == 0
    assert capsys.readouterr().out.startswith("sweep,target,quantity")


def test_errors_exit_two(capsys):
    assert main(["run", "--config", "missing.toml", "--pipeline", "crlb_only"]) == 2
    assert capsys.readouterr().err.startswith("ncs: error:")
    assert main(["run", "--config", "scenarios/reference_fd.toml", "--sweep", "bogus=1"]) == 2
