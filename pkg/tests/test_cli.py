import json
import math

import pytest

from varswap import __version__
from varswap.cli import EXIT_BREAKDOWN, EXIT_CONFIG, EXIT_OK, EXIT_REFUSED, main

BS = "[model]\nfamily = \"BlackScholes\"\ns0 = 100.0\nsigma = {sigma}\n[grid]\nT = 1.0\nn = {n}\n[mc]\nn_paths = {paths}\nseed = 7\n"
VOLVOL = ["-p", "family=VolOfVol", "-p", "s0=100", "-p", "v0=0.04", "-p", "w0=1", "-p", "kappa=0.5",
          "-p", "theta=1", "-p", "eta=1", "-p", "rho=1", "-p", "grid.T=2"]
THREE_HALVES = ["-p", "s0=100", "-p", "v0=0.04", "-p", "p=0.1", "-p", "q=-1", "-p", "epsilon=1"]


@pytest.fixture
def bs_config(tmp_path):
    def make(sigma=0.2, n=252, paths=20000):
        path = tmp_path / f"bs_{sigma}_{n}_{paths}.toml"
        path.write_text(BS.format(sigma=sigma, n=n, paths=paths))
        return str(path)
    return make


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_price_black_scholes(bs_config, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["price", bs_config(), "--out", str(out), "--annualize"]) == EXIT_OK
    doc = read_json(out / "price.json")
    assert doc["library_version"] == __version__
    assert doc["config"]["model"] == {"family": "BlackScholes", "s0": 100.0, "sigma": 0.2}
    est = {e["label"]: e for e in doc["estimates"]}
    pn = est["P^n"]
    assert abs(pn["mean"] - 0.0400016) < 3 * pn["stderr"]
    assert est["P"]["mean"] == pytest.approx(0.04, rel=1e-15) and est["P"]["stderr"] == 0.0
    assert est["P^n annualized"]["mean"] == pytest.approx(pn["mean"])
    assert doc["verdict"]["ep_discrete"] == "Finite"
    text = (out / "price.csv").read_bytes().decode()
    assert text.startswith("# config_hash: ")
    assert "\r\nestimand,mean,stderr,ci_low,ci_high,n_paths,seed\r\n" in text


def test_annualization_factor(bs_config, tmp_path):
    out = tmp_path / "o"
    assert main(["price", bs_config(n=12, paths=2000), "--out", str(out), "--annualize", "--format", "json"]) == 0
    est = {e["label"]: e for e in read_json(out / "price.json")["estimates"]}
    assert est["P^n annualized"]["mean"] == pytest.approx(est["P^n"]["mean"] * 21)
    assert est["V annualized"]["mean"] == pytest.approx(est["V"]["mean"] * math.sqrt(21))
    assert not (out / "price.csv").exists()


def test_price_zero_volatility(bs_config, tmp_path):
    out = tmp_path / "o"
    assert main(["price", bs_config(sigma=0.0, paths=1000), "--out", str(out)]) == EXIT_OK
    for e in read_json(out / "price.json")["estimates"]:
        assert e["mean"] == 0.0 and e["stderr"] == 0.0


def test_price_refuses_infinite_expectation(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["price", *VOLVOL, "-p", "grid.n=16", "--paths", "1000", "--out", str(out)])
    assert code == EXIT_REFUSED
    err = capsys.readouterr().err
    assert "Infinite" in err and "1.386294361" in err
    doc = read_json(out / "price.json")
    assert doc["refused"] is True and doc["verdict"]["ep_discrete"] == "Infinite"
    assert "estimates" not in doc
    forced = main(["price", *VOLVOL, "-p", "grid.n=16", "--paths", "2000", "--out", str(out), "--force"])
    assert forced == EXIT_OK
    assert read_json(out / "price.json")["forced"] is True


def test_config_errors_exit_one(bs_config, tmp_path, capsys):
    assert main(["price", bs_config(), "-p", "grid.bogus=1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "grid.bogus" in capsys.readouterr().err
    assert main(["price", "-p", "family=BlackScholes", "-p", "s0=1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["price", str(tmp_path / "absent.toml")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["price", "--no-such-flag"])
    assert exc.value.code == EXIT_CONFIG


def test_numerical_breakdown_exit_three(tmp_path):
    args = ["price", "-p", "family=ThreeHalves", "-p", "s0=100", "-p", "v0=10", "-p", "p=5", "-p", "q=-1",
            "-p", "epsilon=3", "-p", "grid.T=1", "-p", "grid.n=4", "-p", "grid.substeps=1",
            "-p", "mc.scheme=\"EulerFullTruncation\"", "--paths", "1000", "--out", str(tmp_path)]
    assert main(args) == EXIT_BREAKDOWN


def test_converge_outputs_and_refusal(bs_config, tmp_path):
    out = tmp_path / "o"
    assert main(["converge", bs_config(paths=20000), "--n", "4,16,64", "--out", str(out)]) == EXIT_OK
    doc = read_json(out / "converge.json")
    assert [r["n"] for r in doc["table"]["rows"]] == [4, 16, 64]
    assert doc["rate_fit"]["column"] == "gap_cv"
    lines = (out / "converge.csv").read_bytes().decode().split("\r\n")
    assert "n,ep_n,se_n,ep_qv,se_qv,gap,gap_se" in lines[3]
    heavy = ["-p", "family=ThreeHalves", *THREE_HALVES[:-4], "-p", "q=0.3", "-p", "epsilon=1", "-p", "grid.T=1",
             "--n", "4,8", "--paths", "1000", "--out", str(out)]
    assert main(["converge", *heavy]) == EXIT_REFUSED
    assert main(["converge", *heavy, "--force"]) == EXIT_OK
    assert read_json(out / "converge.json")["exploratory"] is True


def test_outputs_are_byte_identical(bs_config, tmp_path):
    cfg = bs_config(paths=5000)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["converge", cfg, "--n", "4,16", "--out", str(a), "--workers", "1"]) == 0
    assert main(["converge", cfg, "--n", "4,16", "--out", str(b), "--workers", "3"]) == 0
    assert (a / "converge.csv").read_bytes() == (b / "converge.csv").read_bytes()
    c = tmp_path / "c"
    assert main(["converge", cfg, "--n", "4,16", "--out", str(c), "--workers", "1"]) == 0
    assert (a / "converge.json").read_bytes() == (c / "converge.json").read_bytes()


def test_timestamps_opt_in(bs_config, tmp_path):
    out = tmp_path / "o"
    main(["price", bs_config(paths=100), "--out", str(out)])
    assert "generated_at" not in read_json(out / "price.json")
    main(["price", bs_config(paths=100), "--out", str(out), "--timestamps"])
    assert "generated_at" in read_json(out / "price.json")
    assert "# generated_at:" in (out / "price.csv").read_text()


def test_env_default_output_dir(bs_config, tmp_path, monkeypatch):
    monkeypatch.setenv("VARSWAP_OUT", str(tmp_path / "env"))
    assert main(["price", bs_config(paths=100)]) == 0
    assert (tmp_path / "env" / "price.json").exists()


def test_explode(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["explode", "-p", "kappa=0.5", "-p", "eta=1", "-p", "rho=1", "--out", str(out)]) == 0
    doc = read_json(out / "explode.json")
    assert abs(doc["explosion"]["tstar"] - 2 * math.log(2)) < 1e-12
    assert "q_transform" not in doc
    assert main(["explode", "-p", "kappa=1", "-p", "eta=0.1", "-p", "rho=0", "--out", str(out)]) == 0
    assert read_json(out / "explode.json")["explosion"]["tstar"] == "inf"
    assert main(["explode", "-p", "kappa=0.5", "-p", "eta=1", "-p", "rho=0.99", "-p", "theta=1", "--out", str(out)]) == 0
    assert read_json(out / "explode.json")["tstar_q"] == "inf"
    assert main(["explode", *VOLVOL, "--out", str(out)]) == 0
    assert read_json(out / "explode.json")["verdict"]["ep_discrete"] == "Infinite"


def test_laplace_and_moments(tmp_path):
    out = tmp_path / "o"
    assert main(["laplace", *THREE_HALVES, "-p", "grid.T=1", "-p", "options.lambdas=[0, 1, 2]", "--out", str(out)]) == 0
    vals = [r["value"] for r in read_json(out / "laplace.json")["values"]]
    assert abs(vals[0] - 1.0) < 1e-12 and vals[2] < vals[1] < 1
    assert main(["moments", *THREE_HALVES, "-p", "options.t=1", "-p", "options.orders=[1, -2, -4]", "--out", str(out)]) == 0
    doc = read_json(out / "moments.json")
    assert doc["vbar"] == 4.0
    assert [m["finite"] for m in doc["moments"]] == [True, True, False]
    assert main(["moments", *THREE_HALVES, "-p", "options.t=1", "-p", "options.orders=[-1]",
                 "-p", "options.variant=\"printed\"", "--out", str(out)]) == 0
    assert read_json(out / "moments.json")["moments"][0]["note"]
    assert main(["laplace", "-p", "family=BlackScholes", "-p", "s0=1", "-p", "sigma=0.2", "-p", "grid.T=1",
                 "--out", str(out)]) == EXIT_CONFIG


def test_tail_and_path_dump(tmp_path):
    out = tmp_path / "o"
    args = ["tail", *VOLVOL, "--paths", "10000", "-p", "options.steps=50", "--out", str(out), "--dump-paths", "3"]
    assert main(args) == 0
    doc = read_json(out / "tail.json")
    assert doc["tail"]["verdict"] in ("SecondMomentLikelyInfinite", "Inconclusive")
    rows = (out / "paths.csv").read_bytes().decode().strip().split("\r\n")
    assert rows[3] == "path,time,log_price,v,w"
    assert len(rows) == 4 + 3 * 51
    assert read_json(out / "paths.json")["seed"] == 0
