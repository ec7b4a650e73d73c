import json

import numpy as np
import pytest

from bft.cli import main


def write_stats(tmp_path, payload, name="stats.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


TTEST = {"test": "ttest", "n": 28, "mean": 4.392857, "t": -1.9318, "null": 5}


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------------------
# happy paths


def test_exploratory_only_table(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    code, out, err = run(capsys, "--stats", stats, "--test", "ttest")
    assert code == 0 and err == ""
    assert "Exploratory posterior probabilities" in out
    assert "Hypotheses" not in out


def test_confirmatory_table_sections(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    code, out, _ = run(capsys, "--stats", stats, "--test", "ttest",
                       "--hypothesis", "mu = 5; mu > 5")
    assert code == 0
    for section in ("Hypotheses:", "Posterior probabilities:",
                    "Evidence matrix", "Specification table:"):
        assert section in out


def test_json_output_schema(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    code, out, _ = run(capsys, "--stats", stats, "--test", "ttest",
                       "--hypothesis", "mu = 5; mu > 5", "--format", "json")
    assert code == 0
    d = json.loads(out)
    assert d["schema"] == "bf-result/1"
    assert d["parameters"] == ["mu"]
    assert len(d["hypotheses"]) == 3            # two stated + complement
    assert d["hypotheses"][2]["text"] == "complement"
    np.testing.assert_allclose(sum(d["posterior_probs"]), 1.0, atol=1e-12)
    B = np.array(d["evidence_matrix"])
    np.testing.assert_allclose(B * B.T, 1.0, atol=1e-9)


def test_json_output_is_byte_deterministic(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    args = ("--stats", stats, "--test", "ttest",
            "--hypothesis", "mu > 5", "--format", "json")
    _, first, _ = run(capsys, *args)
    _, second, _ = run(capsys, *args)
    assert first == second


def test_test_field_read_from_stats_file(tmp_path, capsys):
    # --test is optional when the stats file names the analysis
    stats = write_stats(tmp_path, TTEST)
    code, out, _ = run(capsys, "--stats", stats, "--format", "json")
    assert code == 0
    assert json.loads(out)["test"] == "ttest"


def test_data_and_stats_paths_agree(tmp_path, capsys):
    rng = np.random.default_rng(12)
    y = rng.normal(4.4, 2.0, size=28)
    csv = tmp_path / "d.csv"
    csv.write_text("y\n" + "\n".join(f"{v:.17g}" for v in y) + "\n")
    stats = write_stats(tmp_path, {
        "test": "ttest", "n": 28, "mean": float(y.mean()),
        "ss": float(((y - y.mean()) ** 2).sum()), "null": 5})
    argv = ("--test", "ttest", "--hypothesis", "mu < 5", "--format", "json")
    _, from_data, _ = run(capsys, "--data", str(csv), "--outcome", "y",
                          "--null", "5", *argv)
    _, from_stats, _ = run(capsys, "--stats", stats, *argv)
    a, b = json.loads(from_data), json.loads(from_stats)
    np.testing.assert_allclose(a["posterior_probs"], b["posterior_probs"],
                               rtol=1e-9)


def test_variances_from_data(tmp_path, capsys):
    rng = np.random.default_rng(13)
    rows = ["y,g"]
    for g, scale in (("a", 1.0), ("b", 1.1), ("c", 3.0)):
        rows += [f"{rng.normal(0, scale):.17g},{g}" for _ in range(15)]
    csv = tmp_path / "v.csv"
    csv.write_text("\n".join(rows) + "\n")
    code, out, _ = run(capsys, "--data", str(csv), "--test", "variances",
                       "--outcome", "y", "--group", "g",
                       "--hypothesis", "a = b < c", "--format", "json")
    assert code == 0
    d = json.loads(out)
    assert d["parameters"] == ["a", "b", "c"]
    assert d["posterior_probs"][0] > 0.5        # true hypothesis should win


def test_prior_weights_applied(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    args = ("--stats", stats, "--test", "ttest",
            "--hypothesis", "mu = 5; mu > 5", "--format", "json")
    _, flat, _ = run(capsys, *args)
    _, skew, _ = run(capsys, *args, "--prior", "1,1,0")
    p_flat = json.loads(flat)["posterior_probs"]
    p_skew = json.loads(skew)["posterior_probs"]
    assert p_skew[2] == 0.0
    assert p_flat[2] > 0.0
    np.testing.assert_allclose(sum(p_skew), 1.0, atol=1e-12)


def test_imputation_pooling(tmp_path, capsys):
    rng = np.random.default_rng(14)
    d = tmp_path / "imps"
    d.mkdir()
    base = rng.normal(4.4, 2.0, size=28)
    for i in range(3):
        y = base + rng.normal(0, 0.05, size=28)
        (d / f"imp{i}.csv").write_text(
            "y\n" + "\n".join(f"{v:.17g}" for v in y) + "\n")
    code, out, _ = run(capsys, "--imputations", str(d), "--test", "ttest",
                       "--outcome", "y", "--null", "5",
                       "--hypothesis", "mu < 5", "--format", "json")
    assert code == 0
    res = json.loads(out)
    assert res["imputations"] == 3
    assert "exploratory" not in res             # pooled runs skip it
    np.testing.assert_allclose(sum(res["posterior_probs"]), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# failure modes and exit codes


def test_parse_error_is_exit_2(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    code, _, err = run(capsys, "--stats", stats, "--test", "ttest",
                       "--hypothesis", "mu >> 5")
    assert code == 2
    assert "error:" in err


def test_unknown_parameter_is_exit_2(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    code, _, err = run(capsys, "--stats", stats, "--test", "ttest",
                       "--hypothesis", "nu > 5")
    assert code == 2
    assert "nu" in err


def test_weight_count_mismatch_is_exit_2(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    code, _, err = run(capsys, "--stats", stats, "--test", "ttest",
                       "--hypothesis", "mu = 5; mu > 5", "--prior", "1,1")
    assert code == 2
    assert "weights" in err


def test_data_error_is_exit_3(tmp_path, capsys):
    code, _, err = run(capsys, "--stats", str(tmp_path / "missing.json"),
                       "--test", "ttest")
    assert code == 3

    stats = write_stats(tmp_path, {"test": "ttest", "n": 2, "mean": 0.0,
                                   "sd": 1.0})
    code, _, err = run(capsys, "--stats", stats, "--test", "ttest")
    assert code == 3
    assert "n >= 3" in err


def test_two_sources_is_exit_3(tmp_path, capsys):
    stats = write_stats(tmp_path, TTEST)
    code, _, err = run(capsys, "--stats", stats, "--data", stats,
                       "--test", "ttest")
    assert code == 3
    assert "exactly one" in err


def test_numerical_failure_is_exit_4(tmp_path, capsys):
    stats = write_stats(tmp_path, {
        "test": "gaussian", "estimates": [0.0, 0.0],
        "cov": [[1.0, 1.0], [1.0, 1.0]],        # singular
        "n": 20, "names": ["a", "b"]})
    code, _, err = run(capsys, "--stats", stats, "--test", "gaussian",
                       "--hypothesis", "a = 0 & b = 0")
    assert code == 4
    assert "numerical failure" in err


def test_imputations_need_two_files(tmp_path, capsys):
    d = tmp_path / "one"
    d.mkdir()
    (d / "a.csv").write_text("y\n1.0\n2.0\n3.0\n")
    code, _, err = run(capsys, "--imputations", str(d), "--test", "ttest",
                       "--outcome", "y", "--hypothesis", "mu > 0")
    assert code == 3
    assert "two" in err
