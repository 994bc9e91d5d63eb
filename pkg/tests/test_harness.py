import csv
import json
import math

import pytest

from stablebrw.harness import cli
from stablebrw.harness.config import RunConfig, load_config_file
from stablebrw.harness.runner import pipeline_critical_comparison, run


def _cfg(tmp_path, kind, **kw):
    return RunConfig.from_mapping(kind, {"out": str(tmp_path / kind), **kw}).validate()


def test_from_mapping_coerces_and_collects_extra():
    cfg = RunConfig.from_mapping("survival", {"a": "1,2.5", "n": "100,200", "trials": "50",
                                              "lambda": 1.0, "cap-R": "3", "eps": 0.2})
    assert cfg.a == (1.0, 2.5) and cfg.n == (100, 200)
    assert cfg.trials == 50 and cfg.lambda_ == 1.0 and cfg.cap_R == 3
    assert cfg.extra == {"eps": 0.2}
    assert cfg.sigma2 == pytest.approx(2 * math.log(2))


def test_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nalpha = 1.5\nmodel: poisson_boundary\ntrials = 20  # inline\n")
    vals = load_config_file(p)
    cfg = RunConfig.from_mapping("calibrate", vals).validate()
    assert cfg.alpha == 1.5 and cfg.model == "poisson_boundary" and cfg.trials == 20


@pytest.mark.parametrize("kw, msg", [
    ({"alpha": 0.8}, r"\(1, 2\]"),
    ({"alpha": 1.5, "c": 5.0, "y0": 1.0}, "tail mass"),
    ({"trials": 0}, "trials"),
    ({"model": "nope"}, "model"),
    ({"model": "poisson_boundary", "alpha": 1.5, "cut_T": 1.0}, "cut-T"),
])
def test_validation_errors(kw, msg):
    with pytest.raises(ValueError, match=msg):
        RunConfig.from_mapping("survival", kw).validate()


def test_hash_ignores_output_location():
    a = RunConfig.from_mapping("ode", {"out": "x"})
    b = RunConfig.from_mapping("ode", {"out": "y", "workers": 4})
    c = RunConfig.from_mapping("ode", {"out": "x", "seed": 1})
    assert a.hash() == b.hash() != c.hash()


def test_same_seed_same_summary(tmp_path):
    kw = {"a": "2,4,8", "n": "100", "trials": 200, "max_pop": 300}
    r1 = run(_cfg(tmp_path / "one", "survival", **kw))
    r2 = run(_cfg(tmp_path / "two", "survival", **kw))
    s1 = (tmp_path / "one" / "survival" / "summary.csv").read_text()
    s2 = (tmp_path / "two" / "survival" / "summary.csv").read_text()
    assert s1 == s2 and r1.config_hash == r2.config_hash
    rows = list(csv.DictReader(s1.splitlines()))
    s = [float(r["s"]) for r in rows]
    assert s == sorted(s)


def test_records_carry_config_hash(tmp_path):
    rec = run(_cfg(tmp_path, "calibrate", alpha=1.5, c=1.0, y0=2.0))
    lines = (tmp_path / "calibrate" / "records.jsonl").read_text().splitlines()
    assert lines and all(json.loads(x)["config_hash"] == rec.config_hash for x in lines)
    report = (tmp_path / "calibrate" / "report.txt").read_text()
    assert rec.config_hash in report


def test_cstar_report(tmp_path):
    rec = run(_cfg(tmp_path, "cstar", trials=2000, t_end=2.0))
    text = "\n".join(rec.report)
    assert "4.9348" in text
    spectral = [r for r in rec.summary if r["method"] == "spectral"][0]
    assert abs(spectral["rel_error"]) < 0.01


def test_ode_and_critical(tmp_path):
    rec = run(_cfg(tmp_path, "ode", alpha=1.5, cstar=2.0))
    assert rec.summary
    crit = run(_cfg(tmp_path, "critical", alpha=2.0))
    assert crit.summary[0]["a_alpha"] == pytest.approx(5.17428180678704, rel=1e-9)


def test_pipeline_stage_seeds_distinct():
    out = pipeline_critical_comparison(2.0, horizons=(50, 100), trials=100, max_pop=200)
    seeds = [tuple(v) for v in out["stage_seeds"].values()]
    assert len(set(seeds)) == len(seeds) == 6
    assert out["a_alpha"] == pytest.approx(5.17428180678704, rel=1e-9)
    assert out["direction"] in ("increasing", "decreasing", "mixed")


def test_pipeline_stable_smoke():
    out = pipeline_critical_comparison(1.5, horizons=(40, 80), trials=100, max_pop=200)
    assert out["cstar"] > 0 and out["a_alpha"] > 0
    assert 0 < out["gw_survival"] < 1
    assert len(out["crossings"]) == 2
    for n in (40, 80):
        s = [row["s"] for row in out["curves"][n]]
        assert all(b >= a for a, b in zip(s, s[1:]))


def test_cli_main(tmp_path, capsys):
    rc = cli.main(["critical", "--alpha", "2", "--out", str(tmp_path / "c")])
    assert rc == 0 and "5.174" in capsys.readouterr().out
    rc = cli.main(["survival", "--alpha", "0.8", "--out", str(tmp_path / "bad")])
    assert rc == 2 and "invalid configuration" in capsys.readouterr().err
    cfgfile = tmp_path / "f.cfg"
    cfgfile.write_text("alpha = 1.5\nc = 1\ny0 = 2\n")
    rc = cli.main(["calibrate", "--config", str(cfgfile), "--out", str(tmp_path / "cal")])
    assert rc == 0
