"""End-to-end command-line behavior: files, exit codes, determinism."""

import json
import xml.etree.ElementTree as ET

import pytest

from hiermnl.cli import (EXIT_DATA, EXIT_OK, EXIT_USAGE, main)

SIM_SPEC = {
    "factors": [{"name": "sex", "levels": ["F", "M"]}],
    "categories": {"labels": ["rest", "feed", "walk"]},
    "n_subjects": 4,
    "weeks": ["1", "2"],
    "trials": 30,
    "model": "model1",
    "truth": {"intercept[feed|1]": 0.4},
    "raneff_sd": 0.5,
    "seed": 21
}

EVENTS = """\
subject,week,sex,pen,category
p1,1,F,bare,rest
p1,1,F,bare,feed
p1,2,F,bare,walk
p2,1,M,toys,feed
p2,2,M,toys,rest
p3,1,F,toys,walk
p3,2,F,toys,walk
p4,1,M,bare,rest
p4,2,M,bare,feed
"""

FAST = ["--chains", "2", "--iter", "60", "--burnin", "30", "--thin", "3"]


def write_spec(tmp_path, **overrides):
    doc = dict(SIM_SPEC)
    doc.update(overrides)
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(doc))
    return str(path)


def simulated_data(tmp_path):
    spec = write_spec(tmp_path)
    out = tmp_path / "sim"
    assert main(["simulate", "--spec", spec, "--out", str(out)]) == EXIT_OK
    return out / "data.csv"


@pytest.fixture()
def events_csv(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text(EVENTS)
    return str(path)


class TestUsageErrors:
    def test_no_arguments(self, capsys):
        assert main([]) == EXIT_USAGE
        assert "usage error" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert main(["transmogrify"]) == EXIT_USAGE

    def test_fit_needs_model(self, events_csv, capsys):
        assert main(["fit", "--data", events_csv]) == EXIT_USAGE
        assert "--model" in capsys.readouterr().err

    def test_compare_needs_two_distinct_models(self, events_csv, capsys):
        assert main(["compare", "--data", events_csv,
                     "--models", "model1"]) == EXIT_USAGE
        assert main(["compare", "--data", events_csv,
                     "--models", "model1,model1"]) == EXIT_USAGE
        assert "twice" in capsys.readouterr().err


class TestDataErrors:
    def test_missing_file(self, tmp_path, capsys):
        assert main(["explore", "--data", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path)]) == EXIT_DATA
        assert "file not found" in capsys.readouterr().err

    def test_missing_category_column(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("subject,week\na,1\n")
        assert main(["explore", "--data", str(bad),
                     "--out", str(tmp_path)]) == EXIT_DATA
        assert "category" in capsys.readouterr().err

    def test_line_number_in_count_errors(self, tmp_path, capsys):
        data = tmp_path / "counts.csv"
        data.write_text("subject,week,rest,feed\na,1,1,0\na,2,1,x\n")
        schema = tmp_path / "counts.csv.schema.json"
        schema.write_text(json.dumps(
            {"categories": {"labels": ["rest", "feed"]}}))
        assert main(["explore", "--data", str(data),
                     "--out", str(tmp_path)]) == EXIT_DATA
        assert "line 3" in capsys.readouterr().err

    def test_single_category_table(self, tmp_path, capsys):
        only = tmp_path / "one.csv"
        only.write_text("subject,week,pen,category\n"
                        "a,1,bare,rest\nb,1,toys,rest\n")
        assert main(["explore", "--data", str(only),
                     "--out", str(tmp_path)]) == EXIT_DATA
        assert "two categories" in capsys.readouterr().err

    def test_conflicting_assignment(self, tmp_path, capsys):
        flip = tmp_path / "flip.csv"
        flip.write_text("subject,week,sex,category\n"
                        "a,1,F,x\na,2,M,y\nb,1,F,y\n")
        assert main(["explore", "--data", str(flip),
                     "--out", str(tmp_path)]) == EXIT_DATA
        assert "line 3" in capsys.readouterr().err


class TestSimulate:
    def test_writes_reloadable_bundle(self, tmp_path, capsys):
        data = simulated_data(tmp_path)
        out = data.parent
        assert sorted(p.name for p in out.iterdir()) == [
            "data.csv", "data.csv.schema.json", "metadata.json", "truth.json"]
        truth = json.loads((out / "truth.json").read_text())
        assert truth["params"]["intercept[feed|1]"] == pytest.approx(0.4)
        assert truth["raneff_sd"] == pytest.approx(0.5)
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["command"] == "simulate"
        assert meta["seed"] == 21
        assert meta["table"]["subjects"] == 4

    def test_seed_override_changes_data(self, tmp_path):
        spec = write_spec(tmp_path)
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        main(["simulate", "--spec", spec, "--out", str(a)])
        main(["simulate", "--spec", spec, "--out", str(b)])
        main(["simulate", "--spec", spec, "--seed", "99", "--out", str(c)])
        read = lambda d: (d / "data.csv").read_text()
        assert read(a) == read(b)
        assert read(a) != read(c)


class TestFit:
    def test_full_pipeline_files(self, tmp_path, capsys):
        data = simulated_data(tmp_path)
        fit_dir = tmp_path / "fit"
        rc = main(["fit", "--data", str(data), "--model", "model1",
                   *FAST, "--seed", "5", "--out", str(fit_dir)])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "DIC" in out
        names = sorted(p.name for p in fit_dir.iterdir())
        assert names == ["dic.json", "draws.csv", "metadata.json",
                         "summary.csv"]

        draws = (fit_dir / "draws.csv").read_text().splitlines()
        header = draws[0].split(",")
        assert header[:2] == ["chain", "iter"]
        assert header[2].startswith("intercept[")
        first = draws[1].split(",")
        assert first[0] == "0" and first[1] == "3"  # first kept iteration
        assert len(draws) == 1 + 2 * 20  # two chains, 60/3 kept each

        summary = (fit_dir / "summary.csv").read_text().splitlines()
        assert summary[0].startswith("parameter,mean")
        assert len(summary) == 1 + len(header) - 2

        dic_doc = json.loads((fit_dir / "dic.json").read_text())
        assert dic_doc["model"] == "model1"
        assert dic_doc["dic"] == pytest.approx(dic_doc["dbar"] + dic_doc["pd"])

    def test_metadata_is_complete_and_timeless(self, tmp_path):
        data = simulated_data(tmp_path)
        fit_dir = tmp_path / "fit"
        main(["fit", "--data", str(data), "--model", "model1", *FAST,
              "--seed", "5", "--out", str(fit_dir)])
        meta = json.loads((fit_dir / "metadata.json").read_text())
        assert meta["artifact"]["name"] == "hiermnl"
        assert meta["command"] == "fit"
        assert meta["seed"] == 5
        assert meta["rng"]["algorithm"] == "numpy.random.Philox"
        assert meta["config"]["n_chains"] == 2
        assert meta["config"]["n_kept"] == 20
        assert meta["data"]["format"] == "counts"  # sidecar schema detected
        assert len(meta["data"]["fingerprint"]) == 64
        assert meta["model"]["name"] == "model1"
        assert meta["sampler"]["chain_seeds"] == [[5, 0], [5, 1]]
        rates = meta["sampler"]["acceptance_rates"]
        assert all(len(v) == 2 for v in rates.values())
        assert sorted(meta["outputs"]) == sorted(
            p.name for p in fit_dir.iterdir())
        lowered = json.dumps(meta).lower()
        assert "time" not in lowered and "date" not in lowered

    def test_reruns_are_byte_identical(self, tmp_path):
        data = simulated_data(tmp_path)
        one, two = tmp_path / "one", tmp_path / "two"
        argv = ["fit", "--data", str(data), "--model", "model1", *FAST,
                "--seed", "5"]
        main(argv + ["--out", str(one)])
        main(argv + ["--out", str(two)])
        for name in ("draws.csv", "summary.csv", "dic.json", "metadata.json"):
            assert (one / name).read_bytes() == (two / name).read_bytes()

    def test_events_format_detected(self, events_csv, tmp_path):
        fit_dir = tmp_path / "fit"
        rc = main(["fit", "--data", events_csv, "--model", "model1", *FAST,
                   "--out", str(fit_dir)])
        assert rc == EXIT_OK
        meta = json.loads((fit_dir / "metadata.json").read_text())
        assert meta["data"]["format"] == "events"

    def test_interval_charts_are_valid_svg(self, tmp_path):
        data = simulated_data(tmp_path)
        fit_dir = tmp_path / "fit"
        main(["fit", "--data", str(data), "--model", "model1", *FAST,
              "--svg", "--out", str(fit_dir)])
        svgs = list(fit_dir.glob("intervals_*.svg"))
        assert {s.name for s in svgs} == {"intervals_intercept.svg",
                                          "intervals_sex-M.svg"}
        for path in svgs:
            root = ET.fromstring(path.read_text())
            assert root.tag.endswith("svg")


class TestSummarize:
    def test_reproduces_fit_summary(self, tmp_path):
        data = simulated_data(tmp_path)
        fit_dir = tmp_path / "fit"
        main(["fit", "--data", str(data), "--model", "model1", *FAST,
              "--seed", "5", "--out", str(fit_dir)])
        sum_dir = tmp_path / "resummary"
        rc = main(["summarize", "--draws", str(fit_dir / "draws.csv"),
                   "--out", str(sum_dir)])
        assert rc == EXIT_OK
        assert ((sum_dir / "summary.csv").read_text()
                == (fit_dir / "summary.csv").read_text())

    def test_ragged_chains_rejected(self, tmp_path, capsys):
        bad = tmp_path / "draws.csv"
        bad.write_text("chain,iter,p\n0,1,0.5\n0,2,0.6\n1,1,0.7\n")
        assert main(["summarize", "--draws", str(bad),
                     "--out", str(tmp_path)]) == EXIT_DATA
        assert "unequal" in capsys.readouterr().err

    def test_wrong_header_rejected(self, tmp_path, capsys):
        bad = tmp_path / "draws.csv"
        bad.write_text("chain,draw,p\n0,1,0.5\n")
        assert main(["summarize", "--draws", str(bad),
                     "--out", str(tmp_path)]) == EXIT_DATA
        assert "chain,iter" in capsys.readouterr().err


class TestCompare:
    def test_ranks_and_reports(self, events_csv, tmp_path, capsys):
        cmp_dir = tmp_path / "cmp"
        rc = main(["compare", "--data", events_csv,
                   "--models", "model1,model2", *FAST,
                   "--out", str(cmp_dir)])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "selected:" in out
        names = sorted(p.name for p in cmp_dir.iterdir())
        assert names == ["comparison.csv", "comparison.txt", "dic_model1.json",
                         "dic_model2.json", "metadata.json"]
        lines = (cmp_dir / "comparison.csv").read_text().splitlines()
        assert lines[0].startswith("rank,model")
        assert len(lines) == 3
        assert float(lines[1].rsplit(",", 1)[1]) == 0.0  # best delta

    def test_fingerprints_agree_across_reports(self, events_csv, tmp_path):
        cmp_dir = tmp_path / "cmp"
        main(["compare", "--data", events_csv, "--models", "model1,model2",
              *FAST, "--out", str(cmp_dir)])
        prints = {json.loads((cmp_dir / f"dic_{m}.json").read_text())
                  ["table_fingerprint"] for m in ("model1", "model2")}
        assert len(prints) == 1


class TestExplore:
    def test_writes_analysis_bundle(self, events_csv, tmp_path, capsys):
        exp_dir = tmp_path / "exp"
        rc = main(["explore", "--data", events_csv, "--out", str(exp_dir)])
        assert rc == EXIT_OK
        assert "chi-square" in capsys.readouterr().out
        names = sorted(p.name for p in exp_dir.iterdir())
        assert names == ["ca_coords.csv", "ca_inertia.csv", "chi_square.json",
                         "metadata.json", "profiles.csv"]
        meta = json.loads((exp_dir / "metadata.json").read_text())
        assert meta["group"] == ["sex", "pen"]  # all factors by default
        coords = (exp_dir / "ca_coords.csv").read_text().splitlines()
        assert coords[0].startswith("entity,type")
        # crossed groups appear as rows, categories as columns
        assert any(line.startswith("F:bare,row") for line in coords)
        assert any(line.startswith("walk,col") for line in coords)

    def test_group_flag_and_svg(self, events_csv, tmp_path):
        exp_dir = tmp_path / "exp"
        rc = main(["explore", "--data", events_csv, "--group", "pen",
                   "--svg", "--out", str(exp_dir)])
        assert rc == EXIT_OK
        svgs = sorted(p.name for p in exp_dir.glob("*.svg"))
        assert svgs == ["ca_biplot.svg", "profiles_bare.svg",
                        "profiles_toys.svg"]
        for name in svgs:
            root = ET.fromstring((exp_dir / name).read_text())
            assert root.tag.endswith("svg")

    def test_factorless_table_needs_group(self, tmp_path, capsys):
        plain = tmp_path / "plain.csv"
        plain.write_text("subject,week,category\na,1,x\na,2,y\nb,1,y\n")
        assert main(["explore", "--data", str(plain),
                     "--out", str(tmp_path)]) == EXIT_USAGE
        assert "--group" in capsys.readouterr().err


class TestOutputDirectory:
    def test_env_var_default(self, events_csv, tmp_path, monkeypatch):
        target = tmp_path / "from-env"
        monkeypatch.setenv("HIERMNL_OUT", str(target))
        assert main(["explore", "--data", events_csv]) == EXIT_OK
        assert (target / "chi_square.json").exists()

    def test_flag_beats_env(self, events_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("HIERMNL_OUT", str(tmp_path / "env"))
        flagged = tmp_path / "flag"
        main(["explore", "--data", events_csv, "--out", str(flagged)])
        assert (flagged / "chi_square.json").exists()
        assert not (tmp_path / "env").exists()
