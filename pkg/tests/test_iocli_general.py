import dataclasses
import json
import logging
import os
import subprocess
import sys

import pandas as pd
import pytest

from archmodel import derived_metrics
from corpus import RunRecord, entries_by_size, lookup, reference_model
from iocli import (
    EXIT_INVALID,
    EXIT_NUMERICAL,
    EXIT_OK,
    LawFormatException,
    RunFormatException,
    find_duplicates,
    grid_from_dict,
    law_from_dict,
    law_to_dict,
    load_law,
    load_runs,
    main,
    parse_ref,
    save_law,
    save_runs,
)
from laws import LAW_FIT_1B, LAW_FIT_80M_TO_297M, conditional_loss, ref_loss
from synthetic import generate_runs, synthetic_reference

CSV_HEADER = "size_label,variant,d_tokens,loss\n"


def write(path, text):
    path.write_text(text)
    return str(path)


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def test_load_runs_resolves_corpus_names(tmp_path):
    records = load_runs(write(tmp_path / "runs.csv", CSV_HEADER + "80M,v1,8e9,3.1234\n"))
    assert len(records) == 1
    record = records[0]
    assert record.arch.shape_key() == lookup("80M", "v1").to_config().shape_key()
    assert record.arch.name == "80M/v1"
    assert (record.d_tokens, record.loss) == (8e9, 3.1234)


def test_load_runs_reports_row_and_field(tmp_path):
    path = write(tmp_path / "runs.csv", CSV_HEADER + "80M,v1,8e9,3.1\n80M,v2,8e9,-1.0\n")
    with pytest.raises(RunFormatException) as info:
        load_runs(path)
    assert (info.value.row, info.value.field) == (2, "loss")
    assert "row 2, field 'loss'" in str(info.value)


@pytest.mark.parametrize(
    "row, field",
    [
        ("80M,v99,8e9,3.1", "variant"),
        ("80M,v1,lots,3.1", "d_tokens"),
        ("80M,v1,0,3.1", "d_tokens"),
        (",,8e9,3.1", "n_layers"),
    ],
)
def test_load_runs_field_errors(tmp_path, row, field):
    with pytest.raises(RunFormatException) as info:
        load_runs(write(tmp_path / "runs.csv", CSV_HEADER + row + "\n"))
    assert info.value.field == field


def test_inline_architecture_columns(tmp_path):
    text = ("size_label,variant,n_layers,d_model,n_head,d_head,gqa,f_size,d_tokens,loss\n"
            ",,16,2560,36,64,9,6144,1e11,2.41\n"
            "80M,v1,,,,,,3072,8e9,3.2\n")
    first, second = load_runs(write(tmp_path / "runs.csv", text))
    assert first.arch.name == "L16-d2560-h36-g9-f6144"
    assert first.size_label is None
    assert second.arch.f_size == 3072 and second.arch.n_head == 16


def test_repeated_runs_are_kept(tmp_path, caplog):
    path = write(tmp_path / "runs.csv", CSV_HEADER + "80M,v1,8e9,3.1\n80M,v1,8e9,3.2\n")
    with caplog.at_level(logging.WARNING, logger="iocli"):
        records = load_runs(path)
    assert [r.loss for r in records] == [3.1, 3.2]
    assert find_duplicates(records) == [[0, 1]]
    assert "repeated runs" in caplog.text


def test_json_runs_with_nested_architecture(tmp_path):
    arch = reference_model("Panda-1B").to_config().to_dict()
    arch.pop("name")
    path = write_json(tmp_path / "runs.json", [{"arch": arch, "d_tokens": 1e11, "loss": 2.4, "tags": "a;b"}])
    record = load_runs(path)[0]
    assert record.arch.name == "L16-d2560-h72-g4-f4096"
    assert record.tags == ("a", "b")
    with pytest.raises(RunFormatException):
        load_runs(write_json(tmp_path / "bad.json", {"d_tokens": 1}))
    with pytest.raises(ValueError, match="unsupported run file format"):
        load_runs(write(tmp_path / "runs.txt", ""))


def test_save_and_load_runs(tmp_path):
    records = [RunRecord(lookup("145M", "v3").to_config(), 1.45e10, 3.01, "145M", "v3", ("synthetic",))]
    for name in ("runs.csv", "runs.json"):
        save_runs(records, tmp_path / name)
        assert load_runs(tmp_path / name) == records


def test_law_files(tmp_path):
    path = tmp_path / "law.json"
    save_law(LAW_FIT_1B, path)
    assert load_law(path) == LAW_FIT_1B
    data = json.loads(path.read_text())
    assert data["version"] == 1 and data["log_base"] == "natural"
    assert (data["a2"], data["b2"]) == (0.0176, 0.0062)


def test_flat_law_file_without_version(tmp_path):
    law = write_json(tmp_path / "law.json", {"form": "multiplicative", "a0": 2.697, "a1": 0.0974, "a2": 0.0078,
                                             "b0": 0.3870, "b1": 0.0063, "b2": 0.0065, "log_base": "natural"})
    assert load_law(law) == LAW_FIT_80M_TO_297M
    joint = law_from_dict({"form": "joint", "a0": 2.5, "a1": 0.01, "a2": 0.02})
    assert (joint.a2, joint.b0) == (0.02, None)


@pytest.mark.parametrize(
    "change, message",
    [
        ({"form": "cubic"}, "unknown law form"),
        ({"version": 2}, "newer"),
        ({"version": "1"}, "integer version"),
        ({"form": "additive"}, r"no coefficients \['b0'\]"),
        ({"c0": 1.0}, "no coefficients"),
        ({"log_base": "10"}, "log_base"),
        ({"a1": "steep"}, "must be numbers"),
        ({"a1": None}, "must be numbers"),
        ({"a0": float("nan")}, "finite a0"),
        ({"fit_meta": [1, 2]}, "fit_meta"),
    ],
)
def test_law_format_errors(change, message):
    with pytest.raises(LawFormatException, match=message):
        law_from_dict({**law_to_dict(LAW_FIT_80M_TO_297M), **change})


def test_law_missing_coefficient():
    with pytest.raises(LawFormatException, match=r"missing \['b0'\]"):
        law_from_dict({"form": "multiplicative", "a0": 1, "a1": 1, "a2": 1, "b1": 1, "b2": 1})


@pytest.mark.parametrize("data", [[1, 2], "law", None, 3.5])
def test_law_file_must_be_an_object(data):
    with pytest.raises(LawFormatException, match="JSON object"):
        law_from_dict(data)


def test_parse_ref(tmp_path):
    assert parse_ref("synthetic").kind == "chinchilla"
    chinchilla = write_json(tmp_path / "c.json", {"E": 1.69, "A": 406.4, "alpha": 0.34, "B": 410.7, "beta": 0.28})
    assert ref_loss(parse_ref(f"chinchilla:{chinchilla}"), 1e9, 1e11) == pytest.approx(
        ref_loss(synthetic_reference(), 1e9, 1e11))
    with pytest.raises(ValueError, match="needs run data"):
        parse_ref("empirical")
    with pytest.raises(ValueError, match="unrecognized reference"):
        parse_ref("oracle")


def test_grid_from_dict():
    grid = grid_from_dict({"n_target": 973078528, "n_layers": 16, "d_head": 64, "gqa_values": [4],
                           "d_model_values": [2048], "r_values": [1.0], "d_multiple": 512})
    assert grid.snapping.d_multiple == 512
    with pytest.raises(ValueError, match="unknown grid keys"):
        grid_from_dict({"n_target": 1, "heads": 2})
    with pytest.raises(ValueError, match="missing"):
        grid_from_dict({"n_target": 1})


@pytest.mark.parametrize(
    "change, message",
    [
        ({"gqa_values": 4}, "gqa_values must be a list"),
        ({"r_values": ["wide"]}, "r_values must be a list"),
        ({"d_model_values": [True]}, "d_model_values must be a list"),
        ({"n_layers": "sixteen"}, "must be numbers"),
        ({"d_multiple": [512]}, "must be numbers"),
    ],
)
def test_grid_from_dict_rejects_malformed_values(change, message):
    data = {"n_target": 973078528, "n_layers": 16, "d_head": 64, "gqa_values": [4],
            "d_model_values": [2048], "r_values": [1.0]}
    with pytest.raises(ValueError, match=message):
        grid_from_dict({**data, **change})
    with pytest.raises(ValueError, match="JSON object"):
        grid_from_dict([data])


def test_main_rejects_malformed_json_inputs(tmp_path, capsys):
    config = write_json(tmp_path / "panda.json", reference_model("Panda-1B").to_config().to_dict())
    hardware = write_json(tmp_path / "hw.json", {"name": "x", "peak_flops": 1e15})
    assert main(["throughput", "--config", config, "--hardware", hardware]) == EXIT_INVALID
    assert "missing" in capsys.readouterr().err

    law = write_json(tmp_path / "law.json", [1, 2])
    assert main(["optimum", "--law", law, "--n-target", "975175680", "--layers", "16",
                 "--d-head", "64"]) == EXIT_INVALID
    assert "JSON object" in capsys.readouterr().err

    good_law = tmp_path / "good.json"
    save_law(LAW_FIT_80M_TO_297M, good_law)
    grid = write_json(tmp_path / "grid.json", {"n_target": 973078528, "n_layers": 16, "d_head": 64,
                                               "gqa_values": 4, "d_model_values": [2048], "r_values": [1.0]})
    assert main(["optimize", "--law", str(good_law), "--ref", "synthetic", "--n-target", "973078528",
                 "--d-tokens", "1e11", "--loss-budget", "3.0", "--grid", grid]) == EXIT_INVALID
    assert "gqa_values" in capsys.readouterr().err


def test_main_corpus(capsys):
    assert main(["--output", "json", "corpus", "--sizes", "1B"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 17
    assert rows[12]["variant"] == "v13"


def test_main_optimum_and_predict(tmp_path, capsys):
    law = tmp_path / "law.json"
    save_law(LAW_FIT_80M_TO_297M, law)
    assert main(["--output", "json", "optimum", "--law", str(law), "--n-target", "975175680",
                 "--layers", "16", "--d-head", "64", "--d-multiple", "512"]) == EXIT_OK
    row = json.loads(capsys.readouterr().out)
    assert (row["d_model"], row["n_head"], row["f_size"]) == (2560, 72, 4096)

    panda = reference_model("Panda-1B").to_config()
    config = write_json(tmp_path / "panda.json", panda.to_dict())
    assert main(["--output", "json", "predict", "--law", str(law), "--config", config,
                 "--ref", "synthetic", "--d-tokens", "1e11"]) == EXIT_OK
    row = json.loads(capsys.readouterr().out)
    metrics = derived_metrics(panda)
    l_opt = ref_loss(synthetic_reference(), 975_175_680, 1e11)
    assert row["predicted_loss"] == pytest.approx(conditional_loss(LAW_FIT_80M_TO_297M, metrics.x, metrics.r, l_opt))


def test_main_optimum_defaults_d_head_from_budget(tmp_path, capsys):
    small, large = tmp_path / "small.json", tmp_path / "large.json"
    save_law(LAW_FIT_80M_TO_297M, small)
    save_law(LAW_FIT_1B, large)
    assert main(["--output", "json", "optimum", "--law", str(small), "--n-target", "975175680",
                 "--layers", "16", "--d-multiple", "512"]) == EXIT_OK
    row = json.loads(capsys.readouterr().out)
    assert (row["d_head"], row["n_head"], row["f_size"]) == (64, 72, 4096)
    assert main(["--output", "json", "optimum", "--law", str(large), "--n-target", "2877292544",
                 "--layers", "28", "--gqa", "3", "--d-multiple", "512"]) == EXIT_OK
    row = json.loads(capsys.readouterr().out)
    assert (row["d_model"], row["d_head"], row["n_head"], row["f_size"]) == (4096, 128, 33, 4608)


def test_main_enumerate_defaults_d_head_from_budget(capsys):
    common = ["--output", "json", "arch", "enumerate", "--n-target", "973078528", "--layers", "16",
              "--d-values", "2048,2560", "--r-values", "1.0,3.6"]
    assert main(common + ["--d-head", "64"]) == EXIT_OK
    explicit = capsys.readouterr().out
    assert main(common) == EXIT_OK
    assert capsys.readouterr().out == explicit


def test_main_optimize_writes_report(tmp_path, capsys):
    law = tmp_path / "law.json"
    save_law(LAW_FIT_80M_TO_297M, law)
    grid = write_json(tmp_path / "grid.json", {"n_target": 973078528, "n_layers": 16, "d_head": 64,
                                               "gqa_values": [4], "d_model_values": [2048, 2560, 3072],
                                               "r_values": [1.0, 2.0, 3.6, 4.8]})
    llama = reference_model("LLaMA-3.2-1B").to_config()
    metrics = derived_metrics(llama)
    budget = conditional_loss(LAW_FIT_80M_TO_297M, metrics.x, metrics.r,
                              ref_loss(synthetic_reference(), 973_078_528, 1e11))
    report = tmp_path / "report.csv"
    code = main(["--output", "json", "optimize", "--law", str(law), "--ref", "synthetic",
                 "--n-target", "973078528", "--d-tokens", "1e11", "--loss-budget", repr(budget),
                 "--grid", grid, "--report", str(report)])
    assert code == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert [r["name"] for r in rows if r["best"]] == ["L16-d3072-h28-g4-f5120"]
    frame = pd.read_csv(report)
    assert len(frame) == 12
    assert int(frame["feasible"].sum()) == 10


def test_main_gqa_search(tmp_path, capsys):
    config = write_json(tmp_path / "base.json", {"name": "base", "n_layers": 16, "d_model": 2560, "n_head": 36,
                                                 "d_head": 64, "gqa": 4, "f_size": 5952})
    evals = write(tmp_path / "evals.csv", "gqa,loss\n4,2.5\n6,2.5\n9,2.5\n12,2.6\n")
    assert main(["--output", "json", "gqa-search", "--config", config, "--evals", evals]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert [r["gqa"] for r in rows] == [4, 6, 9, 12]
    assert [r["gqa"] for r in rows if r["chosen"]] == [9]

    short = write(tmp_path / "short.csv", "gqa,loss\n4,2.5\n")
    assert main(["gqa-search", "--config", config, "--evals", short]) == EXIT_INVALID
    assert "no measured loss for gqa=6" in capsys.readouterr().err


def test_main_throughput_sweep(tmp_path, capsys):
    config = write_json(tmp_path / "panda.json", reference_model("Panda-1B").to_config().to_dict())
    assert main(["--output", "json", "throughput", "--config", config, "--batch", "1,8,200",
                 "--input-tokens", "4096", "--output-tokens", "1024"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)
    assert [r["batch"] for r in rows] == [1, 8]


def test_main_synth_then_fit(tmp_path, capsys):
    runs = tmp_path / "runs.csv"
    assert main(["synth", "--out", str(runs), "--sizes", "80M", "--sigma", "0"]) == EXIT_OK
    capsys.readouterr()
    law = tmp_path / "fitted.json"
    assert main(["--output", "json", "fit", "--data", str(runs), "--form", "joint", "--ref", "synthetic",
                 "--out", str(law)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["form"] == "joint"
    assert report["n_used"] + report["n_filtered"] == 45
    assert load_law(law).form == "joint"


def test_main_fit_with_free_form_size_labels(tmp_path, capsys):
    runs = [dataclasses.replace(r, size_label="small", variant=None)
            for r in generate_runs(entries_by_size(["80M"]), LAW_FIT_80M_TO_297M)]
    data = tmp_path / "runs.csv"
    save_runs(runs, data)
    assert set(pd.read_csv(data)["size_label"]) == {"small"}
    assert main(["--output", "json", "fit", "--data", str(data), "--form", "joint"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["n_used"] + report["n_filtered"] == 45


def test_main_exit_codes(tmp_path, capsys):
    assert main(["predict", "--law", str(tmp_path / "missing.json"), "--config", "x.json",
                 "--ref", "synthetic", "--d-tokens", "1e11"]) == EXIT_INVALID
    bad_law = tmp_path / "bad.json"
    bad_law.write_text(json.dumps({**law_to_dict(LAW_FIT_80M_TO_297M), "a1": -0.1}))
    assert main(["optimum", "--law", str(bad_law), "--n-target", "975175680",
                 "--layers", "16", "--d-head", "64"]) == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_run_script():
    """
    Runs the command line as a script.
    """
    current_dir = os.path.dirname(__file__)
    script_path = os.path.join(current_dir, "..", "src", "iocli.py")
    completed = subprocess.run(
        [sys.executable, script_path, "--output", "csv", "corpus", "--reference"],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    assert completed.returncode == 0
    assert "Surefire-1B" in completed.stdout
