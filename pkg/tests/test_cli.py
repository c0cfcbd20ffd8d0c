import json

from incifind.cli import main
from incifind.corpus import load_corpus
from incifind.ensemble import load_predictions


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_unknown_subcommand_exits_1(capsys):
    code, _, _ = run(capsys, "nosuch")
    assert code == 1


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    for sub in ("generate", "sample", "tag", "prompt", "infer", "parse", "aggregate",
                "train", "predict", "ensemble", "evaluate", "bootstrap", "run-e2e"):
        assert main([sub, "--help"]) == 0


def test_generate_sample_tag_prompt(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    code, _, _ = run(capsys, "generate", "--seed", "3", "--n", "40", "--out", str(corpus))
    assert code == 0
    assert len(load_corpus(corpus)) == 40

    sampled = tmp_path / "sampled.jsonl"
    trace = tmp_path / "trace.json"
    code, _, _ = run(capsys, "sample", "--in", str(corpus), "--out", str(sampled),
                     "--trace", str(trace))
    assert code == 0
    stages = json.loads(trace.read_text())["stages"]
    assert [s["name"] for s in stages] == [
        "target_anatomies", "exclude_prior", "surveillance", "recommendation"]
    assert stages[0]["in"] == 40

    tagged = tmp_path / "tagged.jsonl"
    assert run(capsys, "tag", "--in", str(sampled), "--out", str(tagged))[0] == 0
    rows = read_jsonl(tagged)
    assert all({"report_id", "tagged_text", "tag_map", "anatomy_line"} <= set(r) for r in rows)

    prompts = tmp_path / "prompts.jsonl"
    code, _, _ = run(capsys, "prompt", "--in", str(sampled), "--setting", "with-anatomy",
                     "--out", str(prompts))
    assert code == 0
    prows = read_jsonl(prompts)
    assert all(r["params"] == {"temperature": 0.0, "top_p": 1.0, "max_tokens": 1024}
               for r in prows)
    assert all(r["user"].startswith("LESION1=") for r in prows if r["user"].startswith("LESION"))


def test_full_oracle_pipeline_files(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    sampled = tmp_path / "sampled.jsonl"
    prompts = tmp_path / "prompts.jsonl"
    completions = tmp_path / "completions.jsonl"
    preds = tmp_path / "preds.jsonl"
    agg = tmp_path / "agg.jsonl"

    assert run(capsys, "generate", "--seed", "13", "--n", "60", "--out", str(corpus))[0] == 0
    assert run(capsys, "sample", "--in", str(corpus), "--out", str(sampled),
               "--trace", str(tmp_path / "t.json"))[0] == 0
    assert run(capsys, "prompt", "--in", str(sampled), "--out", str(prompts))[0] == 0
    assert run(capsys, "infer", "--prompts", str(prompts), "--transport", "oracle",
               "--corpus", str(sampled), "--noise", "0", "--seed", "1",
               "--out", str(completions))[0] == 0
    assert run(capsys, "parse", "--completions", str(completions), "--corpus", str(sampled),
               "--model-id", "oracle0", "--out", str(preds))[0] == 0
    assert run(capsys, "aggregate", "--preds", str(preds), "--corpus", str(sampled),
               "--out", str(agg))[0] == 0

    rows = read_jsonl(agg)
    assert all("anatomy_vector" in r for r in rows)
    assert all(set(r["anatomy_vector"]) == {
        "lung", "liver", "kidney", "adrenal", "pancreas", "thyroid", "other"} for r in rows)

    code, out, _ = run(capsys, "evaluate", "--corpus", str(sampled), "--preds", str(preds))
    assert code == 0
    payload = json.loads(out)
    assert payload["accuracy"] == 1.0
    assert all(payload["per_class"][c]["f1"] == 1.0 for c in ("0", "1", "2"))

    code, out, _ = run(capsys, "evaluate", "--corpus", str(sampled), "--preds", str(preds),
                       "--level", "anatomy")
    assert code == 0
    assert json.loads(out)["accuracy"] == 1.0
    assert json.loads(out)["unit"] == "anatomy"


def test_train_predict_evaluate(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    model = tmp_path / "model.json"
    preds = tmp_path / "preds.jsonl"
    assert run(capsys, "generate", "--seed", "19", "--n", "60", "--out", str(corpus))[0] == 0
    assert run(capsys, "train", "--corpus", str(corpus), "--objective", "focal",
               "--epochs", "4", "--seed", "2", "--out", str(model))[0] == 0
    assert model.exists()
    assert run(capsys, "predict", "--model", str(model), "--corpus", str(corpus),
               "--model-id", "focal-clf", "--out", str(preds))[0] == 0
    ps = load_predictions(preds)
    assert ps.model_id == "focal-clf"
    code, out, _ = run(capsys, "evaluate", "--corpus", str(corpus), "--preds", str(preds))
    assert code == 0
    assert 0.0 <= json.loads(out)["accuracy"] <= 1.0


def test_predict_cost_aware_mode(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    model = tmp_path / "model.json"
    preds = tmp_path / "preds.jsonl"
    cm_path = tmp_path / "cost.json"
    cm_path.write_text(json.dumps([[0, 1, 4], [1, 0, 4], [8, 6, 0]]))
    run(capsys, "generate", "--seed", "23", "--n", "40", "--out", str(corpus))
    run(capsys, "train", "--corpus", str(corpus), "--objective", "expected-cost",
        "--cost-matrix", str(cm_path), "--epochs", "3", "--out", str(model))
    code, _, _ = run(capsys, "predict", "--model", str(model), "--corpus", str(corpus),
                     "--decode", "cost-aware", "--cost-matrix", str(cm_path),
                     "--out", str(preds))
    assert code == 0
    assert load_predictions(preds).labels


def test_ensemble_subcommand(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    sampled = tmp_path / "sampled.jsonl"
    prompts = tmp_path / "prompts.jsonl"
    run(capsys, "generate", "--seed", "29", "--n", "40", "--out", str(corpus))
    run(capsys, "sample", "--in", str(corpus), "--out", str(sampled),
        "--trace", str(tmp_path / "t.json"))
    run(capsys, "prompt", "--in", str(sampled), "--out", str(prompts))
    pred_paths = []
    for i, noise in enumerate(("0", "0.2", "0.2")):
        completions = tmp_path / f"c{i}.jsonl"
        preds = tmp_path / f"p{i}.jsonl"
        run(capsys, "infer", "--prompts", str(prompts), "--transport", "oracle",
            "--corpus", str(sampled), "--noise", noise, "--seed", str(i),
            "--out", str(completions))
        run(capsys, "parse", "--completions", str(completions), "--corpus", str(sampled),
            "--model-id", f"m{i}", "--out", str(preds))
        pred_paths.append(str(preds))
    out_path = tmp_path / "ens.jsonl"
    code, _, _ = run(capsys, "ensemble", *pred_paths, "--out", str(out_path))
    assert code == 0
    combined = load_predictions(out_path)
    assert combined.model_id == "ensemble(m0,m1,m2)"
    assert len(combined.labels) == len(load_predictions(pred_paths[0]).labels)


def test_bootstrap_subcommand(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    prompts = tmp_path / "prompts.jsonl"
    run(capsys, "generate", "--seed", "31", "--n", "50", "--out", str(corpus))
    run(capsys, "prompt", "--in", str(corpus), "--out", str(prompts))
    paths = []
    for i, noise in enumerate(("0", "0.4")):
        completions = tmp_path / f"c{i}.jsonl"
        preds = tmp_path / f"p{i}.jsonl"
        run(capsys, "infer", "--prompts", str(prompts), "--transport", "oracle",
            "--corpus", str(corpus), "--noise", noise, "--seed", str(i),
            "--out", str(completions))
        run(capsys, "parse", "--completions", str(completions), "--corpus", str(corpus),
            "--model-id", f"m{i}", "--out", str(preds))
        paths.append(str(preds))
    forest = tmp_path / "forest.jsonl"
    code, out, _ = run(capsys, "bootstrap", "--corpus", str(corpus),
                       "--a", paths[0], "--b", paths[1], "--n", "200", "--seed", "5",
                       "--forest", str(forest))
    assert code == 0
    payload = json.loads(out)
    assert {"model_a", "model_b", "mean_delta", "ci_low", "ci_high",
            "p_value", "n_resamples", "seed", "restricted_to_incidentalomas"} <= set(payload)
    assert payload["n_resamples"] == 200
    row = json.loads(forest.read_text().splitlines()[0])
    assert row["pair"] == "m0 vs m1"


def test_run_e2e_writes_artifacts(tmp_path, capsys):
    out_dir = tmp_path / "artifacts"
    code, out, _ = run(capsys, "run-e2e", "--seed", "7", "--n", "60", "--noise", "0",
                       "--out-dir", str(out_dir))
    assert code == 0
    payload = json.loads(out)
    assert payload["accuracy"] == 1.0
    for name in ("corpus.jsonl", "sampled.jsonl", "trace.json", "prompts.jsonl",
                 "completions.jsonl", "predictions.jsonl", "metrics.json"):
        assert (out_dir / name).exists()


def test_config_file_provides_defaults(tmp_path, capsys):
    config = tmp_path / "config.json"
    out = tmp_path / "corpus.jsonl"
    config.write_text(json.dumps({"generate": {"n": 5, "seed": 99}}))
    code, _, _ = run(capsys, "--config", str(config), "generate", "--out", str(out))
    assert code == 0
    assert len(load_corpus(out)) == 5


def test_flags_override_config(tmp_path, capsys):
    config = tmp_path / "config.json"
    out = tmp_path / "corpus.jsonl"
    config.write_text(json.dumps({"generate": {"n": 5}}))
    code, _, _ = run(capsys, "--config", str(config), "generate", "--n", "8",
                     "--out", str(out))
    assert code == 0
    assert len(load_corpus(out)) == 8


def test_infer_replay_miss_exits_2(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    prompts = tmp_path / "prompts.jsonl"
    cassette = tmp_path / "cassette.jsonl"
    completions = tmp_path / "completions.jsonl"
    cassette.write_text("")
    run(capsys, "generate", "--seed", "37", "--n", "3", "--out", str(corpus))
    run(capsys, "prompt", "--in", str(corpus), "--out", str(prompts))
    code, _, err = run(capsys, "infer", "--prompts", str(prompts), "--transport", "replay",
                       "--cassette", str(cassette), "--out", str(completions))
    assert code == 2
    assert "transport error" in err
    # the failure entries are still written for inspection
    assert len(read_jsonl(completions)) == 3


def test_parse_degrades_unparseable_completion(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    prompts = tmp_path / "prompts.jsonl"
    completions = tmp_path / "completions.jsonl"
    preds = tmp_path / "preds.jsonl"
    run(capsys, "generate", "--seed", "41", "--n", "2", "--out", str(corpus))
    run(capsys, "prompt", "--in", str(corpus), "--out", str(prompts))
    run(capsys, "infer", "--prompts", str(prompts), "--transport", "oracle",
        "--corpus", str(corpus), "--out", str(completions))
    rows = read_jsonl(completions)
    rows[0]["text"] = "no structured output at all"
    completions.write_text("".join(json.dumps(r) + "\n" for r in rows))
    code, _, _ = run(capsys, "parse", "--completions", str(completions),
                     "--corpus", str(corpus), "--model-id", "m", "--out", str(preds))
    assert code == 0
    out_rows = read_jsonl(preds)
    damaged = [r for r in out_rows if r["report_id"] == rows[0]["report_id"]][0]
    assert all(v == 0 for v in damaged["lesion_labels"].values())
    assert damaged["warnings"][0]["code"] == "parse_failure"


def test_negative_seed_reports_clean_error(tmp_path, capsys):
    corpus = tmp_path / "corpus.jsonl"
    preds = tmp_path / "preds.jsonl"
    run(capsys, "generate", "--seed", "43", "--n", "10", "--out", str(corpus))
    run(capsys, "prompt", "--in", str(corpus), "--out", str(tmp_path / "pr.jsonl"))
    run(capsys, "infer", "--prompts", str(tmp_path / "pr.jsonl"), "--transport", "oracle",
        "--corpus", str(corpus), "--out", str(tmp_path / "c.jsonl"))
    run(capsys, "parse", "--completions", str(tmp_path / "c.jsonl"),
        "--corpus", str(corpus), "--model-id", "m", "--out", str(preds))
    code, _, err = run(capsys, "bootstrap", "--corpus", str(corpus), "--a", str(preds),
                       "--b", str(preds), "--n", "10", "--seed", "-3")
    assert code == 1
    assert "error" in err


def test_validation_error_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"report_id": "R1"}\n')
    code, _, err = run(capsys, "sample", "--in", str(bad), "--out", str(tmp_path / "o.jsonl"))
    assert code == 1
    assert "error" in err


def test_missing_required_flag_exits_1(capsys):
    code, _, _ = run(capsys, "generate")
    assert code == 1
