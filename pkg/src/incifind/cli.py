"""Command-line interface: each pipeline stage is a subcommand.

Every stage reads and writes the JSONL formats of its upstream modules, so
the pipeline is re-entrant at any point.  Exit codes: 0 success, 1
validation/usage error, 2 transport failure.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__
from .aggregation import LesionPrediction, build_report_vector
from .corpus import RadiologyReport, load_corpus, save_corpus
from .ensemble import PredictionSet, ensemble as vote_ensemble, load_predictions, save_predictions
from .errors import (
    AuthError,
    CassetteMiss,
    IncifindError,
    KeyMismatch,
    ParseFailure,
    TransportError,
)
from .evaluation import (
    bootstrap_pairwise,
    confusion,
    gold_anatomy_labels,
    gold_lesion_labels,
    metrics,
    predicted_anatomy_labels,
)
from .llm_client import (
    LiveTransport,
    OracleTransport,
    RawCompletion,
    ReplayTransport,
    RetryPolicy,
    infer,
    record_cassette,
)
from .parsing import (
    W_PARSE_FAILURE,
    W_TRANSPORT_ERROR,
    anatomy_mismatch_warnings,
    parse_output,
    to_lesion_labels,
)
from .prompting import GenerationParams, PromptBundle, PromptSetting, build_prompt
from .sampling import run_pipeline
from .supervised import (
    CostMatrix,
    CostSensitiveSoftmax,
    load_model,
    predict_corpus,
    save_model,
    train as train_classifier,
)
from .synthgen import GenConfig, generate as generate_corpus
from .tagging import anatomy_map_line, tag_lesions


def _write_jsonl(path, rows) -> None:
    Path(path).write_text(
        "".join(json.dumps(row, ensure_ascii=False) + "\n" for row in rows),
        encoding="utf-8",
    )


def _read_jsonl(path) -> list[dict]:
    return [
        json.loads(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


def _load_cost_matrix(path: str | None) -> CostMatrix | None:
    if not path:
        return None
    rows = json.loads(Path(path).read_text(encoding="utf-8"))
    return CostMatrix(tuple(tuple(row) for row in rows))


def _translate_config(group, raw: dict) -> dict:
    """Map flag-style config keys ("n", "label-prior") to click parameter names."""
    translated = {}
    for cmd_name, section in raw.items():
        command = group.commands.get(cmd_name)
        if command is None or not isinstance(section, dict):
            translated[cmd_name] = section
            continue
        by_flag = {}
        for param in command.params:
            by_flag[param.name] = param.name
            for opt in param.opts:
                by_flag[opt.lstrip("-").replace("-", "_")] = param.name
        translated[cmd_name] = {
            by_flag.get(key.replace("-", "_"), key): value for key, value in section.items()
        }
    return translated


@click.group()
@click.version_option(__version__)
@click.option("--config", type=click.Path(exists=True), default=None,
              help="JSON file with per-subcommand flag defaults (flags override).")
@click.pass_context
def cli(ctx, config):
    """Lesion-level incidental-finding classification pipeline."""
    if config:
        raw = json.loads(Path(config).read_text(encoding="utf-8"))
        ctx.default_map = _translate_config(ctx.command, raw)


@cli.command()
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--n", "n_reports", type=int, default=100, show_default=True)
@click.option("--label-prior", default="0.8,0.12,0.08", show_default=True,
              help="Comma-separated probabilities for labels 0,1,2.")
@click.option("--lesions-min", type=int, default=1, show_default=True)
@click.option("--lesions-max", type=int, default=4, show_default=True)
@click.option("--trend-rate", type=float, default=0.25, show_default=True)
@click.option("--neoplastic-rate", type=float, default=0.15, show_default=True)
@click.option("--recommendation-rate", type=float, default=0.9, show_default=True)
@click.option("--out", required=True, type=click.Path())
def generate(seed, n_reports, label_prior, lesions_min, lesions_max,
             trend_rate, neoplastic_rate, recommendation_rate, out):
    """Generate a seeded synthetic corpus with gold labels."""
    prior = tuple(float(p) for p in label_prior.split(","))
    if len(prior) != 3:
        raise click.UsageError("--label-prior needs exactly three probabilities")
    cfg = GenConfig(
        seed=seed,
        n_reports=n_reports,
        label_prior=prior,  # type: ignore[arg-type]
        lesions_per_report=(lesions_min, lesions_max),
        trend_rate=trend_rate,
        neoplastic_rate=neoplastic_rate,
        recommendation_rate=recommendation_rate,
    )
    save_corpus(generate_corpus(cfg), out)
    click.echo(f"wrote {n_reports} reports to {out}", err=True)


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--trace", "trace_path", type=click.Path(), default=None,
              help="Write the stage-count trace here instead of stdout.")
def sample(in_path, out, trace_path):
    """Apply the four enrichment filters to a corpus."""
    reports = load_corpus(in_path)
    filtered, trace = run_pipeline(reports)
    save_corpus(filtered, out)
    payload = trace.to_dict()
    if trace_path:
        Path(trace_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    else:
        click.echo(json.dumps(payload, indent=2))


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def tag(in_path, out):
    """Wrap lesion spans in numbered tags."""
    rows = []
    for report in load_corpus(in_path):
        tagged = tag_lesions(report)
        rows.append({
            "report_id": tagged.report_id,
            "tagged_text": tagged.tagged_text,
            "tag_map": tagged.tag_map,
            "anatomy_line": anatomy_map_line(tagged, report),
        })
    _write_jsonl(out, rows)


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--setting", type=click.Choice(["base", "with-anatomy"]), default="base",
              show_default=True)
@click.option("--max-tokens", type=int, default=1024, show_default=True)
@click.option("--out", required=True, type=click.Path())
def prompt(in_path, setting, max_tokens, out):
    """Build prompt bundles for a corpus."""
    prompt_setting = (
        PromptSetting.WITH_ANATOMY if setting == "with-anatomy" else PromptSetting.BASE
    )
    params = GenerationParams(max_tokens=max_tokens)
    rows = []
    for report in load_corpus(in_path):
        tagged = tag_lesions(report)
        line = anatomy_map_line(tagged, report)
        bundle = build_prompt(tagged, line, prompt_setting, params)
        rows.append(bundle.to_dict())
    _write_jsonl(out, rows)


def _bundles_from_rows(rows) -> list[PromptBundle]:
    bundles = []
    for row in rows:
        bundles.append(PromptBundle(
            system_instruction=row["system"],
            user_content=row["user"],
            params=GenerationParams(**row["params"]),
            report_id=row["report_id"],
            setting=PromptSetting(row.get("setting", "base")),
        ))
    return bundles


@cli.command(name="infer")
@click.option("--prompts", required=True, type=click.Path(exists=True))
@click.option("--transport", "transport_name", type=click.Choice(["live", "replay", "oracle"]),
              required=True)
@click.option("--model", default="gpt-4o", show_default=True, help="Model name (live transport).")
@click.option("--endpoint", default=None, help="Chat-completion URL (live; or set LLM_ENDPOINT).")
@click.option("--max-in-flight", type=int, default=4, show_default=True)
@click.option("--retries", type=int, default=3, show_default=True,
              help="Maximum attempts per request.")
@click.option("--cassette", type=click.Path(), default=None,
              help="Cassette to replay from, or to record when --transport live.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), default=None,
              help="Gold corpus backing the oracle transport.")
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def infer_cmd(prompts, transport_name, model, endpoint, max_in_flight, retries,
              cassette, corpus_path, noise, seed, out):
    """Send prompt bundles through a transport."""
    bundles = _bundles_from_rows(_read_jsonl(prompts))
    retry = RetryPolicy(max_attempts=retries)
    if transport_name == "oracle":
        if not corpus_path:
            raise click.UsageError("--transport oracle requires --corpus")
        transport = OracleTransport(load_corpus(corpus_path), noise=noise, seed=seed)
    elif transport_name == "replay":
        if not cassette:
            raise click.UsageError("--transport replay requires --cassette")
        transport = ReplayTransport(cassette)
    else:
        transport = LiveTransport(endpoint=endpoint, model=model)
    if transport_name == "live" and cassette:
        completions = record_cassette(bundles, transport, cassette,
                                      max_in_flight=max_in_flight, retry=retry)
    else:
        completions = infer(bundles, transport, max_in_flight=max_in_flight, retry=retry)
    _write_jsonl(out, [c.to_dict() for c in completions])
    failed = [c for c in completions if not c.ok]
    if failed:
        raise TransportError(failed[0].report_id,
                             f"{len(failed)} of {len(completions)} requests failed",
                             attempts=failed[0].attempts)


@cli.command(name="parse")
@click.option("--completions", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--model-id", default=None, help="Defaults to the transport's model name.")
@click.option("--out", required=True, type=click.Path())
def parse_cmd(completions, corpus_path, model_id, out):
    """Extract lesion labels from completions."""
    by_id = {r.report_id: r for r in load_corpus(corpus_path)}
    ps = PredictionSet(model_id=model_id or "model")
    warnings_by_report: dict[str, list] = {}
    for row in _read_jsonl(completions):
        raw = RawCompletion(
            report_id=row["report_id"],
            text=row.get("text", ""),
            transport_meta=row.get("transport_meta", {}),
            attempts=row.get("attempts", 1),
            error=row.get("error"),
        )
        if model_id is None and raw.transport_meta.get("model"):
            ps.model_id = raw.transport_meta["model"]
        report = by_id.get(raw.report_id)
        if report is None:
            raise KeyMismatch(f"completion for unknown report {raw.report_id!r}")
        tagged = tag_lesions(report)
        if not raw.ok:
            # failed request: every lesion defaults to 0, flagged for review
            labels = {lesion.lesion_id: 0 for lesion in report.lesions}
            warnings_by_report[raw.report_id] = [
                {"code": W_TRANSPORT_ERROR, "detail": raw.error}
            ]
        else:
            try:
                output = parse_output(raw, tagged)
            except ParseFailure as exc:
                labels = {lesion.lesion_id: 0 for lesion in report.lesions}
                warnings_by_report[raw.report_id] = [
                    {"code": W_PARSE_FAILURE, "detail": exc.reason}
                ]
            else:
                labels = to_lesion_labels(output, tagged)
                diagnostics = output.diagnostics + anatomy_mismatch_warnings(
                    output, tagged, report)
                warnings_by_report[raw.report_id] = [
                    {"code": w.code, "detail": w.detail} for w in diagnostics
                ]
        for lesion_id, label in labels.items():
            ps.labels[(raw.report_id, lesion_id)] = label
    save_predictions(ps, out, warnings_by_report=warnings_by_report)


@cli.command()
@click.option("--preds", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def aggregate(preds, corpus_path, out):
    """Add severity-precedence anatomy vectors to a predictions file."""
    ps = load_predictions(preds)
    reports = {r.report_id: r for r in load_corpus(corpus_path)}
    vectors: dict[str, dict] = {}
    report_ids = sorted({rid for rid, _ in ps.labels})
    for rid in report_ids:
        report = reports.get(rid)
        if report is None:
            raise KeyMismatch(f"predictions reference unknown report {rid!r}")
        vectors[rid] = predicted_vector_dict(ps, report)
    save_predictions(ps, out, anatomy_vectors=vectors)


def predicted_vector_dict(ps: PredictionSet, report: RadiologyReport) -> dict:
    preds = []
    for lesion in report.lesions:
        key = (report.report_id, lesion.lesion_id)
        if key not in ps.labels:
            raise KeyMismatch(f"no prediction for lesion {key}")
        preds.append(LesionPrediction(
            report_id=report.report_id,
            lesion_id=lesion.lesion_id,
            anatomy=lesion.anatomy,
            label=ps.labels[key],
            model_id=ps.model_id,
        ))
    return build_report_vector(preds).to_dict()


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--val-fraction", type=float, default=0.2, show_default=True,
              help="Report-level fraction held out for early stopping.")
@click.option("--objective", type=click.Choice(["weighted-ce", "focal", "expected-cost"]),
              default="weighted-ce", show_default=True)
@click.option("--gamma", type=float, default=2.0, show_default=True)
@click.option("--cost-matrix", "cost_matrix_path", type=click.Path(exists=True), default=None,
              help="JSON 3x3 cost matrix (expected-cost objective and cost-aware decoding).")
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--weight-decay", type=float, default=0.01, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def train(corpus_path, val_fraction, objective, gamma, cost_matrix_path, lr,
          weight_decay, epochs, batch_size, seed, out):
    """Train the hashed-feature softmax baseline on gold lesion labels."""
    reports = load_corpus(corpus_path)
    order = np.random.default_rng(seed).permutation(len(reports))
    n_val = int(len(reports) * val_fraction)
    val_reports = [reports[i] for i in order[:n_val]]
    train_reports = [reports[i] for i in order[n_val:]]
    clf = CostSensitiveSoftmax(
        objective=objective.replace("-", "_"),
        gamma=gamma,
        learning_rate=lr,
        weight_decay=weight_decay,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        cost_matrix=_load_cost_matrix(cost_matrix_path),
    )
    clf = train_classifier(train_reports, val_reports, clf)
    save_model(clf, out)
    click.echo(f"validation scores per epoch: {[round(s, 3) for s in clf.validation_scores_]}",
               err=True)


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--decode", "decode_mode", type=click.Choice(["argmax", "cost-aware"]),
              default="argmax", show_default=True)
@click.option("--cost-matrix", "cost_matrix_path", type=click.Path(exists=True), default=None)
@click.option("--model-id", default="supervised", show_default=True)
@click.option("--out", required=True, type=click.Path())
def predict(model_path, corpus_path, decode_mode, cost_matrix_path, model_id, out):
    """Predict lesion labels with a trained model."""
    clf = load_model(model_path)
    clf.decode_mode = decode_mode.replace("-", "_")
    override = _load_cost_matrix(cost_matrix_path)
    if override is not None:
        clf.cost_matrix = override
    ps = predict_corpus(clf, load_corpus(corpus_path), model_id)
    save_predictions(ps, out)


@cli.command(name="ensemble")
@click.argument("preds", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def ensemble_cmd(preds, out):
    """Majority-vote >=2 prediction files into one."""
    sets = [load_predictions(p) for p in preds]
    save_predictions(vote_ensemble(sets), out)


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True),
              help="Corpus providing gold labels.")
@click.option("--preds", required=True, type=click.Path(exists=True))
@click.option("--level", type=click.Choice(["lesion", "anatomy"]), default="lesion",
              show_default=True)
@click.option("--out", type=click.Path(), default=None)
def evaluate(corpus_path, preds, level, out):
    """Score predictions against gold labels."""
    reports = load_corpus(corpus_path)
    ps = load_predictions(preds)
    if level == "lesion":
        gold = gold_lesion_labels(reports)
        pred = {k: ps.labels[k] for k in gold if k in ps.labels}
        if set(pred) != set(gold):
            raise KeyMismatch("predictions do not cover all gold-labeled lesions")
    else:
        gold = gold_anatomy_labels(reports)
        pred = predicted_anatomy_labels(ps, [r for r in reports
                                             if (r.report_id, "lung") in gold])
    report = metrics(confusion(gold, pred, unit=level))
    click.echo(report.format_table(), err=True)
    _emit(report.to_dict(), out)


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--a", "preds_a", required=True, type=click.Path(exists=True))
@click.option("--b", "preds_b", required=True, type=click.Path(exists=True))
@click.option("--n", "n_resamples", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--restrict/--no-restrict", default=True, show_default=True,
              help="Resample only lesions with gold label 1 or 2.")
@click.option("--all-classes", is_flag=True, default=False,
              help="Average macro-F1 over all three classes even when absent.")
@click.option("--forest", "forest_path", type=click.Path(), default=None,
              help="Append a forest-plot row {pair, mean_delta, ci_low, ci_high}.")
@click.option("--out", type=click.Path(), default=None)
def bootstrap(corpus_path, preds_a, preds_b, n_resamples, seed, restrict,
              all_classes, forest_path, out):
    """Paired lesion-level bootstrap of the macro-F1 difference."""
    gold = gold_lesion_labels(load_corpus(corpus_path))
    ps_a = load_predictions(preds_a)
    ps_b = load_predictions(preds_b)
    result = bootstrap_pairwise(gold, ps_a, ps_b, n=n_resamples, seed=seed,
                                restrict=restrict, all_classes=all_classes)
    if forest_path:
        row = {
            "pair": f"{result.model_a} vs {result.model_b}",
            "mean_delta": result.mean_delta,
            "ci_low": result.ci_low,
            "ci_high": result.ci_high,
        }
        with open(forest_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row) + "\n")
    _emit(result.to_dict(), out)


@cli.command(name="run-e2e")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--n", "n_reports", type=int, default=200, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--setting", type=click.Choice(["base", "with-anatomy"]),
              default="with-anatomy", show_default=True)
@click.option("--out-dir", type=click.Path(), default=None,
              help="Also write every intermediate artifact here.")
def run_e2e(seed, n_reports, noise, setting, out_dir):
    """Generate -> sample -> tag -> prompt -> infer(oracle) -> parse -> aggregate -> evaluate."""
    started = time.perf_counter()
    cfg = GenConfig(seed=seed, n_reports=n_reports)
    corpus = generate_corpus(cfg)
    sampled, trace = run_pipeline(corpus)
    prompt_setting = (
        PromptSetting.WITH_ANATOMY if setting == "with-anatomy" else PromptSetting.BASE
    )
    bundles = []
    tagged_by_id = {}
    for report in sampled:
        tagged = tag_lesions(report)
        tagged_by_id[report.report_id] = tagged
        bundles.append(build_prompt(tagged, anatomy_map_line(tagged, report), prompt_setting))
    transport = OracleTransport(sampled, noise=noise, seed=seed)
    completions = infer(bundles, transport, max_in_flight=4)
    ps = PredictionSet(model_id=f"oracle(noise={noise})")
    vectors = {}
    for report, completion in zip(sampled, completions):
        tagged = tagged_by_id[report.report_id]
        output = parse_output(completion, tagged)
        for lesion_id, label in to_lesion_labels(output, tagged).items():
            ps.labels[(report.report_id, lesion_id)] = label
        vectors[report.report_id] = predicted_vector_dict(ps, report)
    gold = gold_lesion_labels(sampled)
    report = metrics(confusion(gold, {k: ps.labels[k] for k in gold}, unit="lesion"))
    elapsed = time.perf_counter() - started
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_corpus(corpus, out / "corpus.jsonl")
        save_corpus(sampled, out / "sampled.jsonl")
        Path(out / "trace.json").write_text(json.dumps(trace.to_dict(), indent=2) + "\n")
        _write_jsonl(out / "prompts.jsonl", [b.to_dict() for b in bundles])
        _write_jsonl(out / "completions.jsonl", [c.to_dict() for c in completions])
        save_predictions(ps, out / "predictions.jsonl", anatomy_vectors=vectors)
        Path(out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    click.echo(report.format_table(), err=True)
    payload = report.to_dict()
    payload["trace"] = trace.to_dict()
    payload["elapsed_s"] = round(elapsed, 3)
    click.echo(json.dumps(payload, indent=2))


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        rv = cli.main(args=argv, prog_name="incifind", standalone_mode=False)
        return int(rv) if isinstance(rv, int) else 0
    except (TransportError, AuthError, CassetteMiss) as exc:
        click.echo(f"transport error: {exc}", err=True)
        return 2
    except IncifindError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
