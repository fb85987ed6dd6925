"""Command line entry points: replay runs, campaign sampling, the labeling
service, evaluation and report rendering.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import json
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .dedup import DedupConfig, ReplayExtractor
from .evaluation import (
    build_binary_matrix,
    build_ternary_matrix,
    extract_error_cases,
    weighted_metrics,
)
from .fetch import replay_fetcher
from .fixtures import CorpusSpec, generate_corpus, write_deployment_judgments
from .hitl import (
    SamplerConfig,
    TaskStore,
    load_sampler_config,
    load_tasks,
    read_judgments,
    write_tasks,
)
from .inference import StubAdapter, StubPolicy
from .ingest import DEFAULT_KEYWORDS, KeywordFilter
from .pipeline import PipelineConfig, read_states, run
from .reporting import (
    read_accounting_json,
    read_timeseries_csv,
    render_confusion_figure,
    render_timeseries_figures,
    round_display,
    write_accounting_csv,
    write_accounting_json,
    write_evaluation_report,
    write_matrix_csv,
    write_run_outputs,
)
from .service import ServiceContext, load_sessions, serve as serve_app


def load_config(path: str | Path | None, **overrides) -> PipelineConfig:
    """Build a PipelineConfig from a TOML file plus CLI overrides."""
    raw: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    dedup_raw = raw.get("dedup", {})
    stub_raw = raw.get("stub", {})
    pipe_raw = raw.get("pipeline", {})
    keywords = raw.get("keywords", {}).get("terms")
    stub_kwargs = {}
    if "seed" in stub_raw:
        stub_kwargs["seed"] = int(stub_raw["seed"])
    if "relevance_flip_rate" in stub_raw:
        stub_kwargs["relevance_flip_rate"] = float(stub_raw["relevance_flip_rate"])
    if "damage_confusion" in stub_raw:
        stub_kwargs["damage_confusion"] = tuple(
            tuple(float(p) for p in row) for row in stub_raw["damage_confusion"]
        )
    cfg = dict(
        dedup=DedupConfig(
            distance_threshold=float(dedup_raw.get("distance_threshold", 20.0)),
            dimension=int(dedup_raw.get("dimension", 4096)),
            index_duplicates=bool(dedup_raw.get("index_duplicates", False)),
        ),
        stub=StubPolicy(**stub_kwargs),
        keywords=KeywordFilter(tuple(keywords) if keywords else DEFAULT_KEYWORDS),
        queue_capacity=int(pipe_raw.get("queue_capacity", 1024)),
        bucket_width=timedelta(hours=float(pipe_raw.get("bucket_hours", 24.0))),
        fetch_workers=int(pipe_raw.get("fetch_workers", 4)),
        classify_workers=int(pipe_raw.get("classify_workers", 4)),
    )
    cfg.update(overrides)
    return PipelineConfig(**cfg)


@click.group()
@click.version_option(__version__)
def main():
    """Streaming triage of disaster social-media imagery."""


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--manifest", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--fetch-workers", type=int, default=None)
@click.option("--classify-workers", type=int, default=None)
def replay(input_path, manifest, config_path, out, fetch_workers, classify_workers):
    """Run the full pipeline over a replay stream and write run reports."""
    overrides = {}
    if fetch_workers:
        overrides["fetch_workers"] = fetch_workers
    if classify_workers:
        overrides["classify_workers"] = classify_workers
    try:
        config = load_config(config_path, **overrides)
        fetcher = replay_fetcher(manifest)
        extractor = ReplayExtractor(
            {url: e.feature for url, e in fetcher.entries.items()},
            dimension=config.dedup.dimension,
        )
        adapter = StubAdapter(config.stub, fetcher.entries)
        with open(input_path, "r", encoding="utf-8") as source:
            result = run(config, source, fetcher, extractor, adapter)
        paths = write_run_outputs(result, out)
    except Exception as exc:
        raise click.ClickException(str(exc))
    acc = result.accounting
    click.echo(
        f"tweets={acc.total_tweets} unique_urls={acc.unique_urls} "
        f"downloaded={acc.downloaded} failed={acc.failed}"
    )
    click.echo(
        f"unique={acc.unique_images} duplicates={acc.duplicate_images} "
        f"relevant={acc.relevant} with_damage={acc.with_damage} "
        f"(severe={acc.severe} mild={acc.mild})"
    )
    click.echo(f"dead_letters={len(result.dead_letters)} skipped_lines={result.ingest_stats.skipped}")
    click.echo(f"wrote {paths['accounting_json']}")


@main.command()
@click.option("--states", "states_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--window-hours", type=float, default=None, help="Required unless --campaign-config sets it")
@click.option("--none-fraction", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--campaign-config", type=click.Path(exists=True, dir_okay=False),
              help="TOML file with window_hours, none_fraction, seed, lease_minutes")
@click.option("--window-end", default=None, help="ISO timestamp; defaults to just past the newest image")
@click.option("--tasks", "tasks_path", required=True, type=click.Path(dir_okay=False))
def sample(states_path, window_hours, none_fraction, seed, campaign_config, window_end, tasks_path):
    """Draw labeling tasks for a time window into a campaign tasks file."""
    try:
        if campaign_config:
            base = load_sampler_config(campaign_config)
            cfg = SamplerConfig(
                window_hours=window_hours if window_hours is not None else base.window_hours,
                none_fraction=none_fraction if none_fraction is not None else base.none_fraction,
                seed=seed if seed is not None else base.seed,
                lease_minutes=base.lease_minutes,
            )
        else:
            if window_hours is None:
                raise click.UsageError("--window-hours is required without --campaign-config")
            cfg = SamplerConfig(
                window_hours=window_hours,
                none_fraction=0.10 if none_fraction is None else none_fraction,
                seed=0 if seed is None else seed,
            )
        window_hours = cfg.window_hours
        states = read_states(states_path)
        store = TaskStore()
        if Path(tasks_path).exists():
            load_tasks(tasks_path, store)
        if window_end:
            end = datetime.fromisoformat(window_end)
            if end.tzinfo is None:
                end = end.replace(tzinfo=timezone.utc)
        else:
            newest = max((s.first_seen_at for s in states.values()), default=None)
            if newest is None:
                click.echo("no images in state store; nothing to sample")
                write_tasks(tasks_path, store.tasks())
                return
            end = newest + timedelta(seconds=1)
        start = end - timedelta(hours=window_hours)
        created = store.draw_sample(start, end, states.values(), cfg)
        write_tasks(tasks_path, store.tasks())
    except click.UsageError:
        raise
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"window [{start.isoformat()}, {end.isoformat()}): {len(created)} new tasks")
    click.echo(f"campaign now holds {len(store.tasks())} tasks in {tasks_path}")


@main.command()
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--states", "states_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--run-dir", type=click.Path(exists=True, file_okay=False),
              help="Replay output dir; loads accounting/timeseries (and states when --states is omitted)")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--tasks", "tasks_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--tokens", "tokens_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--judgments-out", type=click.Path(dir_okay=False))
@click.option("--lease-minutes", type=float, default=30.0, show_default=True)
def serve(port, host, states_path, run_dir, manifest, tasks_path, tokens_path, judgments_out, lease_minutes):
    """Serve the labeling API (and image bytes) for a campaign."""
    try:
        store = TaskStore()
        if tasks_path:
            load_tasks(tasks_path, store)
        accounting = None
        timeseries = None
        if run_dir:
            run_path = Path(run_dir)
            accounting = read_accounting_json(run_path / "accounting.json")
            timeseries = read_timeseries_csv(run_path / "timeseries.csv")
            if not states_path and (run_path / "states.jsonl").exists():
                states_path = run_path / "states.jsonl"
        states = read_states(states_path) if states_path else {}
        images: dict[str, bytes] = {}
        if manifest and states:
            fetcher = replay_fetcher(manifest)
            for state in states.values():
                try:
                    images[state.image_id] = fetcher.fetch_bytes(state.source_url)
                except Exception:
                    continue  # fetch-failed rows have no bytes to serve
        ctx = ServiceContext(
            store=store,
            sessions=load_sessions(tokens_path),
            states=states,
            images=images,
            accounting=accounting,
            timeseries=timeseries,
            lease_minutes=lease_minutes,
            judgments_log=Path(judgments_out) if judgments_out else None,
        )
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"serving on http://{host}:{port} with {len(store.tasks())} tasks")
    serve_app(ctx, host=host, port=port)


@main.command()
@click.option("--judgments", "judgments_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def evaluate(judgments_path, out):
    """Build confusion matrices, metrics and error slices from judgments."""
    try:
        judgments = list(read_judgments(judgments_path))
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        figures = out_dir / "figures"
        figures.mkdir(exist_ok=True)
        for task, builder in (("binary", build_binary_matrix), ("ternary", build_ternary_matrix)):
            cm = builder(judgments)
            report = weighted_metrics(cm)
            write_evaluation_report(task, cm, report, out_dir / f"report_{task}.json")
            write_matrix_csv(cm, out_dir / f"matrix_{task}.csv")
            render_confusion_figure(cm, figures / f"confusion_{task}.png")
            click.echo(
                f"{task}: n={cm.n} accuracy={round_display(report.accuracy)} "
                f"P={round_display(report.weighted_precision)} "
                f"R={round_display(report.weighted_recall)} "
                f"F1={round_display(report.weighted_f1)}"
            )
        cases = extract_error_cases(judgments)
        with open(out_dir / "error_cases.jsonl", "w", encoding="utf-8") as fh:
            for case in cases:
                fh.write(
                    json.dumps(
                        {
                            "case_id": case.case_id,
                            "image_id": case.image_id,
                            "machine_damage": case.machine_damage.value,
                            "human_verdict": case.human_verdict.value,
                            "human_severity": (
                                case.human_severity.value if case.human_severity else None
                            ),
                            "slice": case.slice.value,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        by_slice: dict[str, int] = {}
        for case in cases:
            by_slice[case.slice.value] = by_slice.get(case.slice.value, 0) + 1
        click.echo("error slices: " + json.dumps(by_slice, sort_keys=True))
    except Exception as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="csv", show_default=True)
def report(run_dir, out, fmt):
    """Re-emit run reports in the chosen format and render figures."""
    try:
        run_path = Path(run_dir)
        acc = read_accounting_json(run_path / "accounting.json")
        rows = read_timeseries_csv(run_path / "timeseries.csv")
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            write_accounting_json(acc, out_dir / "accounting.json")
            (out_dir / "timeseries.json").write_text(
                json.dumps(rows, sort_keys=True, indent=2) + "\n", encoding="utf-8"
            )
        else:
            write_accounting_csv(acc, out_dir / "accounting.csv")
            import shutil

            shutil.copyfile(run_path / "timeseries.csv", out_dir / "timeseries.csv")
        figure_paths = render_timeseries_figures(rows, out_dir / "figures")
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"accounting: downloaded={acc.downloaded} unique={acc.unique_images}")
    for path in figure_paths:
        click.echo(f"figure: {path}")


@main.group()
def synth():
    """Generate bundled fixture data (synthetic corpus, campaign export)."""


@synth.command("corpus")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--tweets", type=int, default=2000, show_default=True)
@click.option("--unique-images", type=int, default=700, show_default=True)
@click.option("--duplicate-images", type=int, default=460, show_default=True)
@click.option("--failures", type=int, default=40, show_default=True)
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
def synth_corpus(out, tweets, unique_images, duplicate_images, failures, dim, seed):
    """Write a deterministic synthetic tweet stream + fetch manifest."""
    spec = CorpusSpec(
        seed=seed,
        n_tweets=tweets,
        n_unique_images=unique_images,
        n_duplicate_images=duplicate_images,
        n_failures=failures,
        dimension=dim,
    )
    paths = generate_corpus(out, spec)
    click.echo(f"tweets:   {paths.tweets}")
    click.echo(f"manifest: {paths.manifest}")
    click.echo(f"config:   {paths.config}")


@synth.command("judgments")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def synth_judgments(out):
    """Write the recorded 29,136-task verification campaign as an export."""
    n = write_deployment_judgments(out)
    click.echo(f"wrote {n} judgments to {out}")


if __name__ == "__main__":
    sys.exit(main())
