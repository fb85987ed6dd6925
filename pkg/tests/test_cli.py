import json

import pytest
from click.testing import CliRunner

from stormsift.cli import main
from stormsift.fixtures import CorpusSpec, generate_corpus, write_deployment_judgments


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-corpus")
    paths = generate_corpus(
        root,
        CorpusSpec(
            n_tweets=250,
            n_unique_images=50,
            n_duplicate_images=30,
            n_failures=5,
            dimension=8,
        ),
    )
    return paths


def run_cli(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


class TestReplayCommand:
    def test_replay_writes_reports(self, corpus, tmp_path):
        out = tmp_path / "run"
        result = run_cli(
            "replay",
            "--input", str(corpus.tweets),
            "--manifest", str(corpus.manifest),
            "--config", str(corpus.config),
            "--out", str(out),
        )
        assert result.exit_code == 0, result.output
        for name in ("accounting.json", "accounting.csv", "timeseries.csv", "states.jsonl", "events.jsonl", "dead_letter.jsonl"):
            assert (out / name).exists(), name
        assert (out / "figures" / "timeseries_volume.png").exists()
        acc = json.loads((out / "accounting.json").read_text())
        assert acc["downloaded"] == acc["unique_images"] + acc["duplicate_images"]

    def test_replay_empty_input_exit_zero(self, corpus, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        out = tmp_path / "run-empty"
        result = run_cli(
            "replay",
            "--input", str(empty),
            "--manifest", str(corpus.manifest),
            "--config", str(corpus.config),
            "--out", str(out),
        )
        assert result.exit_code == 0
        acc = json.loads((out / "accounting.json").read_text())
        assert all(v == 0 for v in acc.values())

    def test_replay_twice_same_seed_byte_identical(self, corpus, tmp_path):
        outputs = []
        for i, workers in enumerate(("1", "6")):
            out = tmp_path / f"run-{i}"
            result = run_cli(
                "replay",
                "--input", str(corpus.tweets),
                "--manifest", str(corpus.manifest),
                "--config", str(corpus.config),
                "--out", str(out),
                "--fetch-workers", workers,
            )
            assert result.exit_code == 0
            outputs.append(
                (
                    (out / "accounting.json").read_bytes(),
                    (out / "accounting.csv").read_bytes(),
                    (out / "timeseries.csv").read_bytes(),
                )
            )
        assert outputs[0] == outputs[1]

    def test_bad_manifest_exit_one(self, corpus, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"url": "https://x/a"}\n{"url": "https://x/a"}\n')
        result = CliRunner().invoke(
            main,
            [
                "replay",
                "--input", str(corpus.tweets),
                "--manifest", str(bad),
                "--config", str(corpus.config),
                "--out", str(tmp_path / "nope"),
            ],
        )
        assert result.exit_code == 1
        assert "duplicate url" in result.output

    def test_unknown_flag_exit_two(self, corpus):
        result = CliRunner().invoke(main, ["replay", "--frobnicate"])
        assert result.exit_code == 2


class TestSampleCommand:
    def test_sample_then_resample_adds_zero(self, corpus, tmp_path):
        out = tmp_path / "run"
        run_cli(
            "replay",
            "--input", str(corpus.tweets),
            "--manifest", str(corpus.manifest),
            "--config", str(corpus.config),
            "--out", str(out),
        )
        tasks_path = tmp_path / "tasks.jsonl"
        result = run_cli(
            "sample",
            "--states", str(out / "states.jsonl"),
            "--window-hours", "240",
            "--none-fraction", "0.1",
            "--tasks", str(tasks_path),
        )
        assert result.exit_code == 0, result.output
        n_tasks = len(tasks_path.read_text().splitlines())
        assert n_tasks > 0
        result = run_cli(
            "sample",
            "--states", str(out / "states.jsonl"),
            "--window-hours", "240",
            "--none-fraction", "0.1",
            "--tasks", str(tasks_path),
        )
        assert "0 new tasks" in result.output
        assert len(tasks_path.read_text().splitlines()) == n_tasks

    def test_campaign_config_file_drives_sampling(self, corpus, tmp_path):
        out = tmp_path / "run"
        run_cli(
            "replay",
            "--input", str(corpus.tweets),
            "--manifest", str(corpus.manifest),
            "--config", str(corpus.config),
            "--out", str(out),
        )
        campaign = tmp_path / "campaign.toml"
        campaign.write_text("window_hours = 240\nnone_fraction = 0.0\nseed = 7\n")
        tasks_path = tmp_path / "tasks.jsonl"
        result = run_cli(
            "sample",
            "--states", str(out / "states.jsonl"),
            "--campaign-config", str(campaign),
            "--tasks", str(tasks_path),
        )
        assert result.exit_code == 0, result.output
        lines = [json.loads(l) for l in tasks_path.read_text().splitlines()]
        assert lines and all(t["machine_damage"] in ("severe", "mild") for t in lines)

    def test_window_hours_required_without_campaign_config(self, corpus, tmp_path):
        result = CliRunner().invoke(
            main,
            ["sample", "--states", str(corpus.manifest), "--tasks", str(tmp_path / "t.jsonl")],
        )
        assert result.exit_code == 2


class TestEvaluateCommand:
    def test_evaluate_campaign_fixture(self, tmp_path):
        judgments = tmp_path / "judgments.jsonl"
        write_deployment_judgments(judgments)
        out = tmp_path / "eval"
        result = run_cli("evaluate", "--judgments", str(judgments), "--out", str(out))
        assert result.exit_code == 0, result.output
        assert "binary: n=28050 accuracy=0.76 P=0.89 R=0.76 F1=0.81" in result.output
        assert "ternary: n=28050 accuracy=0.74 P=0.90 R=0.74 F1=0.80" in result.output
        binary = json.loads((out / "report_binary.json").read_text())
        assert binary["matrix"]["cells"] == [[2088, 712], [5954, 19296]]
        ternary = json.loads((out / "report_ternary.json").read_text())
        assert ternary["matrix"]["cells"] == [
            [710, 384, 357],
            [113, 881, 355],
            [721, 5233, 19296],
        ]
        matrix_csv = (out / "matrix_ternary.csv").read_text().splitlines()
        assert matrix_csv[0].endswith("Severe Damage,Mild Damage,None")
        assert (out / "figures" / "confusion_binary.png").exists()
        slices = json.loads(result.output.splitlines()[-1].removeprefix("error slices: "))
        assert slices == {
            "fn_severe_missed": 357,
            "fn_mild_missed": 355,
            "fp_severe_spurious": 721,
            "fp_mild_spurious": 5233,
        }


class TestReportCommand:
    def test_report_renders_figures_alongside_csv(self, corpus, tmp_path):
        run_dir = tmp_path / "run"
        run_cli(
            "replay",
            "--input", str(corpus.tweets),
            "--manifest", str(corpus.manifest),
            "--config", str(corpus.config),
            "--out", str(run_dir),
        )
        out = tmp_path / "report"
        result = run_cli("report", "--run-dir", str(run_dir), "--out", str(out), "--format", "csv")
        assert result.exit_code == 0, result.output
        assert (out / "accounting.csv").exists()
        assert (out / "timeseries.csv").exists()
        assert (out / "figures" / "timeseries_volume.png").exists()
        assert (out / "figures" / "timeseries_severity.png").exists()
        header = (out / "accounting.csv").read_text().splitlines()[0]
        assert header.startswith("Total tweets,Unique image URLs,Downloaded images")

    def test_report_json_format(self, corpus, tmp_path):
        run_dir = tmp_path / "run"
        run_cli(
            "replay",
            "--input", str(corpus.tweets),
            "--manifest", str(corpus.manifest),
            "--config", str(corpus.config),
            "--out", str(run_dir),
        )
        out = tmp_path / "report-json"
        result = run_cli("report", "--run-dir", str(run_dir), "--out", str(out), "--format", "json")
        assert result.exit_code == 0
        assert (out / "accounting.json").exists()
        assert (out / "timeseries.json").exists()


class TestSynthCommands:
    def test_synth_corpus(self, tmp_path):
        out = tmp_path / "synth"
        result = run_cli(
            "synth", "corpus", "--out", str(out), "--tweets", "50",
            "--unique-images", "10", "--duplicate-images", "5", "--failures", "2", "--dim", "4",
        )
        assert result.exit_code == 0
        assert (out / "tweets.jsonl").exists()
        assert (out / "manifest.jsonl").exists()
        assert (out / "config.toml").exists()

    def test_synth_judgments(self, tmp_path):
        out = tmp_path / "j.jsonl"
        result = run_cli("synth", "judgments", "--out", str(out))
        assert result.exit_code == 0
        assert len(out.read_text().splitlines()) == 29136
