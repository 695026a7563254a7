import csv
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest

from aspectsent import corpus, model, stats, synth
from aspectsent.cli import emit_figure_data, main, read_prediction_rows
from aspectsent.errors import PipelineError
from aspectsent.features import provider_from_config
from aspectsent.stats import DailySeries

from conftest import corpus_line
from datetime import date

D0 = date(2020, 3, 1)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@pytest.fixture
def small_corpus(tmp_path):
    lines = [
        corpus_line(tweet_id="1", when="2020-01-25T10:00:00Z", text="china lockdown begins"),
        corpus_line(tweet_id="2", when="2020-01-25T11:00:00Z", text="china cases rising", lang="es"),
        corpus_line(tweet_id="3", when="2020-01-26T09:00:00Z", text="nothing relevant here"),
        corpus_line(tweet_id="4", when="2020-01-26T12:00:00Z", text="wuhan report out",
                    bot_flag=True),
        corpus_line(tweet_id="5", when="2020-07-01T00:00:00Z", text="china late tweet"),
    ]
    path = tmp_path / "corpus.jsonl"
    write_lines(path, lines)
    keywords = tmp_path / "keywords.txt"
    keywords.write_text("china\nwuhan\n", encoding="utf-8")
    return path, keywords


class TestIngestCommand:
    def test_filters_and_writes_meta(self, tmp_path, small_corpus):
        corpus_path, keywords = small_corpus
        out = tmp_path / "filtered.jsonl"
        code = main([
            "ingest", "--corpus", str(corpus_path), "--keywords", str(keywords),
            "--out", str(out), "--lang", "en",
            "--date-start", "2020-01-22", "--date-end", "2020-05-21",
        ])
        assert code == 0
        ids = [json.loads(line)["id"] for line in out.read_text().splitlines()]
        assert ids == ["1", "4"]  # 2 wrong lang, 3 no keyword, 5 out of range
        meta = json.loads(Path(f"{out}.meta.json").read_text())
        assert meta["tool"] == "aspectsent"
        assert "config_hash" in meta

    def test_missing_corpus_exits_one_naming_path(self, tmp_path, capsys):
        code = main([
            "ingest", "--corpus", str(tmp_path / "nope.jsonl"),
            "--keywords", str(tmp_path / "kw.txt"), "--out", str(tmp_path / "o"),
            "--date-start", "2020-01-01", "--date-end", "2020-01-02",
        ])
        assert code == 1
        assert "nope.jsonl" in capsys.readouterr().err

    def test_unknown_subcommand_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_unknown_flag_is_usage_error(self, small_corpus, capsys):
        corpus_path, keywords = small_corpus
        assert main(["ingest", "--corpus", str(corpus_path), "--bogus"]) == 2


class TestAdjudicateAndStats:
    def test_adjudicate_then_stats(self, tmp_path):
        annotations = synth.make_annotation_records(30, seed=5)
        ann_path = tmp_path / "annotations.jsonl"
        synth.write_jsonl(ann_path, annotations)
        dataset = tmp_path / "dataset.jsonl"
        assert main(["adjudicate", "--annotations", str(ann_path), "--out", str(dataset)]) == 0
        examples = corpus.read_dataset(dataset)
        assert examples

        table = tmp_path / "table1.csv"
        assert main(["stats-dataset", "--dataset", str(dataset), "--out", str(table)]) == 0
        rows = list(csv.DictReader(table.open()))
        aspects = {r["aspect"] for r in rows}
        assert aspects == {a.value for a in corpus.TABLE_ASPECTS}
        # counts recomputed from the dataset must agree with the CSV
        politics_rows = [r for r in rows if r["aspect"] == "Politics"]
        expected = sum(1 for e in examples if corpus.Aspect.POLITICS in e.labels)
        assert all(int(r["count_aspect"]) == expected for r in politics_rows)

    def test_split_sizes(self, tmp_path):
        dataset = tmp_path / "dataset.jsonl"
        synth.write_jsonl(dataset, synth.make_dataset_records(50, seed=2))
        out_dir = tmp_path / "splits"
        assert main(["split", "--dataset", str(dataset), "--out-dir", str(out_dir),
                     "--seed", "3"]) == 0
        sizes = [len(corpus.read_dataset(out_dir / f"{p}.jsonl")) for p in ("train", "dev", "test")]
        assert sum(sizes) == 50
        assert abs(sizes[0] - 40) <= 1

    def test_adjudicate_attaches_tweets_from_corpus(self, tmp_path):
        dataset_records = synth.make_dataset_records(10, seed=9)
        tweets_path = tmp_path / "tweets.jsonl"
        synth.write_jsonl(tweets_path, [r["tweet"] for r in dataset_records])
        ann_path = tmp_path / "annotations.jsonl"
        synth.write_jsonl(ann_path, [
            {"tweet_id": r["tweet_id"], "annotator_id": who,
             "labels": r["labels"], "overall": r["overall"]}
            for r in dataset_records for who in ("a1", "a2")
        ])
        out = tmp_path / "dataset.jsonl"
        assert main(["adjudicate", "--annotations", str(ann_path),
                     "--tweets", str(tweets_path), "--out", str(out)]) == 0
        examples = corpus.read_dataset(out)
        assert all(e.tweet is not None for e in examples)
        assert all(e.tweet.text for e in examples)

    def test_split_too_small_exits_one(self, tmp_path, capsys):
        dataset = tmp_path / "dataset.jsonl"
        synth.write_jsonl(dataset, synth.make_dataset_records(5, seed=2))
        assert main(["split", "--dataset", str(dataset),
                     "--out-dir", str(tmp_path / "s")]) == 1
        assert "too small" in capsys.readouterr().err


@pytest.fixture
def trained_params(tmp_path):
    dataset = tmp_path / "labels.jsonl"
    synth.write_jsonl(dataset, synth.make_dataset_records(120, seed=11))
    splits = tmp_path / "splits"
    main(["split", "--dataset", str(dataset), "--out-dir", str(splits), "--seed", "1"])
    params = tmp_path / "params.json"
    code = main([
        "train", "--train", str(splits / "train.jsonl"), "--dev", str(splits / "dev.jsonl"),
        "--params-out", str(params), "--epochs", "6", "--dim", "1024", "--train-seed", "4",
    ])
    assert code == 0
    return params, splits


class TestTrainEvalInfer:
    def test_eval_report_shape(self, tmp_path, trained_params):
        params, splits = trained_params
        out = tmp_path / "report.csv"
        assert main(["eval", "--params", str(params), "--dataset", str(splits / "test.jsonl"),
                     "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["aspect"] for r in rows] == [
            "Politics", "Foreign", "Situation", "Measures", "Racism", "Overall",
        ]
        for r in rows:
            for col in ("aspect_macro_f1", "aspect_micro_f1",
                        "sentiment_macro_f1", "sentiment_micro_f1"):
                assert 0.0 <= float(r[col]) <= 1.0

    def test_infer_matches_forward_oracle(self, tmp_path, trained_params):
        params_path, _ = trained_params
        fixture = tmp_path / "three.jsonl"
        write_lines(fixture, [
            corpus_line(tweet_id="a", when="2020-02-01T00:00:00Z",
                        text="china government policy awful"),
            corpus_line(tweet_id="b", when="2020-02-01T01:00:00Z",
                        text="china lockdown masks effective"),
            corpus_line(tweet_id="c", when="2020-02-02T00:00:00Z", text="china cases update"),
        ])
        out = tmp_path / "pred.jsonl"
        assert main(["infer", "--params", str(params_path), "--corpus", str(fixture),
                     "--out", str(out)]) == 0
        bundle = model.load_params(params_path)
        provider = provider_from_config(bundle.provider_config)
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        assert [o["id"] for o in lines] == ["a", "b", "c"]
        texts = ["china government policy awful", "china lockdown masks effective",
                 "china cases update"]
        p_a = model.forward_aspect(provider.embed(texts), bundle.params)
        for i, obj in enumerate(lines):
            for j, aspect in enumerate(corpus.A_USED):
                assert obj["aspect_probs"][aspect.value] == pytest.approx(p_a[i, j], abs=1e-12)
            detected = {a for a, p in obj["aspect_probs"].items() if p >= bundle.aspect_threshold}
            assert set(obj["detected"]) == detected
            assert set(obj["sentiment"]) == detected

    def test_svm_objective_trains(self, tmp_path, trained_params):
        _, splits = trained_params
        params = tmp_path / "svm.json"
        assert main(["train", "--train", str(splits / "train.jsonl"),
                     "--params-out", str(params), "--objective", "hinge",
                     "--epochs", "5"]) == 0
        bundle = model.load_params(params)
        assert bundle.objective == "hinge"

    def test_augment_candidates(self, tmp_path, trained_params):
        params, _ = trained_params
        pool = tmp_path / "pool.jsonl"
        records = synth.make_corpus_records(80, seed=21, non_english_fraction=0.0,
                                            offtopic_fraction=0.0)
        synth.write_jsonl(pool, records)
        out = tmp_path / "candidates.jsonl"
        assert main(["augment-candidates", "--params", str(params), "--pool", str(pool),
                     "--out", str(out), "--threshold", "0.6", "--cap", "10"]) == 0
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        for row in rows:
            assert row["probability"] >= 0.6
        per_aspect = {}
        for row in rows:
            per_aspect.setdefault(row["aspect"], []).append(row["probability"])
        for probs in per_aspect.values():
            assert len(probs) <= 10
            assert probs == sorted(probs, reverse=True)


def _write_predictions(path, rows):
    objs = []
    for r in rows:
        objs.append(json.dumps({
            "id": r.id,
            "date": r.day.isoformat(),
            "aspect_probs": {},
            "detected": sorted(r.detected),
            "sentiment": {a: {"label": "Negative", "p_negative": 0.9} for a in sorted(r.negatives)},
            "group_tags": sorted(r.group_tags),
            "bot_flag": r.bot_flag,
        }))
    write_lines(path, objs)


def _prediction_rows():
    rows = []
    for i in range(40):
        day = date(2020, 3, 1 + i % 10)
        detected = {"Politics"} if i % 2 == 0 else {"Measures"}
        negatives = {"Politics"} if i % 4 == 0 else set()
        rows.append(stats.PredictionRow(
            id=f"p{i}", day=day, detected=frozenset(detected),
            negatives=frozenset(negatives & detected),
            group_tags=frozenset({"us_media"} if i % 5 == 0 else set()),
            bot_flag=(i % 3 == 0),
        ))
    return rows


class TestSeriesAndGranger:
    def test_series_single_csv(self, tmp_path):
        pred_path = tmp_path / "pred.jsonl"
        _write_predictions(pred_path, _prediction_rows())
        out = tmp_path / "count.csv"
        assert main(["series", "--predictions", str(pred_path), "--select", "count",
                     "--out", str(out)]) == 0
        series = stats.read_series_csv(out)
        assert len(series) == 10
        assert sum(v for v in series.values if v) == 40

    def test_series_wide_csv(self, tmp_path):
        pred_path = tmp_path / "pred.jsonl"
        _write_predictions(pred_path, _prediction_rows())
        out = tmp_path / "wide.csv"
        assert main(["series", "--predictions", str(pred_path),
                     "--select", "count", "--select", "aspect:Politics",
                     "--select", "negative:Politics",
                     "--out", str(out)]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["date", "count", "aspect:Politics", "negative:Politics"]
        assert len(rows) == 11

    def test_series_smoothing_flag(self, tmp_path):
        pred_path = tmp_path / "pred.jsonl"
        _write_predictions(pred_path, _prediction_rows())
        raw_out = tmp_path / "raw.csv"
        smooth_out = tmp_path / "smooth.csv"
        main(["series", "--predictions", str(pred_path), "--select", "count",
              "--out", str(raw_out)])
        main(["series", "--predictions", str(pred_path), "--select", "count",
              "--smooth-window", "7", "--out", str(smooth_out)])
        raw = stats.read_series_csv(raw_out)
        smooth = stats.read_series_csv(smooth_out)
        expected = stats.smooth_ma(raw, 7)
        assert smooth.values == pytest.approx(expected.values)

    def test_granger_csv_both_directions(self, tmp_path):
        rng = np.random.default_rng(5)
        x_vals = list(rng.normal(0, 1, size=60))
        y_vals = [0.0] + [0.8 * x_vals[i - 1] + float(rng.normal(0, 0.2)) for i in range(1, 60)]
        x_path, y_path = tmp_path / "x.csv", tmp_path / "y.csv"
        stats.write_series_csv(x_path, DailySeries(D0, x_vals))
        stats.write_series_csv(y_path, DailySeries(D0, y_vals))
        out = tmp_path / "granger.csv"
        assert main(["granger", "--x", str(x_path), "--y", str(y_path), "--lag", "1",
                     "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert [(r["cause"], r["effect"]) for r in rows] == [("x", "y"), ("y", "x")]
        expected = stats.granger_test(DailySeries(D0, x_vals), DailySeries(D0, y_vals))
        assert float(rows[0]["F"]) == pytest.approx(expected.f_stat, rel=1e-12)
        assert float(rows[0]["p"]) == pytest.approx(expected.p_value, rel=1e-12)
        assert int(rows[0]["n_used"]) == expected.n_used

    def test_compare_groups_csv(self, tmp_path):
        pred_path = tmp_path / "pred.jsonl"
        _write_predictions(pred_path, _prediction_rows())
        out = tmp_path / "compare.csv"
        assert main(["compare-groups", "--predictions", str(pred_path),
                     "--group-a", "bots", "--group-b", "users",
                     "--mode", "aspect-proportion", "--out", str(out)]) == 0
        rows = list(csv.DictReader(out.open()))
        assert [r["aspect"] for r in rows] == [
            "Politics", "Foreign", "Situation", "Measures", "Racism",
        ]
        loaded = read_prediction_rows(pred_path)
        expected = stats.group_compare(
            loaded, lambda r: r.bot_flag is True, lambda r: r.bot_flag is False,
            "aspect-proportion",
        )
        got_politics = next(r for r in rows if r["aspect"] == "Politics")
        assert float(got_politics["t"]) == pytest.approx(expected["Politics"].t_stat, rel=1e-12)

    def test_group_selector_tag(self, tmp_path):
        pred_path = tmp_path / "pred.jsonl"
        _write_predictions(pred_path, _prediction_rows())
        out = tmp_path / "compare.csv"
        assert main(["compare-groups", "--predictions", str(pred_path),
                     "--group-a", "tag:us_media", "--group-b", "all",
                     "--mode", "sentiment-mean", "--out", str(out)]) == 0


class TestEmitFigureData:
    def test_constant_series(self, tmp_path):
        out = tmp_path / "fig.csv"
        emit_figure_data({"flat": DailySeries(D0, [2.0, 2.0, 2.0])}, out)
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["date", "flat"]
        assert [r[1] for r in rows[1:]] == ["2.0", "2.0", "2.0"]

    def test_five_series_ten_days(self, tmp_path):
        series = {
            f"s{i}": DailySeries(D0, [float(i)] * 10) for i in range(5)
        }
        out = tmp_path / "fig.csv"
        emit_figure_data(series, out)
        rows = list(csv.reader(out.open()))
        assert len(rows) == 11
        assert len(rows[0]) == 6

    def test_misaligned_rejected(self, tmp_path):
        series = {
            "a": DailySeries(D0, [1.0, 2.0]),
            "b": DailySeries(date(2020, 3, 2), [1.0, 2.0]),
        }
        with pytest.raises(PipelineError):
            emit_figure_data(series, tmp_path / "fig.csv")


class TestReport:
    def test_full_bundle(self, tmp_path, trained_params):
        params, splits = trained_params
        public = tmp_path / "public.jsonl"
        media = tmp_path / "media.jsonl"
        rng = np.random.default_rng(3)
        rows = []
        from datetime import timedelta

        for i in range(400):
            day = D0 + timedelta(days=i % 40)
            detected = set()
            negatives = set()
            for aspect in ("Politics", "Measures", "Racism"):
                if rng.random() < 0.4:
                    detected.add(aspect)
                    if rng.random() < 0.5:
                        negatives.add(aspect)
            rows.append(stats.PredictionRow(
                id=f"m{i}", day=day, detected=frozenset(detected),
                negatives=frozenset(negatives),
                bot_flag=bool(rng.random() < 0.3),
            ))
        _write_predictions(public, rows)
        _write_predictions(media, rows[::3])

        cfg = {
            "report": {
                "dataset": str(splits / "train.jsonl"),
                "params": str(params),
                "test": str(splits / "test.jsonl"),
                "predictions": str(public),
                "media_predictions": str(media),
                "group_a": "bots",
                "group_b": "users",
                "lag": 1,
                "smoothing_window": 7,
            }
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        out_dir = tmp_path / "report"
        assert main(["report", "-c", str(cfg_path), "--out-dir", str(out_dir)]) == 0
        names = {p.name for p in out_dir.iterdir()}
        for expected in (
            "table1_dataset_stats.csv", "table2_model_performance.csv",
            "fig2_daily_counts.csv", "fig3_aspect_proportions.csv",
            "fig5_sentiment_proportions.csv", "table5_granger_aspects.csv",
            "table6_granger_sentiments.csv", "table7_group_aspects.csv",
            "table8_group_sentiments.csv",
        ):
            assert expected in names
            assert f"{expected}.meta.json" in names

    def test_report_without_config_fails(self, tmp_path):
        assert main(["report", "--out-dir", str(tmp_path / "r")]) == 1

    def test_partial_config_emits_what_it_can(self, tmp_path):
        pred_path = tmp_path / "pred.jsonl"
        _write_predictions(pred_path, _prediction_rows())
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"report": {"predictions": str(pred_path)}}),
                            encoding="utf-8")
        out_dir = tmp_path / "report"
        assert main(["report", "-c", str(cfg_path), "--out-dir", str(out_dir)]) == 0
        names = {p.name for p in out_dir.iterdir()}
        assert "fig2_daily_counts.csv" in names
        assert "table5_granger_aspects.csv" not in names  # no media predictions
        assert "table1_dataset_stats.csv" not in names  # no dataset


class _DeterministicEmbedHandler(BaseHTTPRequestHandler):
    """Vectors derived from text bytes only, so re-embedding is stable."""

    dim = 16

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        vecs = []
        for text in body["texts"]:
            rng = np.random.default_rng(abs(hash((text,))) % (2**32))
            vecs.append(list(rng.uniform(-1, 1, size=self.dim)))
        data = json.dumps({"dim": self.dim, "embeddings": vecs}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_service():
    server = HTTPServer(("127.0.0.1", 0), _DeterministicEmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    thread.join(timeout=5)


class TestRemoteProviderIntegration:
    def test_train_eval_infer_with_remote_embeddings(self, tmp_path, embed_service):
        dataset = tmp_path / "labels.jsonl"
        synth.write_jsonl(dataset, synth.make_dataset_records(60, seed=17))
        splits = tmp_path / "splits"
        assert main(["split", "--dataset", str(dataset), "--out-dir", str(splits),
                     "--seed", "2"]) == 0
        params = tmp_path / "params.json"
        assert main(["train", "--train", str(splits / "train.jsonl"),
                     "--dev", str(splits / "dev.jsonl"),
                     "--params-out", str(params),
                     "--provider", "remote", "--endpoint", embed_service,
                     "--dim", "16", "--epochs", "3"]) == 0
        bundle = model.load_params(params)
        assert bundle.provider_config["kind"] == "remote"
        assert bundle.provider_config["endpoint"] == embed_service
        assert bundle.params.dim == 16

        report = tmp_path / "report.csv"
        assert main(["eval", "--params", str(params),
                     "--dataset", str(splits / "test.jsonl"),
                     "--out", str(report)]) == 0

        fixture = tmp_path / "three.jsonl"
        write_lines(fixture, [
            corpus_line(tweet_id="a", text="china policy"),
            corpus_line(tweet_id="b", text="china masks"),
            corpus_line(tweet_id="c", text="china cases"),
        ])
        out = tmp_path / "pred.jsonl"
        assert main(["infer", "--params", str(params), "--corpus", str(fixture),
                     "--out", str(out)]) == 0
        assert len(out.read_text().splitlines()) == 3

    def test_endpoint_override_at_inference(self, tmp_path, embed_service):
        # params trained against one endpoint can be pointed at another
        import socket

        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        dead_port = sock.getsockname()[1]
        sock.close()
        dataset = tmp_path / "labels.jsonl"
        synth.write_jsonl(dataset, synth.make_dataset_records(30, seed=19))
        params = tmp_path / "params.json"
        assert main(["train", "--train", str(dataset), "--params-out", str(params),
                     "--provider", "remote", "--endpoint", f"http://127.0.0.1:{dead_port}",
                     "--dim", "16", "--epochs", "0"]) == 1  # unreachable endpoint
        assert main(["train", "--train", str(dataset), "--params-out", str(params),
                     "--provider", "remote", "--endpoint", embed_service,
                     "--dim", "16", "--epochs", "2"]) == 0
        fixture = tmp_path / "one.jsonl"
        write_lines(fixture, [corpus_line(tweet_id="a", text="china policy")])
        out = tmp_path / "pred.jsonl"
        assert main(["infer", "--params", str(params), "--corpus", str(fixture),
                     "--endpoint", embed_service, "--out", str(out)]) == 0


class TestConfigPrecedence:
    def test_flags_beat_file_beat_defaults(self, tmp_path, small_corpus):
        corpus_path, keywords = small_corpus
        cfg = {
            "ingest": {
                "lang": "es",  # overridden by flag below
                "date_start": "2020-01-22",
                "date_end": "2020-05-21",
                "sample_rate": 1.0,
            }
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        out = tmp_path / "out.jsonl"
        assert main(["ingest", "-c", str(cfg_path), "--corpus", str(corpus_path),
                     "--keywords", str(keywords), "--out", str(out),
                     "--lang", "en"]) == 0
        ids = [json.loads(line)["id"] for line in out.read_text().splitlines()]
        assert ids == ["1", "4"]  # en from the flag, date range from the file

    def test_provider_endpoint_via_config_file(self, tmp_path, trained_params):
        # a remote section in the file must survive resolution and reach the
        # validation that rejects hinge training on a remote provider
        _, splits = trained_params
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(
            {"provider": {"kind": "remote", "endpoint": "http://127.0.0.1:9", "dim": 8}}
        ), encoding="utf-8")
        code = main(["train", "-c", str(cfg_path),
                     "--train", str(splits / "train.jsonl"),
                     "--params-out", str(tmp_path / "p.json"),
                     "--objective", "hinge", "--epochs", "1"])
        assert code == 1


class TestReproducibility:
    def test_ingest_twice_is_byte_identical(self, tmp_path, small_corpus):
        corpus_path, keywords = small_corpus
        outs = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.jsonl"
            main(["ingest", "--corpus", str(corpus_path), "--keywords", str(keywords),
                  "--out", str(out), "--lang", "en", "--sample-rate", "0.5",
                  "--seed", "9", "--date-start", "2020-01-22", "--date-end", "2020-05-21"])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
