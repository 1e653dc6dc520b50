import json
from pathlib import Path

import numpy as np
import pytest

from nodulecbir import io
from nodulecbir.cli import main
from nodulecbir.data import generate_synthetic
from nodulecbir.errors import FormatError
from nodulecbir.head import HeadConfig, embed_all, init_model, train
from nodulecbir.index import build_index, query_top_k


@pytest.fixture(scope="module")
def synth_files(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(
        ["synth", "--n", "40", "--dim", "12", "--sigma", "0.4", "--seed", "11",
         "--out", str(out)]
    )
    assert code == 0
    return out / "annotations.jsonl", out / "features.jsonl"


def _read_bytes(*paths):
    return [Path(p).read_bytes() for p in paths]


class TestFileFormats:
    def test_dataset_round_trip_is_exact(self, tmp_path):
        dataset = generate_synthetic(15, 7, noise_sigma=0.3, seed=4)
        ann, feat = tmp_path / "a.jsonl", tmp_path / "f.jsonl"
        io.write_annotations(ann, dataset.records, dataset.provenance)
        io.write_features(feat, dataset.records, dataset.feature_dim, dataset.provenance)
        loaded, report = io.load_dataset(ann, feat)
        assert report.dropped == 0
        assert loaded.provenance == "synthetic"
        for original, back in zip(dataset.records, loaded.records):
            assert original.nodule_id == back.nodule_id
            assert original.scan_id == back.scan_id
            assert np.array_equal(original.feature, back.feature)
            for ra, rb in zip(original.annotations, back.annotations):
                assert np.array_equal(ra.values, rb.values)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        manifest = {"format": "nodulecbir/annotations", "version": 99, "tool": "x"}
        path.write_text(json.dumps(manifest) + "\n")
        with pytest.raises(FormatError, match="version"):
            io.read_annotations(path)

    def test_wrong_format_rejected(self, tmp_path):
        dataset = generate_synthetic(5, 7, seed=4)
        feat = tmp_path / "f.jsonl"
        io.write_features(feat, dataset.records, 7)
        with pytest.raises(FormatError, match="expected format"):
            io.read_annotations(feat)

    def test_mismatched_ids_rejected(self, tmp_path):
        dataset = generate_synthetic(6, 7, seed=4)
        ann, feat = tmp_path / "a.jsonl", tmp_path / "f.jsonl"
        io.write_annotations(ann, dataset.records)
        io.write_features(feat, dataset.records[:-1], 7)
        from nodulecbir.errors import JoinError

        with pytest.raises(JoinError):
            io.load_dataset(ann, feat)

    def test_model_round_trip_is_exact(self, tmp_path):
        dataset = generate_synthetic(10, 6, seed=2)
        model, _ = train(dataset, HeadConfig(input_dim=6, epochs=3, seed=8))
        path = tmp_path / "model.json"
        io.write_model(path, model)
        back = io.read_model(path)
        assert back.config == model.config
        for pa, pb in zip(model.parameters(), back.parameters()):
            assert np.array_equal(pa, pb)

    def test_embeddings_round_trip_is_exact(self, tmp_path):
        dataset = generate_synthetic(10, 6, seed=2)
        model = init_model(HeadConfig(input_dim=6, seed=1))
        embeddings = embed_all(model, dataset)
        path = tmp_path / "emb.jsonl"
        io.write_embeddings(path, embeddings)
        back, _ = io.read_embeddings(path)
        assert [e.nodule_id for e in back] == [e.nodule_id for e in embeddings]
        for ea, eb in zip(embeddings, back):
            assert np.array_equal(ea.values, eb.values)


class TestSynthCommand:
    def test_outputs_and_determinism(self, synth_files, tmp_path):
        ann, feat = synth_files
        records, manifest = io.read_annotations(ann)
        assert len(records) == 40
        assert manifest["provenance"] == "synthetic"
        rerun = tmp_path / "again"
        main(["synth", "--n", "40", "--dim", "12", "--sigma", "0.4", "--seed", "11",
              "--out", str(rerun)])
        assert _read_bytes(ann) == _read_bytes(rerun / "annotations.jsonl")
        assert _read_bytes(feat) == _read_bytes(rerun / "features.jsonl")

    def test_zero_sigma_unanimous(self, tmp_path):
        main(["synth", "--n", "6", "--dim", "8", "--sigma", "0", "--out", str(tmp_path)])
        records, _ = io.read_annotations(tmp_path / "annotations.jsonl")
        for record in records:
            first = record.annotations[0].values
            assert all(np.array_equal(a.values, first) for a in record.annotations)


@pytest.fixture(scope="module")
def pipeline(synth_files, tmp_path_factory):
    ann, feat = synth_files
    out = tmp_path_factory.mktemp("pipeline")
    model_path = out / "model.json"
    emb_path = out / "embeddings.jsonl"
    assert main(["train", "--annotations", str(ann), "--features", str(feat),
                 "--model", str(model_path), "--epochs", "10", "--hidden", "16",
                 "--seed", "11"]) == 0
    assert main(["embed", "--annotations", str(ann), "--features", str(feat),
                 "--model", str(model_path), "--embeddings", str(emb_path)]) == 0
    return ann, feat, model_path, emb_path


class TestTrainEmbedQueryCommands:
    def test_model_round_trips_and_loss_printed(self, synth_files, tmp_path, capsys):
        ann, feat = synth_files
        model_path = tmp_path / "m.json"
        main(["train", "--annotations", str(ann), "--features", str(feat),
              "--model", str(model_path), "--epochs", "5", "--hidden", "8",
              "--seed", "3"])
        out = capsys.readouterr().out
        assert "final training loss" in out
        model = io.read_model(model_path)
        assert model.config.epochs == 5

    def test_zero_epoch_model_is_initialization(self, synth_files, tmp_path):
        ann, feat = synth_files
        model_path = tmp_path / "m0.json"
        main(["train", "--annotations", str(ann), "--features", str(feat),
              "--model", str(model_path), "--epochs", "0", "--hidden", "8",
              "--seed", "3"])
        model = io.read_model(model_path)
        expected = init_model(model.config)
        for pa, pb in zip(model.parameters(), expected.parameters()):
            assert np.array_equal(pa, pb)

    def test_embeddings_match_in_process(self, pipeline):
        ann, feat, model_path, emb_path = pipeline
        dataset, _ = io.load_dataset(ann, feat)
        model = io.read_model(model_path)
        expected = embed_all(model, dataset)
        loaded, _ = io.read_embeddings(emb_path)
        assert len(loaded) == len(dataset)
        for ea, eb in zip(expected, loaded):
            assert ea.nodule_id == eb.nodule_id
            assert np.array_equal(ea.values, eb.values)

    def test_query_defaults_and_exclusion(self, pipeline, capsys):
        ann, feat, model_path, emb_path = pipeline
        embeddings, _ = io.read_embeddings(emb_path)
        query_id = embeddings[0].nodule_id
        assert main(["query", "--embeddings", str(emb_path), "--annotations",
                     str(ann), "--query-id", query_id]) == 0
        out = capsys.readouterr().out
        lines = [l for l in out.splitlines() if l.strip().split() and
                 l.strip().split()[0].isdigit()]
        assert len(lines) == 4  # default k
        assert all(query_id not in line for line in lines)

    def test_query_order_matches_library(self, pipeline, capsys):
        ann, feat, model_path, emb_path = pipeline
        embeddings, _ = io.read_embeddings(emb_path)
        records, _ = io.read_annotations(ann)
        query = embeddings[3]
        index = build_index(embeddings, records)
        expected = query_top_k(index, query, 5, exclude={query.nodule_id})
        main(["query", "--embeddings", str(emb_path), "--annotations", str(ann),
              "--query-id", query.nodule_id, "--k", "5"])
        out = capsys.readouterr().out
        printed_ids = [
            line.split()[1]
            for line in out.splitlines()
            if line.strip().split() and line.strip().split()[0].isdigit()
        ]
        assert printed_ids == list(expected.neighbor_ids)

    def test_unknown_query_id_error_line(self, pipeline, capsys):
        ann, feat, model_path, emb_path = pipeline
        code = main(["query", "--embeddings", str(emb_path), "--annotations",
                     str(ann), "--query-id", "nope"])
        err = capsys.readouterr().err
        assert code == 1
        assert err.startswith("error[lookup]:")

    def test_missing_file_error_line(self, capsys):
        code = main(["train", "--annotations", "missing.jsonl", "--features",
                     "missing.jsonl"])
        err = capsys.readouterr().err
        assert code == 1
        assert err.startswith("error[io]:")

    def test_usage_error_line(self, capsys):
        code = main(["train"])
        err = capsys.readouterr().err
        assert code == 2
        assert err.startswith("error[usage]:")

    def test_dimension_mismatch_error_line(self, pipeline, tmp_path, capsys):
        ann, feat, model_path, emb_path = pipeline
        other = tmp_path / "other"
        main(["synth", "--n", "10", "--dim", "9", "--out", str(other)])
        code = main(["embed", "--annotations", str(other / "annotations.jsonl"),
                     "--features", str(other / "features.jsonl"),
                     "--model", str(model_path)])
        err = capsys.readouterr().err
        assert code == 1
        assert err.startswith("error[config]:")


EVAL_FLAGS = ["--folds", "4", "--epochs", "12", "--hidden", "16",
              "--k-list", "1,2,4", "--seed", "7"]


@pytest.fixture(scope="module")
def eval_out(synth_files, tmp_path_factory):
    ann, feat = synth_files
    out = tmp_path_factory.mktemp("eval") / "run1"
    assert main(["evaluate", "--annotations", str(ann), "--features", str(feat),
                 "--out", str(out), *EVAL_FLAGS]) == 0
    return out


class TestEvaluateCommand:
    def test_expected_files(self, eval_out):
        names = {p.name for p in eval_out.iterdir()}
        assert {"report.json", "manifest.json", "lognormal_fits.csv",
                "dissent_random.csv", "dissent_doctors.csv",
                "dissent_cbir_k1.csv", "dissent_cbir_k2.csv",
                "dissent_cbir_k4.csv"} <= names

    def test_report_schema(self, eval_out):
        doc = json.loads((eval_out / "report.json").read_text())
        assert doc["format"] == "nodulecbir/report"
        methods = doc["report"]["methods"]
        assert set(methods) == {"random", "doctors", "cbir_k1", "cbir_k2", "cbir_k4"}
        for row in methods.values():
            assert set(row["rating_rmse"]) == {
                "subtlety", "sphericity", "margin", "lobulation", "malignancy"
            }

    def test_dissent_csv_row_counts(self, eval_out, synth_files):
        ann, feat = synth_files
        dataset, _ = io.load_dataset(ann, feat)
        lines = (eval_out / "dissent_cbir_k1.csv").read_text().splitlines()
        assert len(lines) == 1 + len(dataset)  # header + one per nodule
        doctor_lines = (eval_out / "dissent_doctors.csv").read_text().splitlines()
        expected = sum(len(r.annotations) for r in dataset.records)
        assert len(doctor_lines) == 1 + expected

    def test_rerun_is_byte_identical(self, eval_out, synth_files, tmp_path):
        ann, feat = synth_files
        rerun = tmp_path / "run2"
        assert main(["evaluate", "--annotations", str(ann), "--features", str(feat),
                     "--out", str(rerun), *EVAL_FLAGS]) == 0
        for path in sorted(eval_out.iterdir()):
            assert path.read_bytes() == (rerun / path.name).read_bytes()


@pytest.fixture(scope="module")
def embeddings_file(synth_files, tmp_path_factory):
    ann, feat = synth_files
    out = tmp_path_factory.mktemp("analysis")
    model_path = out / "model.json"
    emb_path = out / "embeddings.jsonl"
    main(["train", "--annotations", str(ann), "--features", str(feat),
          "--model", str(model_path), "--epochs", "8", "--hidden", "16",
          "--seed", "2"])
    main(["embed", "--annotations", str(ann), "--features", str(feat),
          "--model", str(model_path), "--embeddings", str(emb_path)])
    return ann, emb_path


class TestAnalysisCommands:
    def test_cluster_outputs(self, embeddings_file, tmp_path):
        ann, emb = embeddings_file
        out = tmp_path / "cluster"
        assert main(["cluster", "--embeddings", str(emb), "--annotations", str(ann),
                     "--out", str(out), "--sample", "30", "--seed", "5"]) == 0
        merges = (out / "merges.csv").read_text().splitlines()
        assert len(merges) == 1 + 29  # header + n-1 merges
        splits = json.loads((out / "splits.json").read_text())
        assert len(splits["splits"]) == 3

    def test_cluster_rerun_identical(self, embeddings_file, tmp_path):
        ann, emb = embeddings_file
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["cluster", "--embeddings", str(emb), "--annotations", str(ann),
                  "--out", str(out), "--sample", "25", "--seed", "9"])
        for path in sorted(a.iterdir()):
            assert path.read_bytes() == (b / path.name).read_bytes()

    def test_tsne_outputs(self, embeddings_file, tmp_path):
        ann, emb = embeddings_file
        out = tmp_path / "proj"
        assert main(["tsne", "--embeddings", str(emb), "--annotations", str(ann),
                     "--out", str(out), "--perplexity", "5", "--sample", "30",
                     "--seed", "4"]) == 0
        lines = (out / "projection.csv").read_text().splitlines()
        assert lines[0] == "nodule_id,x,y,malignancy"
        assert len(lines) == 1 + 30
        for line in lines[1:]:
            parts = line.split(",")
            assert len(parts) == 4
            float(parts[1]), float(parts[2])
            assert parts[3] in ("benign", "malignant")

    def test_tsne_rerun_identical(self, embeddings_file, tmp_path):
        ann, emb = embeddings_file
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["tsne", "--embeddings", str(emb), "--annotations", str(ann),
                  "--out", str(out), "--perplexity", "5", "--sample", "25",
                  "--seed", "4"])
        assert (a / "projection.csv").read_bytes() == (b / "projection.csv").read_bytes()
