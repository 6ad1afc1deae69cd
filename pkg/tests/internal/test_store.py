"""
Tests for the content-addressed ArtifactStore.
"""
import json

import pytest

from hgdlab.internal.errors import LabConfigurationError, LabIOError, LabMissingArtifactError
from hgdlab.internal.store import DIGEST_LENGTH, ArtifactStore, digest_path, digest_payload


def _publish(store, kind, alias, content):
    with store.publish(kind, alias) as publication:
        (publication.staging / "payload.txt").write_text(content, encoding="utf-8")
    return publication


@pytest.mark.unit
class TestDigests:
    def test_tree_digest_ignores_location(self, temp_dir):
        for name in ("one", "two"):
            (temp_dir / name / "sub").mkdir(parents=True)
            (temp_dir / name / "sub" / "a.txt").write_text("same", encoding="utf-8")
        assert digest_path(temp_dir / "one") == digest_path(temp_dir / "two")

    def test_tree_digest_sees_file_names(self, temp_dir):
        (temp_dir / "one").mkdir()
        (temp_dir / "two").mkdir()
        (temp_dir / "one" / "a.txt").write_text("x", encoding="utf-8")
        (temp_dir / "two" / "b.txt").write_text("x", encoding="utf-8")
        assert digest_path(temp_dir / "one") != digest_path(temp_dir / "two")

    def test_payload_digest_sorts_keys(self):
        assert digest_payload({"a": 1, "b": 2}) == digest_payload({"b": 2, "a": 1})


@pytest.mark.unit
class TestArtifactStore:
    def test_publish_layout(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        publication = _publish(store, "classifiers", "vgg4", "weights")

        assert publication.path is not None
        assert publication.path.parent == temp_dir / "classifiers"
        assert publication.path.name == f"vgg4-{publication.digest[:DIGEST_LENGTH]}"
        assert (publication.path / "payload.txt").read_text(encoding="utf-8") == "weights"
        assert not any((temp_dir / ".staging").iterdir())

    def test_same_content_same_path(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        first = _publish(store, "corpora", "corpus", "data")
        second = _publish(store, "corpora", "corpus", "data")
        assert first.path == second.path

    def test_failed_publication_leaves_nothing(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        with pytest.raises(RuntimeError):
            with store.publish("denoisers", "lgd") as publication:
                (publication.staging / "denoiser.pt").write_bytes(b"partial")
                raise RuntimeError("interrupted")

        assert not (temp_dir / "denoisers").exists()
        assert store.record("lgd") is None

    def test_invalid_alias(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        with pytest.raises(LabConfigurationError):
            with store.publish("denoisers", "a/b"):
                pass

    def test_resolve_by_alias_and_kind(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        publication = _publish(store, "denoisers", "lgd", "weights")

        assert store.resolve("lgd") == publication.path
        assert store.resolve("denoisers/lgd") == publication.path
        assert store.resolve("lgd", kind="denoisers") == publication.path
        assert store.resolve(str(publication.path)) == publication.path

    def test_republish_replaces_alias(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        _publish(store, "denoisers", "lgd", "old")
        newer = _publish(store, "denoisers", "lgd", "new")

        assert store.resolve("lgd") == newer.path
        assert [record.alias for record in store.list("denoisers")] == ["lgd"]

    def test_ambiguous_alias(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        _publish(store, "classifiers", "vgg4", "a")
        _publish(store, "evaluations", "vgg4", "b")

        with pytest.raises(LabConfigurationError, match="ambiguous"):
            store.resolve("vgg4")
        assert store.resolve("vgg4", kind="evaluations").parent.name == "evaluations"

    def test_missing_artifact(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        with pytest.raises(LabMissingArtifactError) as excinfo:
            store.resolve("nothing", kind="classifiers")

        assert str(excinfo.value).startswith("configuration: missing artifact")
        assert excinfo.value.exit_code == 2

    def test_manifest_is_stable(self, temp_dir, mock_logger):
        store = ArtifactStore(temp_dir, logger=mock_logger)
        publication = _publish(store, "classifiers", "vgg4", "weights")
        config = {"stage": "evaluate", "seed": 0}

        first = store.write_manifest("evaluate", config, {"classifier": publication.path}, {"artifact": publication.path})
        content = first.read_bytes()
        second = store.write_manifest("evaluate", config, {"classifier": publication.path}, {"artifact": publication.path})

        assert first == second
        assert second.read_bytes() == content
        assert first.parent == temp_dir / "runs"
        payload = json.loads(content)
        assert payload["inputs"]["classifier"]["digest"] == digest_path(publication.path)
        assert payload["outputs"]["artifact"] == f"classifiers/{publication.path.name}"
        assert "created_at" not in content.decode("utf-8")

    def test_root_that_is_a_file(self, temp_dir, mock_logger):
        root = temp_dir / "artifacts"
        root.write_text("not a directory", encoding="utf-8")
        with pytest.raises(LabIOError) as excinfo:
            ArtifactStore(root, logger=mock_logger)

        assert str(excinfo.value).startswith("io: cannot open artifact store")
        assert excinfo.value.exit_code == 4
