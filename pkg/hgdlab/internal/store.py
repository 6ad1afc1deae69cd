import contextlib
import dataclasses
import hashlib
import json
import os
import pathlib
import shutil
import sqlite3
import tempfile
import threading
import time
import typing

import hgdlab.internal.errors as lab_errors
import hgdlab.internal.logger as lab_logger

DIGEST_LENGTH = 12
INDEX_FILE = "index.db"


@dataclasses.dataclass
class ArtifactRecord:
    """Index entry for one published artifact directory."""

    alias: str
    kind: str
    digest: str
    path: pathlib.Path
    size_bytes: int
    created_at: float

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "alias": self.alias,
            "kind": self.kind,
            "digest": self.digest,
            "path": str(self.path),
            "size_bytes": self.size_bytes,
        }


class Publication:
    """
    Handle returned by `ArtifactStore.publish`.

    Files are written into `staging`; `path` and `digest` are filled in once
    the publication context exits without error.
    """

    def __init__(self, kind: str, alias: str, staging: pathlib.Path) -> None:
        self.kind = kind
        self.alias = alias
        self.staging = staging
        self.path: pathlib.Path | None = None
        self.digest: str | None = None


def digest_path(path: pathlib.Path) -> str:
    """
    Content digest of a file or directory tree.

    sha256 over every file's relative path and bytes, visited in sorted order,
    so two trees with identical content hash identically wherever they live.
    """
    path = pathlib.Path(path)
    sha = hashlib.sha256()
    if path.is_file():
        sha.update(path.read_bytes())
        return sha.hexdigest()
    for file in sorted(p for p in path.rglob("*") if p.is_file()):
        sha.update(file.relative_to(path).as_posix().encode("utf-8"))
        sha.update(b"\0")
        sha.update(file.read_bytes())
    return sha.hexdigest()


def digest_payload(payload: typing.Any) -> str:
    """Digest of a JSON-serialisable value with sorted keys."""
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ArtifactStore:
    """
    Content-addressed artifact directories under one root, indexed by SQLite.

    Layout::

        <root>/<kind>/<alias>-<digest>/...   published artifacts
        <root>/runs/<stage>-<digest>.json    run manifests
        <root>/index.db                      alias index

    Publishing stages files in a temporary directory and renames it into place
    only after the producer finished, so readers never see partial artifacts.
    Concurrent processes must use distinct roots; no cross-process locking is done.
    """

    def __init__(
        self,
        root: pathlib.Path,
        logger: lab_logger.UniversalLogger | None = None,
    ) -> None:
        self.logger = logger or lab_logger.default_logger("ArtifactStore")
        self.root = pathlib.Path(root)
        self._staging_root = self.root / ".staging"
        self._db_path = self.root / INDEX_FILE
        self._lock = threading.RLock()
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            self._init_database()
        except (OSError, sqlite3.Error) as err:
            raise lab_errors.LabIOError(f"cannot open artifact store at {self.root}: {err}") from err
        self.logger.log(f"Artifact store at {self.root}", "debug")

    def _init_database(self) -> None:
        with sqlite3.connect(self._db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS artifacts (
                    kind TEXT NOT NULL,
                    alias TEXT NOT NULL,
                    digest TEXT NOT NULL,
                    path TEXT NOT NULL,
                    size_bytes INTEGER NOT NULL,
                    created_at REAL NOT NULL,
                    PRIMARY KEY (kind, alias)
                )
            """)
            conn.commit()

    @contextlib.contextmanager
    def publish(self, kind: str, alias: str) -> typing.Iterator[Publication]:
        """
        Stage and publish a new artifact directory.

        Parameters
        ----------
        kind : str
            Artifact family, e.g. ``"classifiers"`` or ``"corpora"``.
        alias : str
            Name later configs use to reference the artifact.

        Yields
        ------
        Publication
            Write files into ``publication.staging``.
        """
        if not alias or "/" in alias or alias.startswith("."):
            raise lab_errors.LabConfigurationError(f"invalid artifact alias {alias!r}")
        self._staging_root.mkdir(parents=True, exist_ok=True)
        staging = pathlib.Path(tempfile.mkdtemp(prefix=f"{kind}-{alias}-", dir=self._staging_root))
        publication = Publication(kind, alias, staging)
        try:
            yield publication
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise

        digest = digest_path(staging)
        target = self.root / kind / f"{alias}-{digest[:DIGEST_LENGTH]}"
        with self._lock:
            target.parent.mkdir(parents=True, exist_ok=True)
            if target.exists():
                shutil.rmtree(target)
            os.replace(staging, target)
            size = sum(p.stat().st_size for p in target.rglob("*") if p.is_file())
            with sqlite3.connect(self._db_path) as conn:
                conn.execute(
                    "INSERT OR REPLACE INTO artifacts "
                    "(kind, alias, digest, path, size_bytes, created_at) VALUES (?, ?, ?, ?, ?, ?)",
                    (kind, alias, digest, str(target.relative_to(self.root)), size, time.time()),
                )
                conn.commit()
        publication.path = target
        publication.digest = digest
        self.logger.log(f"Published {kind}/{alias} -> {target.name}", "info")

    def record(self, alias: str, kind: str | None = None) -> ArtifactRecord | None:
        """Look up the index entry for an alias, optionally restricted to a kind."""
        with self._lock, sqlite3.connect(self._db_path) as conn:
            if kind is None:
                rows = conn.execute(
                    "SELECT kind, alias, digest, path, size_bytes, created_at "
                    "FROM artifacts WHERE alias = ?",
                    (alias,),
                ).fetchall()
            else:
                rows = conn.execute(
                    "SELECT kind, alias, digest, path, size_bytes, created_at "
                    "FROM artifacts WHERE alias = ? AND kind = ?",
                    (alias, kind),
                ).fetchall()
        if not rows:
            return None
        if len(rows) > 1:
            kinds = ", ".join(sorted(r[0] for r in rows))
            raise lab_errors.LabConfigurationError(
                f"alias {alias!r} is ambiguous across kinds ({kinds}); qualify it as <kind>/{alias}"
            )
        kind_, alias_, digest, rel, size, created = rows[0]
        return ArtifactRecord(alias_, kind_, digest, self.root / rel, size, created)

    def list(self, kind: str | None = None) -> list[ArtifactRecord]:
        with self._lock, sqlite3.connect(self._db_path) as conn:
            query = "SELECT kind, alias, digest, path, size_bytes, created_at FROM artifacts"
            params: tuple[str, ...] = ()
            if kind is not None:
                query += " WHERE kind = ?"
                params = (kind,)
            rows = conn.execute(query + " ORDER BY kind, alias", params).fetchall()
        return [ArtifactRecord(k, a, d, self.root / p, s, c) for k, a, d, p, s, c in rows]

    def resolve(self, ref: str, kind: str | None = None) -> pathlib.Path:
        """
        Resolve an artifact reference to an existing path.

        A reference is an absolute path, a path relative to the store root,
        ``<kind>/<alias>`` or a bare alias.

        Raises
        ------
        LabMissingArtifactError
            If nothing on disk matches the reference.
        """
        candidate = pathlib.Path(ref)
        if candidate.is_absolute() and candidate.exists():
            return candidate
        if not candidate.is_absolute() and (self.root / candidate).exists():
            return self.root / candidate
        if "/" in ref and kind is None:
            kind, ref = ref.split("/", 1)
        record = self.record(ref, kind)
        if record is None or not record.path.exists():
            label = f"{kind}/{ref}" if kind else ref
            raise lab_errors.LabMissingArtifactError(f"{label} not found under {self.root}")
        return record.path

    def write_manifest(
        self,
        stage: str,
        resolved_config: dict[str, typing.Any],
        inputs: dict[str, pathlib.Path],
        outputs: dict[str, pathlib.Path],
    ) -> pathlib.Path:
        """
        Write the run manifest for one stage execution.

        The manifest holds the resolved config, the content digest of every
        input artifact and the output paths. It carries no timestamps.
        """
        payload = {
            "stage": stage,
            "config": resolved_config,
            "inputs": {
                name: {"path": self._relative(path), "digest": digest_path(path)}
                for name, path in sorted(inputs.items())
            },
            "outputs": {name: self._relative(path) for name, path in sorted(outputs.items())},
        }
        runs = self.root / "runs"
        runs.mkdir(parents=True, exist_ok=True)
        manifest = runs / f"{stage}-{digest_payload(payload['config'])[:DIGEST_LENGTH]}.json"
        manifest.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.logger.log(f"Run manifest written: {manifest.name}", "debug")
        return manifest

    def _relative(self, path: pathlib.Path) -> str:
        path = pathlib.Path(path)
        try:
            return path.resolve().relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(path)
