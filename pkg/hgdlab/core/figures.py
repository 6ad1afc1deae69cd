import json
import pathlib
import typing

import hgdlab.core.base as lab_core_base
import hgdlab.internal.errors as lab_errors
import hgdlab.internal.store as lab_store
import hgdlab.lab.analysis as lab_analysis
import hgdlab.lab.plotting as lab_plotting
from hgdlab.core.runner import PROFILES_FILE, SCATTERS_FILE

if typing.TYPE_CHECKING:
    import hgdlab.client as lab_client

FIGURES_KIND = "figures"
FIGURES_ALIAS = "analysis"


class FigureReproducer(lab_core_base.LabCoreObject):
    """
    Regenerates the amplification and noise-scatter figures from stored analyses.

    Every required file is checked before anything is drawn, so a failed run
    leaves no figures behind.
    """

    def __init__(self, client: "lab_client.LabClient", store: lab_store.ArtifactStore) -> None:
        super().__init__(client)
        self.store = store

    def _missing(self) -> list[str]:
        missing: list[str] = []
        amplification = self.store.list("amplification")
        noise = self.store.list("noise")
        if not amplification:
            missing.append("amplification profiles (run analyze-amplification)")
        if not noise:
            missing.append("noise scatters (run analyze-noise)")
        for record in amplification:
            if not (record.path / PROFILES_FILE).is_file():
                missing.append(f"amplification/{record.alias}/{PROFILES_FILE}")
        for record in noise:
            summary = record.path / SCATTERS_FILE
            if not summary.is_file():
                missing.append(f"noise/{record.alias}/{SCATTERS_FILE}")
                continue
            for item in json.loads(summary.read_text(encoding="utf-8")):
                name = f"scatter-{item['condition']}.npz"
                if not (record.path / name).is_file():
                    missing.append(f"noise/{record.alias}/{name}")
        return missing

    def reproduce(self) -> list[pathlib.Path]:
        """
        Draw one profile figure per amplification artifact and one scatter
        figure per noise artifact into a ``figures`` artifact.

        Raises
        ------
        LabMissingFiguresError
            If any analysis artifact or file is missing.
        """
        missing = self._missing()
        if missing:
            raise lab_errors.LabMissingFiguresError(missing)

        names: list[str] = []

        def write(staging: pathlib.Path) -> None:
            for record in self.store.list("amplification"):
                profiles = lab_analysis.load_profiles(record.path / PROFILES_FILE)
                target = staging / f"{record.alias}-profiles.png"
                lab_plotting.plot_profiles(profiles, target, f"Error amplification ({record.alias})")
                names.append(target.name)
            for record in self.store.list("noise"):
                summary = json.loads((record.path / SCATTERS_FILE).read_text(encoding="utf-8"))
                scatters = [
                    lab_analysis.NoiseScatter.load(record.path / f"scatter-{item['condition']}.npz") for item in summary
                ]
                target = staging / f"{record.alias}-scatter.png"
                lab_plotting.plot_noise_scatters(scatters, target)
                names.append(target.name)

        with self.store.publish(FIGURES_KIND, FIGURES_ALIAS) as publication:
            write(publication.staging)
        assert publication.path is not None
        self.client.logger.log(f"{len(names)} figures written to {publication.path}", "info")
        return [publication.path / name for name in names]
