import typing

if typing.TYPE_CHECKING:
    import hgdlab.client as lab_client

"""
Module providing the LabCoreObject base class.

Every orchestration component holds the LabClient it was created by and logs
through the client's logger.
"""


class LabCoreObject:
    """
    Base class for hgd-lab core objects.

    Parameters
    ----------
    client : LabClient
        Client instance providing the logger, environment and artifact store.
    """

    def __init__(self, client: "lab_client.LabClient") -> None:
        self.client = client
        self.client.logger.log(
            message=f"Initializing {type(self).__name__}",
            log_type="debug",
        )
