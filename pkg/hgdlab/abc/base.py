import typing


class LabABC(typing.TypedDict, total=False):
    """
    Base class for all hgd-lab config shapes.

    This class is used to define the structure of parsed YAML documents.
    """
