from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Union

import json
import os

import pandas as pd

if TYPE_CHECKING:
    from intent_rrs.simnet.simnet import Allocation, NetworkView, StepOutcome


class IntentRrsError(Exception):
    """Base class for errors raised by intent-rrs."""


class ConfigError(IntentRrsError):
    """A run configuration failed schema validation."""


class CatalogError(IntentRrsError):
    """A slice catalog file could not be parsed."""


class ScenarioError(IntentRrsError):
    """A network scenario or manifest is inconsistent."""


class GridFormatError(IntentRrsError):
    """A spectral-efficiency trace file is malformed."""


class BadMagicError(GridFormatError):
    pass


class TruncatedGridError(GridFormatError):
    pass


class DimensionOverflowError(GridFormatError):
    pass


class CheckpointError(IntentRrsError):
    """A policy checkpoint could not be read or applied."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class NonFiniteLossError(IntentRrsError):
    """A PPO update produced a non-finite loss.

    Attributes
    ----------
    diagnostic : dict
        Loss components of the offending minibatch.
    """

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = diagnostic


class RunData:
    """
    A class to represent tabular simulation output and its metadata.
    """

    def __init__(self, metadata: dict, data: Union[None, pd.DataFrame]):
        self.metadata = metadata
        self.data = data

    def write(self, path: str, name: str) -> str:
        """
        Save the data as `<name>.csv` and the metadata as
        `<name>_metadata.json` in directory `path`.

        Returns
        -------
        str
            Path of the CSV file.
        """
        os.makedirs(path, exist_ok=True)
        data_fpath = os.path.join(path, f"{name}.csv")
        self.data.to_csv(data_fpath, index=False)
        with open(os.path.join(path, f"{name}_metadata.json"), "w") as dst:
            json.dump(self.metadata, dst, indent=2, sort_keys=True)
        return data_fpath


class Controller(ABC):
    """
    An abstract class for radio resource schedulers.

    A controller decides the inter-slice and intra-slice allocation of one
    TTI from a read-only view of the network, then receives the outcome of
    that TTI.
    """

    name: str = "controller"

    @abstractmethod
    def reset(self, view: "NetworkView") -> None:
        """Prepare for a new episode."""
        pass

    @abstractmethod
    def allocate(self, view: "NetworkView") -> "Allocation":
        """Decide the allocation for the current TTI."""
        pass

    @abstractmethod
    def observe(self, outcome: "StepOutcome") -> float:
        """Receive the outcome of the TTI and return the controller reward."""
        pass
