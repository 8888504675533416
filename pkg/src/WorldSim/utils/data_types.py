from typing import Any


class WorldSimDict(dict):
    """Data class for WorldSim records that may be frozen after construction."""

    def __init__(self, *args, mutable: bool = True, **kwargs):
        """
        Initialize a record.

        :param mutable: Whether the object is mutable. If False, an error will be raised
            when trying to modify the object.
        """
        super().__init__(*args, **kwargs)
        self.mutable = mutable

    def __setitem__(self, __key: Any, __value: Any) -> None:
        if getattr(self, "mutable", True):
            # un-pickling does not call __init__, so mutable is not set when unpickling
            # Therefore, we need to allow for mutable not being set
            return super().__setitem__(__key, __value)
        raise TypeError("Object is immutable")

    def __delitem__(self, __key: Any) -> None:
        if getattr(self, "mutable", True):
            return super().__delitem__(__key)
        raise TypeError("Object is immutable")

    def frozen(self) -> "WorldSimDict":
        """Return an immutable copy of the record, keeping the record type."""
        return type(self)(self, mutable=False)


class FeatureRecord(WorldSimDict):
    """Per-episode features: weather, light, signal, speed/curvature bins, map cell."""


class CheckpointHeader(WorldSimDict):
    """JSON header stored next to the named arrays of a checkpoint."""
