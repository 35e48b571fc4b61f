"""Exception types raised across the package."""


class PlausigenError(Exception):
    """Base class for all package errors."""

    kind = "error"


class SchemaError(PlausigenError):
    kind = "schema_error"


class MissingMesh(PlausigenError):
    kind = "missing_mesh"


class DegenerateGeometry(PlausigenError):
    kind = "degenerate_geometry"


class UnknownObject(PlausigenError, KeyError):
    kind = "unknown_object"

    def __str__(self):
        return f"unknown object: {self.args[0]!r}" if self.args else "unknown object"


class NoCandidates(PlausigenError):
    kind = "no_candidates"


class NotAllowed(PlausigenError):
    kind = "not_allowed"


class TransformFailed(PlausigenError):
    kind = "transform_failed"


class DegenerateCamera(PlausigenError):
    kind = "degenerate_camera"


class GenerationFailed(PlausigenError):
    kind = "generation_failed"


class InsufficientScenes(PlausigenError):
    kind = "insufficient_scenes"


class CorruptMetadata(PlausigenError):
    kind = "corrupt_metadata"
