"""Exception types shared across the toolkit."""


class TrajLensError(Exception):
    """Base class for all toolkit errors."""


# --- ingestion / core types ---

class MalformedRow(TrajLensError):
    """A PLT data row could not be parsed; message carries the line number."""


class EmptyTrajectory(TrajLensError):
    """Fewer than two usable points remain."""


class OutOfRangeCoordinate(TrajLensError):
    """Longitude outside [-180, 180] or latitude outside [-90, 90]."""


class NonFiniteCoordinate(TrajLensError):
    """NaN or infinite value where a coordinate is required."""


# --- preprocessing ---

class EmptySelection(TrajLensError):
    """A filtering stage removed every trajectory."""


class TooShort(TrajLensError):
    """Trajectory does not span the prediction window preconditions."""


# --- distances ---

class EmptyInput(TrajLensError):
    """A distance metric received an empty point sequence."""


class MissingEmbeddings(TrajLensError):
    """Cosine matrix requested without embeddings for every trajectory."""


# --- embedding ---

class EmptyText(TrajLensError):
    """Embedding backend received an empty string."""


class RemoteUnavailable(TrajLensError):
    """Remote embedding endpoint failed after bounded retries."""


class DimensionMismatch(TrajLensError):
    """Vector dimensions disagree."""


class ZeroVector(TrajLensError):
    """Cosine distance is undefined for a zero-norm vector."""


class RaggedInput(TrajLensError):
    """Token vectors of unequal length cannot be pooled."""


# --- analysis ---

class ConstantInput(TrajLensError):
    """Rank correlation is undefined for a constant sequence."""


class LengthMismatch(TrajLensError):
    """Paired sequences must have equal length (>= 3)."""


class IdMismatch(TrajLensError):
    """Two labelled structures do not share the same ids in the same order."""


class TooFewItems(TrajLensError):
    """Fewer items than requested clusters."""


# --- destination ---

class TooFewPoints(TrajLensError):
    """Fewer points than mixture components."""


class DegenerateComponent(TrajLensError):
    """A mixture component lost all responsibility mass during EM."""


class UnfittedModel(TrajLensError):
    """Prediction requested before training trajectories were indexed."""


class NoValidRecords(TrajLensError):
    """No prediction record has a valid candidate."""
