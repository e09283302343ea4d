"""Exception types shared across the package."""


class BotgraphError(Exception):
    """Base class for all botgraph errors."""


# --- log parsing / sessionization ---

class MalformedLine(BotgraphError):
    """A log line could not be parsed in the declared format."""


class MissingField(MalformedLine):
    """A parseable line lacks a required field (timestamp / url / client key)."""


# --- configuration ---

class ConfigInvalid(BotgraphError):
    """A generator or training configuration violates its invariants."""


# --- graph ---

class DuplicateSession(BotgraphError):
    """Session key already present in the graph."""


class UnknownNode(BotgraphError):
    """Node id or key not present in the graph."""


# --- numerics / model ---

class ShapeMismatch(BotgraphError):
    """Array shapes are inconsistent with the layer or optimizer state."""


class EmptyBatch(BotgraphError):
    """A loss was requested over zero examples."""


class NonDeterministicClosure(BotgraphError):
    """Two identical forward passes disagreed during a gradient check."""


class NoPositiveLabels(BotgraphError):
    """Training labels contain no positive class; class weights are undefined."""


class MissingFeatures(BotgraphError):
    """A forward pass referenced a node with no feature row."""


# --- evaluation ---

class SingleClass(BotgraphError):
    """A ranking metric was requested with only one class present."""


class FoldTooSmall(BotgraphError):
    """A cross-validation fold lacks one of the classes."""


# --- checkpoints ---

class SchemaVersionMismatch(BotgraphError):
    """Checkpoint was written with an unsupported schema version."""


class CorruptCheckpoint(BotgraphError):
    """Checkpoint failed to parse or its content digest does not match."""


# --- experiments ---

class UnknownBotId(BotgraphError):
    """A perturbation targeted a node that is not a session node."""


class LabelLeak(BotgraphError):
    """Labels were read while the cold-start leak guard was active."""


# --- service ---

class BadPayload(BotgraphError):
    """Scoring request body is malformed (400-class)."""


class ModelUnavailable(BotgraphError):
    """No model checkpoint is loaded (503-class)."""
