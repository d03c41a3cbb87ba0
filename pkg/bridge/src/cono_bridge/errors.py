"""Exception taxonomy for the adapter."""


class BridgeAdapterError(Exception):
    """Base for all adapter errors."""


class MessageError(BridgeAdapterError):
    """A frame could not be decoded or violates the protocol; the session
    cannot safely continue."""


class ModelError(BridgeAdapterError):
    """The model failed on one request; the session continues."""
