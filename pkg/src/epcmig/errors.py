class EpcMigError(Exception):
    """Base class for all simulator errors."""


class SimulationError(EpcMigError):
    pass


class RunawayScenario(SimulationError):
    pass


class TopologyError(EpcMigError):
    pass


class CapacityError(EpcMigError):
    pass


class DecodeError(EpcMigError):
    pass


class PreconditionError(EpcMigError):
    pass


class RepairUnsupported(EpcMigError):
    """Socket state cannot be restored without a fresh connection handshake."""


class UnknownTeid(EpcMigError):
    def __init__(self, teid):
        super().__init__(f"no tunnel for TEID 0x{teid:08x}")
        self.teid = teid


class AssociationTimeout(EpcMigError):
    pass


class CorruptBlob(DecodeError):
    pass


class ConfigError(EpcMigError):
    """Invalid profile, scenario, or expectation file; ``path`` names the field."""

    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
