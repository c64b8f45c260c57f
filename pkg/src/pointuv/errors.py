"""Exception hierarchy shared by the library and the command line."""


class PointUVError(Exception):
    """Base class; the CLI prints ``<ClassName>: <message>`` on one line."""


class ConfigError(PointUVError, ValueError):
    pass


class ContractError(PointUVError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class ObjParseError(PointUVError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line = line


class UnsupportedInputError(PointUVError, ValueError):
    pass


class StateError(PointUVError, RuntimeError):
    pass


class TrainingDiverged(PointUVError, RuntimeError):
    pass


class MissingArtifactError(PointUVError, FileNotFoundError):
    pass


class ContainerError(PointUVError, ValueError):
    pass
