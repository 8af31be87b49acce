"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` which the command line
prints as a prefix (``E_PARAM: ...``) before exiting nonzero.
"""


class MapfuseError(Exception):
    code = "E_MAPFUSE"


class ParameterError(MapfuseError, ValueError):
    code = "E_PARAM"


class EmptyInputError(MapfuseError, ValueError):
    code = "E_EMPTY"


class DegenerateNeighborhoodError(MapfuseError, ValueError):
    code = "E_DEGENERATE_NEIGHBORHOOD"


class InsufficientDensityError(MapfuseError, ValueError):
    code = "E_DENSITY"


class DegenerateCorrespondenceError(MapfuseError, ValueError):
    code = "E_DEGENERATE_CORRESPONDENCE"


class RegistrationFailedError(MapfuseError, RuntimeError):
    code = "E_REGISTRATION"


class DataError(MapfuseError, ValueError):
    code = "E_DATA"


class FormatError(MapfuseError, ValueError):
    code = "E_FORMAT"


class UnmergeableSessionError(MapfuseError, RuntimeError):
    code = "E_UNMERGEABLE"

    def __init__(self, sessions):
        self.sessions = sorted(sessions)
        super().__init__(
            "sessions not connected to the anchor by any verified loop closure: "
            + ",".join(str(s) for s in self.sessions)
        )


class InputMissingError(MapfuseError, FileNotFoundError):
    code = "E_IO"


class UndefinedMetricsError(MapfuseError, ValueError):
    code = "E_UNDEFINED_METRICS"


class ConfigError(MapfuseError, ValueError):
    code = "E_CONFIG"
