"""Exception types. Each carries a stable ``code`` string used by the CLI and tests."""


class CogPSGError(Exception):
    code = "ERROR"

    def __init__(self, message="", code=None):
        if code is not None:
            self.code = code
        super().__init__(f"[{self.code}] {message}" if message else self.code)


class ContainerError(CogPSGError, ValueError):
    code = "UNREADABLE"


class SignalError(CogPSGError, ValueError):
    pass


class FeatureError(CogPSGError, ValueError):
    pass


class ModelError(CogPSGError, ValueError):
    pass


class TrainingError(CogPSGError, RuntimeError):
    pass


class ConfigError(CogPSGError, ValueError):
    code = "INVALID_CONFIG"


class MissingRunError(CogPSGError, FileNotFoundError):
    code = "MISSING_RUN"
