class ShapeError(ValueError):
    """Operand extents do not line up."""


class WindowTooShortError(ValueError):
    """Input window has fewer frames than the model's receptive field."""

    def __init__(self, got: int, need: int):
        super().__init__(
            f"window shorter than receptive field: {got} frames < {need}")
        self.got = got
        self.need = need


class ConfigError(ValueError):
    """Invalid run configuration; maps to CLI exit code 2."""


class DivergenceError(RuntimeError):
    """Training produced non-finite values."""
