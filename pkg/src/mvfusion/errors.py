"""Error taxonomy shared by the library and the CLI exit-code contract."""


class ValidationError(ValueError):
    """Bad parameters, violated preconditions, or structurally invalid inputs."""


class NumericalError(ArithmeticError):
    """Degenerate numerics: zero-norm embeddings, empty prompt means, etc."""
