"""Exception hierarchy shared by every stage.

The CLI maps these onto exit codes: config problems exit 1, data and
validation problems exit 2, numeric failures exit 3.
"""


class ProdnetError(Exception):
    exit_code = 2


class ConfigError(ProdnetError, ValueError):
    exit_code = 1


class SchemaError(ProdnetError, ValueError):
    pass


class EmptyTableError(ProdnetError, ValueError):
    pass


class RowError(ProdnetError, ValueError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class DuplicateKeyError(ProdnetError, ValueError):
    pass


class TopologyError(ProdnetError, ValueError):
    pass


class RegistryError(ProdnetError, KeyError):
    def __str__(self):  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ShapeError(ProdnetError, ValueError):
    pass


class CheckpointError(ProdnetError, ValueError):
    pass


class MissingArtifactError(ProdnetError, FileNotFoundError):
    pass


class NumericError(ProdnetError, ArithmeticError):
    exit_code = 3


class ValidationError(ProdnetError, ValueError):
    pass
