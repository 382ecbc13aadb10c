"""Exception hierarchy shared by all vehsec modules."""


class VehsecError(Exception):
    """Base class for every error raised by the library."""


class ParseError(VehsecError):
    def __init__(self, message, source="<string>", line=None, column=None):
        self.source = source
        self.line = line
        self.column = column
        where = source
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


class ValidationError(VehsecError):
    pass


class SchemaError(VehsecError):
    pass


class InsufficientSamples(VehsecError):
    pass


class ZeroPeriod(VehsecError):
    pass


class EmptySeries(VehsecError):
    pass


class EmptyObservation(VehsecError):
    pass


class InvalidStrength(VehsecError):
    pass


class OutOfRange(VehsecError):
    pass


class TargetUnknown(VehsecError):
    pass


class EmptyVariantSet(VehsecError):
    pass


class NoPath(VehsecError):
    pass


class UnknownComponent(VehsecError):
    pass


class Infeasible(VehsecError):
    pass


class CatalogTooLarge(VehsecError):
    pass


class AdapterError(VehsecError):
    def __init__(self, vector, cause):
        self.vector = vector
        self.cause = cause
        super().__init__(f"adapter failed on vector {'->'.join(vector.element_ids)}: {cause!r}")
