"""Exception hierarchy shared by all qlayer modules."""


class QuantumLayerError(Exception):
    """Base class for every error raised by qlayer."""


class ImmersionError(QuantumLayerError):
    """The parametrization degenerates (det g below tolerance)."""


class AdmissibilityError(QuantumLayerError):
    """The surface/width pair fails a hypothesis required downstream."""


class LayerSelfIntersectionRisk(AdmissibilityError):
    """sup ||B|| * a >= 1: the layer may fold or self-intersect."""


class FoldError(AdmissibilityError):
    """The volume factor J = 1 - H t + K t^2 is not positive somewhere."""


class CoverageError(QuantumLayerError):
    """A field or truncation reaches beyond the region a grid covers."""


class SandwichViolation(QuantumLayerError):
    """Numerical metric comparison fell outside its analytic bounds."""


class ConvergenceError(QuantumLayerError):
    """An iterative procedure stopped before meeting its tolerance."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class DiscretizationInconsistency(QuantumLayerError):
    """Results violate a property every consistent discretization must keep."""


class ResourceLimitError(QuantumLayerError):
    """A requested discretization exceeds the configured memory budget."""


class ZeroNormError(QuantumLayerError, ValueError):
    """A Rayleigh quotient was requested for a field of zero norm."""


class MissingResultError(QuantumLayerError):
    """A plot/export was requested for results that were never computed."""


class ConfigError(QuantumLayerError):
    """Malformed run configuration; carries the offending line or field."""

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field
