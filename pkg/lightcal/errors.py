class LightcalError(Exception):
    """Base error. `exit_code` is what the command line returns for it."""

    exit_code = 1

    def __init__(self, detail: str) -> None:
        super().__init__(detail)
        self.detail = detail


class InputError(LightcalError):
    exit_code = 2


class GeometryError(LightcalError):
    pass


class NonConvergence(GeometryError):
    pass


class RayParallelToPlane(GeometryError):
    pass


class IntersectionBehindCamera(GeometryError):
    pass


class DegenerateQuad(GeometryError):
    pass


class RenderError(LightcalError):
    pass


class LightOnPlane(RenderError):
    pass


class ZeroDistance(RenderError):
    pass


class SolverError(LightcalError):
    pass


class InsufficientValidPixels(SolverError):
    pass


class DegenerateDataset(SolverError):
    pass
