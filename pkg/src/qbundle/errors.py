"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the command line
front end can emit a structured error document.
"""


class QBundleError(Exception):
    code = "error"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        for key, val in self.details.items():
            out[key] = _plain(val)
        return out


def _plain(val):
    if isinstance(val, (list, tuple)):
        return [_plain(v) for v in val]
    if hasattr(val, "tolist"):
        return val.tolist()
    if isinstance(val, (str, int, float, bool)) or val is None:
        return val
    return str(val)


class InvalidInputError(QBundleError, ValueError):
    code = "invalid_input"


class BranchCutError(QBundleError):
    """A matrix logarithm was requested across the branch cut at -1."""

    code = "branch_cut"


class GeometricDegeneracyError(QBundleError):
    code = "geometric_degeneracy"


class DegenerateFrameError(QBundleError):
    code = "degenerate_frame"


class NotSpecialError(QBundleError):
    code = "not_special"


class AlignmentError(QBundleError, ValueError):
    code = "alignment"


class UnsupportedInputError(QBundleError):
    code = "unsupported_input"


class GeometryError(QBundleError):
    code = "geometry"


class MeshMismatchError(QBundleError):
    code = "mesh_mismatch"


class ObstructionError(QBundleError):
    """Nonzero winding or flux that blocks a global construction."""

    code = "topological_obstruction"


class PhaseStepWarning(UserWarning):
    pass


class GapError(QBundleError):
    code = "gap_closed"


class GaugeSmoothnessError(QBundleError):
    code = "gauge_not_smooth"


class NonEquivariantError(QBundleError):
    code = "non_equivariant"


class AnchorNotFoundError(QBundleError):
    code = "anchor_not_found"


class HypothesisViolationError(QBundleError):
    code = "hypothesis_violation"


class CornerReductionError(QBundleError):
    code = "corner_reduction"
