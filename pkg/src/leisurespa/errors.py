"""Exception hierarchy shared by all modules.

Every error carries a locator (file, row, trip id, equation name) in its
message so a failed run can be traced back to the offending input.
"""


class SpaError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


# ---- ingest -----------------------------------------------------------------


class IngestError(SpaError):
    exit_code = 2


class MissingTable(IngestError):
    exit_code = 3

    def __init__(self, table, location=None):
        self.table = table
        where = f" in {location}" if location else ""
        super().__init__(f"missing required table {table!r}{where}")


class DanglingReference(IngestError):
    exit_code = 4

    def __init__(self, ref_id, kind="", where=""):
        self.ref_id = ref_id
        msg = f"dangling reference {ref_id!r}"
        if kind:
            msg += f" (unknown {kind})"
        if where:
            msg += f" at {where}"
        super().__init__(msg)


class NonMonotoneStopTimes(IngestError):
    exit_code = 5

    def __init__(self, trip_id, detail=""):
        self.trip_id = trip_id
        super().__init__(f"non-monotone stop_times in trip {trip_id!r}{': ' + detail if detail else ''}")


class BadWeight(IngestError):
    exit_code = 6


class UnknownLevel(IngestError):
    exit_code = 7


class MissingAnchor(IngestError):
    exit_code = 8


class BadCoordinate(IngestError):
    exit_code = 9


class BadValue(IngestError):
    """Malformed field that is not covered by a more specific error."""

    exit_code = 10


# ---- spatial ----------------------------------------------------------------


class OutOfBounds(SpaError):
    exit_code = 11


class UnknownCell(SpaError):
    exit_code = 12


# ---- router -----------------------------------------------------------------


class NoServiceOnDate(SpaError):
    exit_code = 13


class SnapFailure(SpaError):
    exit_code = 14


# ---- behavior ---------------------------------------------------------------


class EmptyFeasibleSet(SpaError):
    exit_code = 15


class EmptyVisits(SpaError):
    exit_code = 16


# ---- pathmodel --------------------------------------------------------------


class CyclicGraph(SpaError):
    exit_code = 17


class SingularDesign(SpaError):
    exit_code = 18

    def __init__(self, equation, detail=""):
        self.equation = equation
        super().__init__(f"singular design in equation for {equation!r}{': ' + detail if detail else ''}")


class MissingPath(SpaError):
    exit_code = 19


class ModelSyntaxError(SpaError):
    exit_code = 20
