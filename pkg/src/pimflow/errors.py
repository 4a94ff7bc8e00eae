"""Exception types raised by the pipeline framework.

Validation errors surface at stage-add time, planning errors when a
pipeline is laid out for a device, and device errors during simulated
execution.  All inherit from PimflowError so callers can catch broadly.
"""


class PimflowError(Exception):
    """Base class for all framework errors."""


# --- stage validation -------------------------------------------------------

class RoleViolation(PimflowError):
    """An argument role is not legal for the stage kind (e.g. a Reduce
    stage without a ReduceOut, or an Output on a Reduce)."""


class GroupNotDivisible(PimflowError):
    """Group size does not evenly divide the stage input length."""


class WindowTooLarge(PimflowError):
    """Window length exceeds the stage input length and no overlap
    vector was supplied."""


class InvalidChain(PimflowError):
    """A buffer produced by a Filter or Reduce stage is consumed by a
    later stage that is not a plain Filter or Reduce.

    Data-dependent (filtered) and folded (reduced) buffers live on the
    device as ragged per-core prefixes or partial slots; only further
    filtering or reduction can consume them in place.  Use PipelineFull
    to have such chains split and executed as consecutive pipelines.
    """

    def __init__(self, buffer_name: str, producer_stage: int, consumer_kind: str):
        self.buffer_name = buffer_name
        self.producer_stage = producer_stage
        self.consumer_kind = consumer_kind
        super().__init__(
            f"buffer {buffer_name!r} produced by Filter/Reduce stage "
            f"{producer_stage} cannot feed a {consumer_kind} stage; "
            f"split the pipeline (PipelineFull) instead"
        )


class LengthMismatch(PimflowError):
    """Vector inputs of one stage disagree on length, or a stage consumes
    buffers whose lengths cannot be reconciled."""


class UnknownBuffer(PimflowError):
    """The buffer is not produced by any stage of this pipeline."""


class AlreadyExecuted(PimflowError):
    """The pipeline has already run; pipelines are single-shot."""


class NotExecuted(PimflowError):
    """Result access before execute()."""


class NotFetched(PimflowError):
    """get_length() on a buffer that was never passed to fetch()."""


# --- planning ---------------------------------------------------------------

class PlanInfeasible(PimflowError):
    """The layout planner could not fit the pipeline on the device."""


class WramTooSmall(PlanInfeasible):
    """Per-tasklet WRAM budget cannot hold even one block element."""


class MramTooSmall(PlanInfeasible):
    """Per-core MRAM cannot hold one aligned chunk of every buffer."""


class VectorTooLargeForWram(PlanInfeasible):
    """A broadcast scalar vector (e.g. the GEMV vector) exceeds the
    per-tasklet WRAM budget; the whole vector must fit."""


class MissingOverlapVector(PimflowError):
    """A window+group stage requires an overlap vector (the formula
    looks ahead a full window past the last group) but none was given."""


# --- device -----------------------------------------------------------------

class DeviceError(PimflowError):
    """Simulated device misuse (double acquisition, bad handle)."""


class AlignmentViolation(DeviceError):
    """A DMA transfer breaks the 8-byte offset/size alignment rule or
    the 8..2048 byte size window."""


class OutOfMram(DeviceError):
    """A transfer addresses bytes outside the declared MRAM regions."""


class OutOfWram(DeviceError):
    """A staging copy addresses bytes outside the tasklet WRAM budget."""


class KernelFault(PimflowError):
    """A user kernel raised or returned malformed data."""


class CountOverflow(DeviceError):
    """A filter output count header exceeds its region capacity."""
