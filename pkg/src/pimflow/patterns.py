"""Pattern vocabulary: kinds, element types, argument roles, kernels.

A stage applies one data-parallel pattern to typed vector arguments.
The nine kinds combine three orthogonal features on top of Map/Reduce:

* window  -- each invocation sees ``w`` consecutive elements and the
  cursor advances by one, so invocation ``i`` reads ``x[i .. i+w-1]``.
* group   -- each invocation sees ``g`` consecutive elements and the
  cursor advances by ``g``; ``g`` must divide the input length.
* filter  -- a predicate decides per invocation whether the produced
  element is kept; kept elements stay in input order.

Window+group looks ahead a full window past each group: invocation ``n``
reads ``x[n*g .. n*g + g + w - 1]``, so it always needs an overlap
vector of ``w`` extra elements after the last group.

Kernels are batch functions over numpy views (see KernelSpec).  The
host-side reference semantics live in :func:`apply_pattern_host`; the
simulated device must match it bit for bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import KernelFault, MissingOverlapVector, RoleViolation


class PatternKind(enum.Enum):
    MAP = "map"
    REDUCE = "reduce"
    FILTER = "filter"
    WINDOW = "window"
    GROUP = "group"
    WINDOW_GROUP = "window_group"
    WINDOW_FILTER = "window_filter"
    GROUP_FILTER = "group_filter"
    WINDOW_GROUP_FILTER = "window_group_filter"


WINDOW_KINDS = frozenset({
    PatternKind.WINDOW,
    PatternKind.WINDOW_GROUP,
    PatternKind.WINDOW_FILTER,
    PatternKind.WINDOW_GROUP_FILTER,
})

GROUP_KINDS = frozenset({
    PatternKind.GROUP,
    PatternKind.WINDOW_GROUP,
    PatternKind.GROUP_FILTER,
    PatternKind.WINDOW_GROUP_FILTER,
})

FILTER_KINDS = frozenset({
    PatternKind.FILTER,
    PatternKind.WINDOW_FILTER,
    PatternKind.GROUP_FILTER,
    PatternKind.WINDOW_GROUP_FILTER,
})

# Kinds that may consume a buffer produced by a Filter or Reduce stage.
# Filtered data lives on each core as a ragged prefix of unknown length
# and reduced data as partial slots, so only element-local consumers
# (plain filtering or reduction) can run over them in place; anything
# window- or group-shaped would need data that sits on another core.
CHAINABLE_AFTER_FILTER_REDUCE = frozenset({PatternKind.FILTER, PatternKind.REDUCE})

_DTYPES = {
    "u8": np.uint8, "u16": np.uint16, "u32": np.uint32, "u64": np.uint64,
    "i8": np.int8, "i16": np.int16, "i32": np.int32, "i64": np.int64,
}

_VALID_SIZES = (1, 2, 4, 8)


@dataclass(frozen=True)
class ElemType:
    """Element type of a buffer: a name and its size in bytes (1/2/4/8)."""

    name: str
    size_bytes: int

    def __post_init__(self) -> None:
        if self.size_bytes not in _VALID_SIZES:
            raise ValueError(f"element size must be one of {_VALID_SIZES}, "
                             f"got {self.size_bytes}")

    @property
    def dtype(self) -> np.dtype:
        try:
            return np.dtype(_DTYPES[self.name])
        except KeyError:
            raise ValueError(f"no numpy dtype registered for {self.name!r}")

    @staticmethod
    def from_dtype(dt) -> "ElemType":
        dt = np.dtype(dt)
        for name, npdt in _DTYPES.items():
            if np.dtype(npdt) == dt:
                return ElemType(name, dt.itemsize)
        raise ValueError(f"unsupported dtype {dt}")


U8 = ElemType("u8", 1)
U16 = ElemType("u16", 2)
U32 = ElemType("u32", 4)
U64 = ElemType("u64", 8)
I32 = ElemType("i32", 4)
I64 = ElemType("i64", 8)


class ArgRole(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    INOUT = "inout"
    SCALAR = "scalar"
    REDUCE_OUT = "reduce_out"
    COMBINE = "combine"


VECTOR_ROLES = frozenset({ArgRole.INPUT, ArgRole.OUTPUT, ArgRole.INOUT})


_anon_counter = [0]


class Buffer:
    """Opaque host-buffer handle.

    Carries an optional host array.  Buffers used purely for
    intermediate data between stages never need host storage; only
    pipeline inputs and Scalar arguments must bring data, and fetched
    results are materialized by execute().
    """

    __slots__ = ("name", "elem", "data")

    def __init__(self, name: Optional[str] = None,
                 elem: Optional[ElemType] = None,
                 data: Optional[np.ndarray] = None):
        if name is None:
            _anon_counter[0] += 1
            name = f"buf{_anon_counter[0]}"
        if data is not None:
            data = np.ascontiguousarray(data)
            inferred = ElemType.from_dtype(data.dtype)
            if elem is None:
                elem = inferred
            elif elem != inferred:
                raise ValueError(f"buffer {name!r}: elem {elem} does not "
                                 f"match array dtype {data.dtype}")
        self.name = name
        self.elem = elem
        self.data = data

    @staticmethod
    def from_array(name: str, arr) -> "Buffer":
        return Buffer(name, data=np.asarray(arr))

    def __repr__(self) -> str:
        n = "-" if self.data is None else len(self.data)
        return f"Buffer({self.name!r}, {self.elem.name if self.elem else '?'}, n={n})"


@dataclass(frozen=True)
class ArgSpec:
    """One stage argument: a role, an element type and a buffer handle.

    reduce_width is 1 for scalar reductions and >1 for vector ones
    (e.g. a histogram); it is meaningful only on ReduceOut arguments.
    Combine arguments carry a binary host function instead of a buffer.
    """

    role: ArgRole
    elem: Optional[ElemType] = None
    buffer: Optional[Buffer] = None
    reduce_width: int = 1
    combine: Optional[Callable] = None

    def __post_init__(self):
        if self.role is ArgRole.COMBINE:
            if self.combine is None:
                raise RoleViolation("Combine argument needs a binary callable")
        else:
            if self.buffer is None:
                raise RoleViolation(f"{self.role.value} argument needs a buffer")
            elem = self.elem
            if elem is None and self.buffer.elem is not None:
                object.__setattr__(self, "elem", self.buffer.elem)
            elif elem is not None and self.buffer.elem is None:
                self.buffer.elem = elem
            elif elem is not None and self.buffer.elem is not None:
                if elem != self.buffer.elem:
                    raise RoleViolation(
                        f"buffer {self.buffer.name!r} is {self.buffer.elem}, "
                        f"argument declares {elem}")
            if self.elem is None:
                raise RoleViolation(
                    f"element type unknown for buffer {self.buffer.name!r}")
        if self.reduce_width < 1:
            raise RoleViolation("reduce_width must be >= 1")


def arg(role: ArgRole, buffer: Optional[Buffer] = None,
        elem: Optional[ElemType] = None, reduce_width: int = 1,
        combine: Optional[Callable] = None) -> ArgSpec:
    """Shorthand constructor used throughout tests and benchmarks."""
    return ArgSpec(role=role, elem=elem, buffer=buffer,
                   reduce_width=reduce_width, combine=combine)


@dataclass(frozen=True)
class KernelSpec:
    """A pure batch kernel plus an optional predicate.

    apply(*views) receives one view per non-Combine argument, in
    argument order:

    * Input      read-only view; shape (n,) when the slot is a single
                 element, (n, slot) for window/group kinds.
    * Output     writable (n,) array the kernel must fill.
    * InOut      writable (n,) array pre-filled with current contents.
    * Scalar     the whole scalar buffer, read-only.
    * ReduceOut  writable (reduce_width,) accumulator; apply must fold
                 every invocation of the batch into it.  Accumulators
                 start at zero on the device, so zero must act as the
                 fold identity (true for sums, xor, max on unsigned).

    predicate(*views) is called after apply with the same views (so it
    may inspect produced outputs) and returns a boolean mask of shape
    (n,): True keeps invocation i.  Present only on filter kinds.

    apply and predicate must be pure and total over their views; the
    same views must always produce the same bytes.  cost_hint is the
    modeled device cycle count per invocation; None falls back to the
    cost model default (20).
    """

    kernel_id: str
    apply: Callable
    predicate: Optional[Callable] = None
    cost_hint: Optional[int] = None


@dataclass(frozen=True)
class DataDependent:
    """Marker for lengths known only after execution (filter outputs).

    upper_bound is the length the stage would produce if every
    invocation were kept.
    """

    upper_bound: int


def kind_geometry(kind: PatternKind, w: Optional[int], g: Optional[int]):
    """Return (slot, advance, lookahead) element counts for one kind.

    slot: elements each invocation reads from a vector input.
    advance: cursor step between invocations.
    lookahead: elements staged beyond an invocation's base position,
    i.e. slot - advance; this is what neighbours must overlap by.
    """
    win = kind in WINDOW_KINDS
    grp = kind in GROUP_KINDS
    if win and (w is None or w < 1):
        raise RoleViolation(f"{kind.value} requires w >= 1")
    if grp and (g is None or g < 1):
        raise RoleViolation(f"{kind.value} requires g >= 1")
    if grp and win:
        return g + w, g, w
    if grp:
        return g, g, 0
    if win:
        return w, 1, w - 1
    return 1, 1, 0


def output_length(kind: PatternKind, n: int, w: Optional[int] = None,
                  g: Optional[int] = None, overlap_provided: bool = False,
                  reduce_width: int = 1):
    """Output length of one stage over an input of length n.

    Filter kinds return a DataDependent marker whose upper bound is the
    corresponding non-filter length.  WindowGroup kinds always need an
    overlap vector: the last group's window would read past the input.
    """
    if n < 0:
        raise ValueError("negative length")
    if kind is PatternKind.REDUCE:
        return reduce_width
    slot, adv, lookahead = kind_geometry(kind, w, g)
    if kind in GROUP_KINDS and n % adv != 0:
        raise ValueError(f"group size {adv} does not divide {n}")
    if kind in WINDOW_KINDS and kind in GROUP_KINDS and not overlap_provided:
        raise MissingOverlapVector(
            f"{kind.value} looks ahead {lookahead} elements past the last "
            f"group; supply an overlap vector of {lookahead} elements")
    if overlap_provided or lookahead == 0:
        base = n // adv
    else:
        base = max(0, n - lookahead) // adv
    if kind in FILTER_KINDS:
        return DataDependent(upper_bound=base)
    return base


def validate_stage_args(kind: PatternKind, args: Sequence[ArgSpec],
                        kernel: KernelSpec) -> None:
    """Check role legality for one stage; raises RoleViolation.

    Rules: Reduce stages carry exactly one ReduceOut, at least one
    Input, no Output/InOut, and an explicit Combine whenever the
    default fold cannot reconstruct one (vector width, several inputs,
    or scalars in the apply signature).  All other kinds carry at least
    one Input and at least one Output (InOut counts, but InOut is legal
    only on Map: filters relocate elements and window/group kinds read
    neighbouring slots, so in-place update is ill-defined there).
    Predicates appear exactly on filter kinds.
    """
    roles = [a.role for a in args]
    n_in = roles.count(ArgRole.INPUT)
    n_out = roles.count(ArgRole.OUTPUT)
    n_inout = roles.count(ArgRole.INOUT)
    n_red = roles.count(ArgRole.REDUCE_OUT)
    n_comb = roles.count(ArgRole.COMBINE)
    n_scal = roles.count(ArgRole.SCALAR)

    if n_in < 1:
        raise RoleViolation(f"{kind.value} stage needs at least one Input")
    if n_comb > 1:
        raise RoleViolation("at most one Combine argument")

    if kind is PatternKind.REDUCE:
        if n_red != 1:
            raise RoleViolation("Reduce stage needs exactly one ReduceOut")
        if n_out or n_inout:
            raise RoleViolation("Reduce stage cannot carry Output/InOut")
        red = next(a for a in args if a.role is ArgRole.REDUCE_OUT)
        has_comb = n_comb == 1 or red.combine is not None
        if not has_comb and (red.reduce_width > 1 or n_in > 1 or n_scal > 0):
            raise RoleViolation(
                "Reduce needs an explicit Combine unless it folds a single "
                "scalar-width input (the default combine re-feeds partials "
                "through apply, which only works in that shape)")
    else:
        if n_red:
            raise RoleViolation(f"ReduceOut is only legal on Reduce stages")
        if n_comb:
            raise RoleViolation("Combine is only legal on Reduce stages")
        if n_out + n_inout < 1:
            raise RoleViolation(f"{kind.value} stage needs an Output or InOut")
        if n_inout and kind is not PatternKind.MAP:
            raise RoleViolation("InOut is only legal on Map stages")
        if kind in FILTER_KINDS and n_out != 1:
            raise RoleViolation("filter kinds need exactly one Output")

    if kind in FILTER_KINDS:
        if kernel.predicate is None:
            raise RoleViolation(f"{kind.value} kernel needs a predicate")
    elif kernel.predicate is not None:
        raise RoleViolation(f"{kind.value} kernel must not carry a predicate")


def invocation_views(vec: np.ndarray, slot: int, advance: int, n_inv: int):
    """Strided read view over one staged vector: (n_inv,) when slot is 1,
    else (n_inv, slot) sliding windows advancing by ``advance``."""
    if slot == 1:
        return vec[:n_inv]
    if n_inv == 0:
        return np.empty((0, slot), dtype=vec.dtype)
    need = (n_inv - 1) * advance + slot
    if need > len(vec):
        raise KernelFault(f"staged vector too short: need {need}, have {len(vec)}")
    return sliding_window_view(vec[:need], slot)[::advance]


def _readonly(view: np.ndarray) -> np.ndarray:
    v = view.view()
    v.flags.writeable = False
    return v


def run_kernel_batch(kind: PatternKind, kernel: KernelSpec,
                     args: Sequence[ArgSpec], views: Sequence,
                     n_inv: int) -> Optional[np.ndarray]:
    """Invoke apply (and the predicate) over pre-built views.

    views must be aligned with args (None at Combine positions).
    Returns the boolean keep mask for filter kinds, None otherwise.
    """
    passed = [v for a, v in zip(args, views) if a.role is not ArgRole.COMBINE]
    try:
        kernel.apply(*passed)
    except Exception as exc:  # noqa: BLE001 - user code boundary
        raise KernelFault(f"kernel {kernel.kernel_id!r} apply raised: {exc!r}") from exc
    if kind not in FILTER_KINDS:
        return None
    try:
        mask = np.asarray(kernel.predicate(*passed))
    except Exception as exc:  # noqa: BLE001
        raise KernelFault(f"kernel {kernel.kernel_id!r} predicate raised: "
                          f"{exc!r}") from exc
    if mask.shape != (n_inv,) or mask.dtype != np.bool_:
        mask = mask.astype(bool, copy=False).reshape(-1)
        if mask.shape != (n_inv,):
            raise KernelFault(
                f"predicate of {kernel.kernel_id!r} returned shape "
                f"{mask.shape}, expected ({n_inv},)")
    return mask


def apply_pattern_host(kind: PatternKind, kernel: KernelSpec,
                       args: Sequence[ArgSpec], values: Sequence,
                       w: Optional[int] = None, g: Optional[int] = None,
                       overlap: Optional[np.ndarray] = None) -> list:
    """Reference host semantics of one stage; the oracle for the device.

    values is aligned with args: arrays for Input/InOut/Scalar, the
    initial accumulator for ReduceOut, None for Output and Combine.
    Returns a list aligned with args holding the produced array at each
    Output/InOut/ReduceOut position and None elsewhere.  Filter kinds
    return only the kept elements, in input order.
    """
    slot, adv, lookahead = kind_geometry(kind, w, g)
    lengths = {len(values[i]) for i, a in enumerate(args)
               if a.role in (ArgRole.INPUT, ArgRole.INOUT)}
    if len(lengths) > 1:
        raise KernelFault(f"vector inputs disagree on length: {sorted(lengths)}")
    n = lengths.pop() if lengths else 0

    if lookahead > 0 and overlap is None and kind in GROUP_KINDS:
        raise MissingOverlapVector(f"{kind.value} requires an overlap vector")
    if overlap is not None and lookahead > 0 and len(overlap) < lookahead:
        raise MissingOverlapVector(
            f"overlap vector too short: need {lookahead}, have {len(overlap)}")

    if lookahead == 0 or overlap is not None:
        n_inv = n // adv
    else:
        n_inv = max(0, n - lookahead) // adv

    views: list = []
    outputs: list = [None] * len(args)
    for i, a in enumerate(args):
        if a.role is ArgRole.COMBINE:
            views.append(None)
        elif a.role is ArgRole.SCALAR:
            views.append(_readonly(np.ascontiguousarray(values[i])))
        elif a.role is ArgRole.REDUCE_OUT:
            acc = np.array(values[i], dtype=a.elem.dtype, copy=True).reshape(-1)
            if len(acc) != a.reduce_width:
                raise KernelFault(f"initial accumulator length {len(acc)} != "
                                  f"reduce_width {a.reduce_width}")
            outputs[i] = acc
            views.append(acc)
        elif a.role is ArgRole.OUTPUT:
            out = np.zeros(n_inv, dtype=a.elem.dtype)
            outputs[i] = out
            views.append(out)
        elif a.role is ArgRole.INOUT:
            buf = np.array(values[i], dtype=a.elem.dtype, copy=True)[:n_inv]
            outputs[i] = buf
            views.append(buf)
        else:  # INPUT
            vec = np.ascontiguousarray(values[i], dtype=a.elem.dtype)
            if lookahead > 0 and overlap is not None:
                vec = np.concatenate([vec, np.asarray(overlap,
                                                      dtype=a.elem.dtype)[:lookahead]])
            views.append(_readonly(invocation_views(vec, slot, adv, n_inv)))

    mask = run_kernel_batch(kind, kernel, args, views, n_inv)
    if mask is not None:
        for i, a in enumerate(args):
            if a.role is ArgRole.OUTPUT:
                outputs[i] = outputs[i][mask]
    return outputs


def default_combine(kernel: KernelSpec, spec: ArgSpec) -> Callable:
    """Binary combine for width-1, single-input reductions: re-feed one
    partial through apply as a one-element batch."""
    def combine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        acc = np.array(a, copy=True).reshape(-1)
        kernel.apply(acc, _readonly(np.asarray(b).reshape(-1)))
        return acc
    return combine
