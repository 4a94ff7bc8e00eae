import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pimflow.errors import (KernelFault, MissingOverlapVector, RoleViolation)
from pimflow.patterns import (ArgRole, ArgSpec, Buffer, DataDependent,
                              ElemType, KernelSpec, PatternKind, U8, U32, U64,
                              apply_pattern_host, arg, default_combine,
                              invocation_views, kind_geometry, output_length,
                              run_kernel_batch, validate_stage_args)

M32 = 0xFFFFFFFF


def add_kernel():
    def _apply(a, b, c):
        np.add(a, b, out=c)
    return KernelSpec("add", _apply)


def copy_even_kernel():
    def _apply(x, y):
        y[:] = x

    def _pred(x, y):
        return (x & np.uint32(1)) == 0
    return KernelSpec("copy_even", _apply, predicate=_pred)


def window_sum_kernel(predicate=False):
    def _apply(xw, y):
        y[:] = xw.sum(axis=1, dtype=np.uint32)

    def _pred(xw, y):
        return (y & np.uint32(1)) == 0
    return KernelSpec("wsum", _apply, predicate=_pred if predicate else None)


def sum_reduce_kernel():
    def _apply(acc, x):
        acc[0] = np.uint32((int(acc[0]) + int(x.sum(dtype=np.uint64))) & M32)
    return KernelSpec("rsum", _apply)


# --- element types and buffers ------------------------------------------------

def test_elem_type_known_sizes():
    assert U32.size_bytes == 4 and U32.dtype == np.dtype(np.uint32)
    assert U8.size_bytes == 1 and U64.size_bytes == 8


def test_elem_type_rejects_odd_sizes():
    with pytest.raises(ValueError):
        ElemType("u24", 3)


@pytest.mark.parametrize("dt", [np.uint8, np.uint16, np.uint32, np.uint64,
                                np.int8, np.int16, np.int32, np.int64])
def test_elem_type_from_dtype_round_trip(dt):
    et = ElemType.from_dtype(dt)
    assert et.dtype == np.dtype(dt)
    assert et.size_bytes == np.dtype(dt).itemsize


def test_elem_type_from_dtype_rejects_float():
    with pytest.raises(ValueError):
        ElemType.from_dtype(np.float32)


def test_buffer_auto_names_are_unique():
    a, b = Buffer(elem=U32), Buffer(elem=U32)
    assert a.name != b.name


def test_buffer_infers_elem_from_data():
    b = Buffer("x", data=np.zeros(4, np.uint16))
    assert b.elem == ElemType("u16", 2)


def test_buffer_rejects_elem_dtype_conflict():
    with pytest.raises(ValueError):
        Buffer("x", elem=U32, data=np.zeros(4, np.uint64))


# --- argument specs -------------------------------------------------------------

def test_argspec_elem_flows_from_buffer():
    b = Buffer("x", data=np.zeros(4, np.uint32))
    assert arg(ArgRole.INPUT, b).elem == U32


def test_argspec_elem_flows_to_buffer():
    b = Buffer("y")
    arg(ArgRole.OUTPUT, b, elem=U32)
    assert b.elem == U32


def test_argspec_elem_conflict_raises():
    b = Buffer("x", elem=U64)
    with pytest.raises(RoleViolation):
        arg(ArgRole.INPUT, b, elem=U32)


def test_argspec_requires_buffer_or_combine():
    with pytest.raises(RoleViolation):
        ArgSpec(role=ArgRole.INPUT)
    with pytest.raises(RoleViolation):
        ArgSpec(role=ArgRole.COMBINE)
    with pytest.raises(RoleViolation):
        ArgSpec(role=ArgRole.INPUT, buffer=Buffer("x"))  # no elem anywhere
    with pytest.raises(RoleViolation):
        arg(ArgRole.REDUCE_OUT, Buffer("s", elem=U32), reduce_width=0)


# --- geometry -------------------------------------------------------------------

@pytest.mark.parametrize("kind,w,g,expect", [
    (PatternKind.MAP, None, None, (1, 1, 0)),
    (PatternKind.REDUCE, None, None, (1, 1, 0)),
    (PatternKind.FILTER, None, None, (1, 1, 0)),
    (PatternKind.WINDOW, 4, None, (4, 1, 3)),
    (PatternKind.WINDOW_FILTER, 2, None, (2, 1, 1)),
    (PatternKind.GROUP, None, 8, (8, 8, 0)),
    (PatternKind.GROUP_FILTER, None, 3, (3, 3, 0)),
    (PatternKind.WINDOW_GROUP, 2, 4, (6, 4, 2)),
    (PatternKind.WINDOW_GROUP_FILTER, 3, 2, (5, 2, 3)),
])
def test_kind_geometry_table(kind, w, g, expect):
    assert kind_geometry(kind, w, g) == expect


@given(w=st.integers(1, 64), g=st.integers(1, 64))
def test_lookahead_is_slot_minus_advance(w, g):
    for kind in PatternKind:
        kw = w if "window" in kind.value else None
        kg = g if "group" in kind.value else None
        slot, adv, look = kind_geometry(kind, kw, kg)
        assert look == slot - adv
        assert slot >= 1 and adv >= 1


def test_kind_geometry_requires_parameters():
    with pytest.raises(RoleViolation):
        kind_geometry(PatternKind.WINDOW, None, None)
    with pytest.raises(RoleViolation):
        kind_geometry(PatternKind.GROUP, None, 0)


# --- output lengths --------------------------------------------------------------

def test_output_length_per_kind():
    assert output_length(PatternKind.MAP, 10) == 10
    assert output_length(PatternKind.WINDOW, 10, w=3) == 8
    assert output_length(PatternKind.WINDOW, 10, w=3, overlap_provided=True) == 10
    assert output_length(PatternKind.GROUP, 10, g=5) == 2
    assert output_length(PatternKind.WINDOW_GROUP, 10, w=3, g=5,
                         overlap_provided=True) == 2
    assert output_length(PatternKind.REDUCE, 10, reduce_width=7) == 7
    dd = output_length(PatternKind.FILTER, 10)
    assert isinstance(dd, DataDependent) and dd.upper_bound == 10
    dd = output_length(PatternKind.WINDOW_FILTER, 10, w=4)
    assert dd.upper_bound == 7
    dd = output_length(PatternKind.GROUP_FILTER, 10, g=2)
    assert dd.upper_bound == 5


def test_output_length_group_must_divide():
    with pytest.raises(ValueError):
        output_length(PatternKind.GROUP, 10, g=3)


def test_output_length_window_group_needs_overlap():
    with pytest.raises(MissingOverlapVector):
        output_length(PatternKind.WINDOW_GROUP, 10, w=2, g=5)


def test_output_length_rejects_negative():
    with pytest.raises(ValueError):
        output_length(PatternKind.MAP, -1)


# --- stage argument validation ----------------------------------------------------

def _io(kind=U32):
    return arg(ArgRole.INPUT, Buffer(elem=kind)), arg(ArgRole.OUTPUT,
                                                      Buffer(elem=kind))


def test_map_needs_input_and_output():
    i, o = _io()
    validate_stage_args(PatternKind.MAP, [i, o], add_kernel())
    with pytest.raises(RoleViolation):
        validate_stage_args(PatternKind.MAP, [o], add_kernel())
    with pytest.raises(RoleViolation):
        validate_stage_args(PatternKind.MAP, [i], add_kernel())


def test_inout_only_on_map():
    io = arg(ArgRole.INOUT, Buffer(elem=U32))
    i, _ = _io()
    validate_stage_args(PatternKind.MAP, [i, io], add_kernel())
    with pytest.raises(RoleViolation):
        validate_stage_args(PatternKind.WINDOW, [i, io], window_sum_kernel())
    with pytest.raises(RoleViolation):
        validate_stage_args(PatternKind.GROUP, [i, io], window_sum_kernel())


def test_reduce_role_rules():
    i, o = _io()
    red = arg(ArgRole.REDUCE_OUT, Buffer(elem=U32))
    validate_stage_args(PatternKind.REDUCE, [red, i], sum_reduce_kernel())
    with pytest.raises(RoleViolation):  # two accumulators
        validate_stage_args(PatternKind.REDUCE, [red, red, i],
                            sum_reduce_kernel())
    with pytest.raises(RoleViolation):  # no accumulator
        validate_stage_args(PatternKind.REDUCE, [i], sum_reduce_kernel())
    with pytest.raises(RoleViolation):  # vector output on a fold
        validate_stage_args(PatternKind.REDUCE, [red, i, o],
                            sum_reduce_kernel())
    with pytest.raises(RoleViolation):  # accumulator outside reduce
        validate_stage_args(PatternKind.MAP, [i, o, red], add_kernel())


def test_reduce_combine_requirements():
    i, _ = _io()
    comb = arg(ArgRole.COMBINE, combine=lambda a, b: a)
    wide = arg(ArgRole.REDUCE_OUT, Buffer(elem=U32), reduce_width=4)
    with pytest.raises(RoleViolation):  # wide fold, no combine anywhere
        validate_stage_args(PatternKind.REDUCE, [wide, i], sum_reduce_kernel())
    validate_stage_args(PatternKind.REDUCE, [wide, i, comb],
                        sum_reduce_kernel())
    inline = arg(ArgRole.REDUCE_OUT, Buffer(elem=U32), reduce_width=4,
                 combine=lambda a, b: a)
    validate_stage_args(PatternKind.REDUCE, [inline, i], sum_reduce_kernel())
    narrow = arg(ArgRole.REDUCE_OUT, Buffer(elem=U32))
    i2 = arg(ArgRole.INPUT, Buffer(elem=U32))
    with pytest.raises(RoleViolation):  # several inputs need a combine
        validate_stage_args(PatternKind.REDUCE, [narrow, i, i2],
                            sum_reduce_kernel())
    scal = arg(ArgRole.SCALAR, Buffer("s", data=np.zeros(2, np.uint32)))
    with pytest.raises(RoleViolation):  # scalar in the fold needs a combine
        validate_stage_args(PatternKind.REDUCE, [narrow, i, scal],
                            sum_reduce_kernel())
    with pytest.raises(RoleViolation):  # combine outside reduce
        validate_stage_args(PatternKind.MAP, [*_io(), comb], add_kernel())


def test_predicate_pairing():
    i, o = _io()
    with pytest.raises(RoleViolation):  # filter without predicate
        validate_stage_args(PatternKind.FILTER, [i, o], KernelSpec(
            "nopred", lambda x, y: None))
    with pytest.raises(RoleViolation):  # predicate on a map
        validate_stage_args(PatternKind.MAP, [i, o], copy_even_kernel())
    with pytest.raises(RoleViolation):  # filters emit exactly one output
        validate_stage_args(PatternKind.FILTER, [i, o, arg(
            ArgRole.OUTPUT, Buffer(elem=U32))], copy_even_kernel())


# --- invocation views -------------------------------------------------------------

def test_invocation_views_single_slot_is_prefix():
    v = np.arange(6, dtype=np.uint32)
    out = invocation_views(v, 1, 1, 4)
    assert out.shape == (4,) and (out == v[:4]).all()


def test_invocation_views_window_rows():
    v = np.arange(5, dtype=np.uint32)
    out = invocation_views(v, 3, 1, 3)
    assert out.tolist() == [[0, 1, 2], [1, 2, 3], [2, 3, 4]]


def test_invocation_views_group_rows():
    v = np.arange(6, dtype=np.uint32)
    out = invocation_views(v, 2, 2, 3)
    assert out.tolist() == [[0, 1], [2, 3], [4, 5]]


def test_invocation_views_window_group_rows():
    v = np.arange(8, dtype=np.uint32)
    out = invocation_views(v, 4, 2, 3)
    assert out.tolist() == [[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7]]


def test_invocation_views_empty_and_short():
    assert invocation_views(np.arange(3, dtype=np.uint32), 2, 1, 0).shape \
        == (0, 2)
    with pytest.raises(KernelFault):
        invocation_views(np.arange(3, dtype=np.uint32), 2, 1, 3)


# --- host reference semantics ------------------------------------------------------

def _host(kind, kernel, args, values, **kw):
    return apply_pattern_host(kind, kernel, args, values, **kw)


def test_host_map_adds():
    a = Buffer("a", data=np.array([1, 2], np.uint32))
    b = Buffer("b", data=np.array([3, 4], np.uint32))
    c = Buffer("c", elem=U32)
    args = [arg(ArgRole.INPUT, a), arg(ArgRole.INPUT, b),
            arg(ArgRole.OUTPUT, c)]
    outs = _host(PatternKind.MAP, add_kernel(), args,
                 [a.data, b.data, None])
    assert outs[2].tolist() == [4, 6]
    assert outs[0] is None and outs[1] is None


def test_host_inout_updates_copy_not_source():
    x = np.array([1, 2, 3], np.uint32)
    b = Buffer("b", data=x)
    args = [arg(ArgRole.INPUT, Buffer(data=x.copy())), arg(ArgRole.INOUT, b)]

    def _apply(i, v):
        v *= np.uint32(2)
    outs = _host(PatternKind.MAP, KernelSpec("dbl", _apply), args, [x, x])
    assert outs[1].tolist() == [2, 4, 6]
    assert x.tolist() == [1, 2, 3]


def test_host_window_shrinks_without_overlap():
    x = np.array([1, 2, 3], np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.WINDOW, window_sum_kernel(), args, [x, None], w=2)
    assert outs[1].tolist() == [3, 5]


def test_host_window_extends_with_overlap():
    x = np.array([1, 2, 3], np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.WINDOW, window_sum_kernel(), args, [x, None],
                 w=2, overlap=np.array([9], np.uint32))
    assert outs[1].tolist() == [3, 5, 12]


def test_host_group_sums_pairs():
    x = np.array([1, 2, 3, 4], np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.GROUP, window_sum_kernel(), args, [x, None], g=2)
    assert outs[1].tolist() == [3, 7]


def test_host_window_group_needs_and_uses_overlap():
    x = np.array([1, 2, 3, 4], np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    with pytest.raises(MissingOverlapVector):
        _host(PatternKind.WINDOW_GROUP, window_sum_kernel(), args, [x, None],
              w=1, g=2)
    outs = _host(PatternKind.WINDOW_GROUP, window_sum_kernel(), args,
                 [x, None], w=1, g=2, overlap=np.array([7], np.uint32))
    # slots are (1,2,3) and (3,4,7)
    assert outs[1].tolist() == [6, 14]


def test_host_filter_keeps_order():
    x = np.array([1, 2, 3, 4], np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.FILTER, copy_even_kernel(), args, [x, None])
    assert outs[1].tolist() == [2, 4]


def test_host_window_filter_drops_duplicates():
    x = np.array([1, 1, 2], np.uint32)

    def _apply(xw, y):
        y[:] = xw[:, 0]

    def _pred(xw, y):
        return xw[:, 0] != xw[:, 1]
    k = KernelSpec("dedup", _apply, predicate=_pred)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.WINDOW_FILTER, k, args, [x, None], w=2,
                 overlap=np.array([3], np.uint32))
    assert outs[1].tolist() == [1, 2]


def test_host_group_filter_keeps_even_sums():
    x = np.array([1, 1, 2, 3], np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.GROUP_FILTER, window_sum_kernel(predicate=True),
                 args, [x, None], g=2)
    assert outs[1].tolist() == [2]


def test_host_reduce_folds_from_initial_accumulator():
    x = np.array([1, 2, 3], np.uint32)
    args = [arg(ArgRole.REDUCE_OUT, Buffer(elem=U32)),
            arg(ArgRole.INPUT, Buffer(data=x))]
    outs = _host(PatternKind.REDUCE, sum_reduce_kernel(), args,
                 [np.array([10], np.uint32), x])
    assert outs[0].tolist() == [16]


def test_host_reduce_rejects_bad_accumulator_length():
    x = np.array([1, 2], np.uint32)
    args = [arg(ArgRole.REDUCE_OUT, Buffer(elem=U32), reduce_width=2,
                combine=lambda a, b: a),
            arg(ArgRole.INPUT, Buffer(data=x))]
    with pytest.raises(KernelFault):
        _host(PatternKind.REDUCE, sum_reduce_kernel(), args,
              [np.array([0], np.uint32), x])


def test_host_inputs_are_read_only():
    x = np.array([1, 2], np.uint32)

    def _apply(a, y):
        a[0] = 9
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    with pytest.raises(KernelFault):
        _host(PatternKind.MAP, KernelSpec("bad", _apply), args, [x, None])


def test_host_scalars_are_read_only():
    x = np.array([1, 2], np.uint32)
    s = np.array([5], np.uint32)

    def _apply(a, sc, y):
        sc[0] = 9
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.SCALAR, Buffer(data=s)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    with pytest.raises(KernelFault):
        _host(PatternKind.MAP, KernelSpec("bad", _apply), args, [x, s, None])


def test_host_disagreeing_input_lengths_raise():
    a = np.array([1, 2], np.uint32)
    b = np.array([1, 2, 3], np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=a)),
            arg(ArgRole.INPUT, Buffer(data=b)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    with pytest.raises(KernelFault):
        _host(PatternKind.MAP, add_kernel(), args, [a, b, None])


def test_run_kernel_batch_wraps_kernel_errors():
    def _boom(x, y):
        raise RuntimeError("boom")
    x = np.arange(3, dtype=np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    with pytest.raises(KernelFault):
        run_kernel_batch(PatternKind.MAP, KernelSpec("boom", _boom), args,
                         [x, np.zeros(3, np.uint32)], 3)


def test_run_kernel_batch_rejects_bad_mask_shape():
    def _apply(x, y):
        y[:] = x

    def _pred(x, y):
        return np.array([True])  # wrong length
    x = np.arange(3, dtype=np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    with pytest.raises(KernelFault):
        run_kernel_batch(PatternKind.FILTER, KernelSpec("f", _apply, _pred),
                         args, [x, np.zeros(3, np.uint32)], 3)


def test_default_combine_refeeds_partials():
    k = sum_reduce_kernel()
    spec = arg(ArgRole.REDUCE_OUT, Buffer(elem=U32))
    comb = default_combine(k, spec)
    out = comb(np.array([5], np.uint32), np.array([7], np.uint32))
    assert out.tolist() == [12]
    wrap = comb(np.array([M32], np.uint32), np.array([2], np.uint32))
    assert wrap.tolist() == [1]


# --- property checks ----------------------------------------------------------------

@given(st.lists(st.integers(0, M32), min_size=0, max_size=200))
def test_host_filter_equals_loop_reference(xs):
    x = np.array(xs, np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.FILTER, copy_even_kernel(), args, [x, None])
    assert outs[1].tolist() == [v for v in xs if v % 2 == 0]


@given(st.lists(st.integers(0, M32), min_size=2, max_size=100),
       st.integers(2, 5))
def test_host_window_equals_loop_reference(xs, w):
    if w > len(xs):
        w = len(xs)
    x = np.array(xs, np.uint32)
    args = [arg(ArgRole.INPUT, Buffer(data=x)),
            arg(ArgRole.OUTPUT, Buffer(elem=U32))]
    outs = _host(PatternKind.WINDOW, window_sum_kernel(), args, [x, None], w=w)
    want = [sum(xs[i:i + w]) & M32 for i in range(len(xs) - w + 1)]
    assert outs[1].tolist() == want


@given(st.lists(st.integers(0, M32), min_size=0, max_size=100),
       st.integers(0, M32))
def test_host_reduce_equals_loop_reference(xs, init):
    x = np.array(xs, np.uint32)
    args = [arg(ArgRole.REDUCE_OUT, Buffer(elem=U32)),
            arg(ArgRole.INPUT, Buffer("xin", elem=U32))]
    outs = _host(PatternKind.REDUCE, sum_reduce_kernel(), args,
                 [np.array([init], np.uint32), x])
    want = init
    for v in xs:
        want = (want + v) & M32
    assert outs[0].tolist() == [want]
