import gc

import numpy as np
import pytest

from shardarray import DArray, DeadReferenceError, Librarian, get_librarian, lookup
from shardarray.transport import run_cluster


class Thing:
    pass


def test_indices_start_at_one_and_increase():
    lib = Librarian()
    a, b = Thing(), Thing()
    assert lib.register(a) == 1
    assert lib.register(b) == 2
    assert lib[1] is a and lib.lookup(2) is b


def test_unknown_index():
    lib = Librarian()
    with pytest.raises(KeyError):
        lib.lookup(1)
    with pytest.raises(KeyError):
        lib.lookup(0)


def test_entries_are_weak():
    lib = Librarian()
    t = Thing()
    i = lib.register(t)
    del t
    gc.collect()
    assert len(lib) == 0
    with pytest.raises(DeadReferenceError):
        lib.lookup(i)
    # dead indices are never handed out again
    assert lib.register(Thing()) == i + 1


def test_arrays_register_in_lockstep():
    def prog(ctx):
        obj = DArray(np.arange(16).reshape(4, 4), comm=ctx)
        others = [2 * obj, obj.copy(), obj[1:]]
        return [obj.index] + [o.index for o in others]

    res = run_cluster(3, prog)
    assert res[0] == res[1] == res[2]
    assert len(set(res[0])) == 4


def test_lookup_returns_local_instance():
    def prog(ctx):
        obj = DArray(np.arange(4), comm=ctx)
        return lookup(obj.index, ctx) is obj, get_librarian(ctx) is get_librarian(ctx)

    assert run_cluster(2, prog) == [(True, True), (True, True)]


def test_collected_array_reports_dead_reference():
    def prog(ctx):
        obj = DArray(np.arange(4), comm=ctx)
        index = obj.index
        del obj
        gc.collect()
        try:
            lookup(index, ctx)
        except DeadReferenceError:
            return "dead"
        return "alive"

    assert run_cluster(2, prog) == ["dead", "dead"]


def test_librarian_reassembles_from_individual_instances():
    expected = {
        1: [[[2, 3]], [[6, 7]], [[10, 11]], [[14, 15]]],
        2: [[[4, 6]], [[12, 14]], [[20, 22]], [[28, 30]]],
        3: [[[6, 9]], [[18, 21]], [[30, 33]], [[42, 45]]],
        4: [[[8, 12]], [[24, 28]], [[40, 44]], [[56, 60]]],
    }

    def prog(ctx):
        obj = DArray(np.arange(16).reshape(4, 4), comm=ctx)
        obj_list = (obj, 2 * obj, 3 * obj, 4 * obj)
        index_list = ctx.allgather(obj_list[ctx.rank].index)
        out = {}
        for index in index_list:
            current = get_librarian(ctx)[index]
            out[index] = current[:, 2:4].get_local_data().tolist()
        return out

    res = run_cluster(4, prog)
    for index, blocks in expected.items():
        assert [res[r][index] for r in range(4)] == blocks
