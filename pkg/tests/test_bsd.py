import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import slow_accuracy, walk
from statebsd import bsd
from statebsd.bsd import Bsd, Decision, ExampleSet, Speculation
from statebsd.errors import BudgetExhausted, EmptyExamples, MalformedArtifact, NotALeaf, VarAlreadyUsed, WidthMismatch

XOR2 = ExampleSet.from_truth_table([0, 1, 1, 0], 2)
AND2 = ExampleSet.from_truth_table([0, 0, 0, 1], 2)


def rows(ex):
    return list(zip(ex.inputs.tolist(), ex.outputs.tolist()))


def test_new_root_constant():
    ex = ExampleSet.from_truth_table([0] * 8, 3)
    b = bsd.new_root(ex)
    assert b.nodes[0].guess == 0 and bsd.accuracy(b, ex) == 1


def test_new_root_tie_goes_to_zero():
    b = bsd.new_root(XOR2)
    assert b.nodes[0] == Speculation(0) and bsd.accuracy(b, XOR2) == Fraction(1, 2)


def test_new_root_and2():
    b = bsd.new_root(AND2)
    assert b.nodes[0].guess == 0 and bsd.accuracy(b, AND2) == Fraction(3, 4)


def test_new_root_empty():
    with pytest.raises(EmptyExamples):
        bsd.new_root(ExampleSet.from_rows([], 2))


def test_xor2_expansions():
    b = bsd.expand(bsd.new_root(XOR2), 0, 0, XOR2)
    assert isinstance(b.nodes[0], Decision)
    assert [b.nodes[k].guess for k in b.leaves()] == [0, 0]
    assert bsd.accuracy(b, XOR2) == Fraction(1, 2)
    for leaf in b.leaves():
        b = bsd.expand(b, leaf, 1, XOR2)
    assert bsd.accuracy(b, XOR2) == 1
    assert bsd.evaluate(b, (1, 0))[0] == 1
    assert len(b.expansion_log) == 3


def test_expand_errors():
    b = bsd.expand(bsd.new_root(XOR2), 0, 0, XOR2)
    with pytest.raises(NotALeaf):
        bsd.expand(b, 0, 1, XOR2)
    with pytest.raises(VarAlreadyUsed):
        bsd.expand(b, b.leaves()[0], 0, XOR2)
    with pytest.raises(WidthMismatch):
        bsd.expand(b, b.leaves()[0], 1, ExampleSet.from_truth_table([0] * 8, 3))


def test_empty_child_inherits_parent_guess():
    ex = ExampleSet.from_rows([(0b01, 1), (0b11, 1)], 2)
    b = bsd.expand(bsd.new_root(ex), 0, 0, ex)
    lo = b.nodes[b.nodes[0].lo]
    assert lo.guess == 1 and lo.support == (0, 0)


def test_evaluate_examples():
    b = Bsd((Decision(0, 1, 2), Speculation(0), Speculation(1)), 1)
    assert bsd.evaluate(b, 1) == (1, 2)
    assert bsd.evaluate(b, (0,)) == (0, 1)
    const = Bsd((Speculation(1),), 3)
    assert all(bsd.evaluate(const, x)[0] == 1 for x in range(8))
    with pytest.raises(WidthMismatch):
        bsd.evaluate(const, (0, 1))
    with pytest.raises(WidthMismatch):
        bsd.evaluate(const, 8)


def test_accuracy_examples():
    zero = Bsd((Speculation(0),), 2)
    assert bsd.accuracy(zero, ExampleSet.from_truth_table([0] * 4, 2)) == 1
    assert bsd.accuracy(zero, XOR2) == Fraction(1, 2)
    full = bsd.train(AND2)
    assert bsd.accuracy(full, AND2) == 1
    with pytest.raises(WidthMismatch):
        bsd.accuracy(zero, ExampleSet.from_truth_table([0] * 8, 3))
    with pytest.raises(EmptyExamples):
        bsd.accuracy(zero, ExampleSet.from_rows([], 2))


def _brute_choice(b, ex):
    """Try every (impure leaf, unused var) pair and apply the tie-break rule."""
    base = bsd.accuracy(b, ex)
    at = {x: bsd.evaluate(b, x)[1] for x in set(ex.inputs.tolist())}
    best = None
    for leaf in b.leaves():
        ys = [y for x, y in rows(ex) if at[x] == leaf]
        if not ys or min(ys) == max(ys):
            continue
        for v in range(b.input_width):
            if v in b.path_vars(leaf):
                continue
            gain = bsd.accuracy(bsd.expand(b, leaf, v, ex), ex) - base
            if best is None or gain > best[0]:
                best = (gain, leaf, v)
    return None if best is None else best[1:]


def test_choose_expansion_examples():
    assert bsd.choose_expansion(bsd.new_root(XOR2), XOR2) == (0, 0)
    assert bsd.choose_expansion(bsd.new_root(AND2), AND2) == _brute_choice(bsd.new_root(AND2), AND2)
    assert bsd.choose_expansion(bsd.train(AND2), AND2) is None


@given(st.integers(2, 6), st.data())
def test_choose_expansion_matches_brute_force(width, data):
    table = data.draw(st.lists(st.integers(0, 1), min_size=1 << width, max_size=1 << width))
    ex = ExampleSet.from_truth_table(table, width)
    b = bsd.new_root(ex)
    for _ in range(data.draw(st.integers(0, 4))):
        c = bsd.choose_expansion(b, ex)
        if c is None:
            break
        b = bsd.expand(b, *c, ex)
    assert bsd.choose_expansion(b, ex) == _brute_choice(b, ex)


def test_train_examples():
    const = ExampleSet.from_truth_table([1] * 16, 4)
    assert bsd.train(const).decision_count == 0
    xor3 = ExampleSet.exhaustive(lambda x: bin(x).count("1") & 1, 3)
    b = bsd.train(xor3)
    assert bsd.accuracy(b, xor3) == 1 and b.decision_count <= 7
    with pytest.raises(BudgetExhausted) as ei:
        bsd.train(XOR2, 1, max_nodes=1)
    assert bsd.accuracy(ei.value.best, XOR2) == Fraction(1, 2)


def test_train_respects_epsilon_target():
    rng = np.random.default_rng(3)
    ex = ExampleSet.from_truth_table(rng.integers(0, 2, 256).tolist(), 8)
    b = bsd.train(ex, Fraction(9, 10))
    assert bsd.accuracy(b, ex) >= Fraction(9, 10)
    assert b.decision_count < bsd.train(ex).decision_count


@given(st.integers(1, 8), st.data())
def test_walk_and_vectorised_agree(width, data):
    table = data.draw(st.lists(st.integers(0, 1), min_size=1 << width, max_size=1 << width))
    ex = ExampleSet.from_truth_table(table, width)
    b = bsd.train(ex, Fraction(data.draw(st.integers(1, 10)), 10))
    xs = list(range(1 << width))
    assert bsd.predict_many(b, xs).tolist() == [walk(b, x) for x in xs]
    assert bsd.accuracy(b, ex) == slow_accuracy(b, rows(ex))


def test_netlist_small():
    n = bsd.to_netlist(Bsd((Speculation(0),), 2))
    assert n.gates == (("const", 0),) and n.mux_count == 0
    n = bsd.to_netlist(Bsd((Decision(0, 1, 2), Speculation(0), Speculation(1)), 1))
    assert n.mux_count == 1 and sum(g[0] == "const" for g in n.gates) == 2


@pytest.mark.parametrize("seed", range(10))
def test_netlist_matches_evaluate_on_random_8_input(seed):
    rng = np.random.default_rng(seed)
    ex = ExampleSet.from_truth_table(rng.integers(0, 2, 256).tolist(), 8)
    b = bsd.train(ex, Fraction(int(rng.integers(6, 11)), 10))
    net = bsd.to_netlist(b)
    xs = np.arange(256)
    assert net.simulate_many(xs).tolist() == bsd.predict_many(b, xs).tolist()
    assert [net.simulate(int(x)) for x in xs[:32]] == [walk(b, int(x)) for x in xs[:32]]
    assert net.mux_count == b.decision_count
    blif = net.to_blif()
    assert blif.startswith(".model bsd") and blif.count("01- 1") == net.mux_count


def test_serialisation_roundtrip():
    rng = np.random.default_rng(0)
    ex = ExampleSet.from_truth_table(rng.integers(0, 2, 64).tolist(), 6)
    b = bsd.train(ex)
    c = bsd.loads(bsd.dumps(b))
    assert c == b and c.input_width == 6 and c.root == 0


@pytest.mark.parametrize(
    "art",
    [
        {"width": 1, "root": 0, "nodes": [{"t": "d", "v": 0, "lo": 1, "hi": 5}, {"t": "s", "g": 0, "a": False}]},
        {"width": 1, "root": 0, "nodes": [{"t": "d", "v": 0, "lo": 0, "hi": 0}]},
        {
            "width": 2,
            "root": 0,
            "nodes": [
                {"t": "d", "v": 0, "lo": 1, "hi": 2},
                {"t": "d", "v": 1, "lo": 0, "hi": 2},
                {"t": "s", "g": 1, "a": False},
            ],
        },
        {"width": 1, "root": 0, "nodes": [{"t": "x"}]},
        {"width": 1, "root": 1, "nodes": [{"t": "s", "g": 0, "a": False}]},
        {"width": 1, "root": 0, "nodes": [{"t": "s", "g": 2, "a": False}]},
        {"root": 0, "nodes": []},
    ],
)
def test_malformed_artifacts(art):
    with pytest.raises(MalformedArtifact):
        bsd.from_json(art)


def test_malformed_text():
    with pytest.raises(MalformedArtifact):
        bsd.loads("{not json")


def test_shared_subgraph_is_accepted():
    art = {
        "width": 2,
        "root": 0,
        "nodes": [
            {"t": "d", "v": 0, "lo": 1, "hi": 2},
            {"t": "d", "v": 1, "lo": 3, "hi": 2},
            {"t": "s", "g": 1, "a": False},
            {"t": "s", "g": 0, "a": False},
        ],
    }
    b = bsd.from_json(art)
    assert [bsd.evaluate(b, x)[0] for x in range(4)] == [0, 1, 1, 1]


def test_full_expansion_reaches_exact_on_consistent_multiset():
    # duplicates are fine as long as no input appears with both outputs
    rs = [(x, (x * 7) % 3 == 0) for x in range(32)] * 2
    ex = ExampleSet.from_rows([(x, int(y)) for x, y in rs], 5)
    assert ex.consistent()
    assert bsd.accuracy(bsd.train(ex), ex) == 1
    assert not ExampleSet.from_rows([(1, 0), (1, 1)], 1).consistent()


def test_deterministic_choice():
    ex = ExampleSet.exhaustive(lambda x: int(x % 5 == 0), 5)
    b = bsd.new_root(ex)
    assert bsd.choose_expansion(b, ex) == bsd.choose_expansion(b, ex)
    assert bsd.train(ex) == bsd.train(ex)


def test_exhaustive_example_set_builder():
    ex = ExampleSet.exhaustive(lambda x: x & 1, 3)
    assert list(itertools.islice(rows(ex), 3)) == [(0, 0), (1, 1), (2, 0)]
