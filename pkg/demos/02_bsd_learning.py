"""Grow a speculation diagram one expansion at a time and export it as a netlist."""

from statebsd import bsd
from statebsd.bsd import ExampleSet

# majority of three inputs, plus a parity bit on x3
def f(x):
    maj = ((x & 1) + (x >> 1 & 1) + (x >> 2 & 1)) >= 2
    return int(maj) ^ (x >> 3 & 1)

ex = ExampleSet.exhaustive(f, 4)
b = bsd.new_root(ex)
print(f"root guess {b.nodes[0].guess}: accuracy {bsd.accuracy(b, ex)}")
while (choice := bsd.choose_expansion(b, ex)) is not None:
    b = bsd.expand(b, *choice, ex)
    print(f"expand leaf {choice[0]} on x{choice[1]}: accuracy {bsd.accuracy(b, ex)}")

trained = bsd.train(ex)
print(f"greedy training: {trained.decision_count} decisions, accuracy {bsd.accuracy(trained, ex)}")
half = bsd.train(ex, target_accuracy=0.75)
print(f"with 25% error allowed: {half.decision_count} decisions, accuracy {bsd.accuracy(half, ex)}")

net = bsd.to_netlist(trained)
print(f"netlist: {net.mux_count} muxes")
print(net.to_blif("maj_xor")[:300] + "...")
