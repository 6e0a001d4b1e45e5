"""Train a register-value speculator, break it on purpose, and watch verification catch it."""

from statebsd.bsd import Speculation
from statebsd.elements import sources_for
from statebsd.isa import run_single
from statebsd.selector import extract_dependencies
from statebsd.speculator import SemanticOracle, measure, refine, table_from_events, train_verified, verify_speculator
from statebsd.workloads import WorkloadKind, gen_program

prog = gen_program(WorkloadKind.ARITH_CHAIN, 150, 3)
events = extract_dependencies(run_single(prog).trace, prog)
sources = sources_for({f"GPR{k}" for k in range(8)})
table = table_from_events(events, "gpr", sources)
oracle = SemanticOracle("gpr")

spec, result = train_verified(table, oracle)
m = measure(spec, events, oracle)
print(f"trained on {len(table)} encodings: {spec.node_count} decisions, verified={result.verified} "
      f"over {result.checked} inputs")
print(f"on the trace: coverage {float(m.coverage):.3f}, precision {float(m.precision):.3f}, recall {float(m.recall):.3f}")

# flip one confident leaf of the first index diagram
b0 = spec.bits[0]
leaf = next(k for k in b0.leaves() if not b0.nodes[k].abstain)
node = b0.nodes[leaf]
broken = type(spec)(spec.target, spec.mode, spec.sources, spec.care,
                    (b0.with_leaf(leaf, Speculation(1 - node.guess, False, node.support)),) + spec.bits[1:])
bad = verify_speculator(broken, oracle)
print(f"after flipping leaf {leaf}: verified={bad.verified}, {len(bad.counterexamples)} counterexamples")
fixed = refine(broken, bad.counterexamples, table, oracle, force=True)
print(f"forced abstention on those leaves: verified={verify_speculator(fixed, oracle).verified}, "
      f"domain coverage {spec.coverage_of_domain():.4f} -> {fixed.coverage_of_domain():.4f}")
