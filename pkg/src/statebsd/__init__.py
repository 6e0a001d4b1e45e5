"""Learned state-reuse speculation for a toy superscalar processor.

Modules:

* ``isa`` / ``asm``: the MiniRV-16 ISA, reference simulator, assembler
* ``bsd``: binary speculation diagrams (learning, evaluation, export)
* ``elements``: buffered state elements and the exact soundness oracle
* ``selector``: dependency extraction and annealed state selection
* ``speculator``: abstaining BSD predictors with exhaustive verification
* ``superscalar``: p-way in-order simulator driven by the predictors
* ``workloads`` / ``pipeline`` / ``cli``: suite, end-to-end runs, CLI
"""

from .errors import StateBsdError
from .isa import Instruction, Op, ProcessorState, Program, decode, encode, run_single, step
from .asm import assemble, disassemble
from .bsd import Bsd, ExampleSet, accuracy, choose_expansion, evaluate, expand, new_root, train
from .elements import POOL, TARGETS, sound_sources
from .selector import AnnealSchedule, SelectedStateSet, anneal, extract_dependencies, grow, reusability
from .speculator import Speculator, measure, predict, train_speculator, verify_speculator
from .superscalar import PredictorBundle, SuperscalarConfig, compare_reference, run_superscalar
from .workloads import WorkloadKind, default_suite, gen_program
from .pipeline import PipelineConfig, Report, run_pipeline

__version__ = "0.1.0"
