"""assertforge: Verilog bug-injection datasets and assertion-failure benchmarking.

Submodules map onto the pipeline stages: corpus (ingest + filter), mutate
(bug injection), toolchain (compiler/verifier/LLM adapters), dataset (record
families + split), evalharness (pass@k benchmarking), trainmath (training
objectives), cli (entry point).
"""

__version__ = "0.1.0"
