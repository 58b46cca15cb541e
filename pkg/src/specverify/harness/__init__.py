from .corpus import sample_prompts, synthetic_corpus
from .reports import compare_predictors, fairness_report, throughput_by_accepted, waste_report
from .scenario import OracleScenario, generate_oracle_scenario
from .simulate import (ConfigError, DataError, NGramBackend, OracleBackend, ProfilingObservation, RunConfig,
                       StepRecord, fit_profile, profile_ngram, profile_scenario, read_trace, run_simulation,
                       summarize, write_trace)
