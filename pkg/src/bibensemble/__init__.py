"""Annotated bibliography generation with an LLM ensemble.

Candidates are sampled over a grid of sampling settings, rated by a judge
model, selected by Top-Temperature and Top-M, then merged by a summarizer
and stripped of redundant sentences.
"""

from .generation import (
    BibliographyTask,
    CandidateAnnotation,
    GenerationConfig,
    SourceEntry,
    SweepGrid,
    build_generation_prompt,
    expand_grid,
    generate_candidates,
)
from .judging import JudgeRubric, RatingReport, build_judge_prompt, judge_candidates, parse_ratings
from .metrics import (
    ComparisonTable,
    MetricsReport,
    avg_sentence_length,
    build_comparison,
    flesch_reading_ease,
    percent_change,
)
from .pipeline import RunConfig, RunManifest, load_config, resume, run_pipeline
from .provider import (
    CompletionRequest,
    CompletionResult,
    Provider,
    ProviderProfile,
    ReplayStore,
    ResponseCache,
    complete,
    fingerprint,
    replay_complete,
)
from .refinement import RefinedBibliography, build_summarize_prompt, refine, remove_redundant_sentences
from .selection import AggregateStats, SelectionResult, Strategy, aggregate, select_top_m, select_top_temperature
from .textkit import Sentence, count_syllables, jaccard_similarity, split_sentences, tokenize

__version__ = "0.1.0"
