"""Constants for the Deep Embedding Forest toolkit."""

from __future__ import annotations

VERSION = "1.0.0"

# ── Config sections and keys ──────────────────────────────────────────

SECTION_RUN = "run"
SECTION_DATA = "data"
SECTION_SYNTH = "synth"
SECTION_NN = "nn"
SECTION_GBDT = "gbdt"
SECTION_FUZZY = "fuzzy"
SECTION_BENCH = "bench"

CONF_SEED = "seed"
CONF_OUT = "out"
CONF_DETERMINISTIC = "deterministic"

CONF_SCHEMA = "schema"
CONF_TRAIN = "train"
CONF_TEST = "test"

CONF_N_SAMPLES = "n_samples"
CONF_N_TEST = "n_test"
CONF_N_SPARSE_DIMS = "n_sparse_dims"
CONF_N_DENSE_DIMS = "n_dense_dims"
CONF_N_SPARSE_GROUPS = "n_sparse_groups"
CONF_INTERACTION_DEPTH = "interaction_depth"
CONF_NOISE = "noise"

CONF_EPOCHS = "epochs"
CONF_BATCH_SIZE = "batch_size"
CONF_LEARNING_RATE = "learning_rate"
CONF_ADAM_BETA1 = "adam_beta1"
CONF_ADAM_BETA2 = "adam_beta2"
CONF_ADAM_EPS = "adam_eps"
CONF_L2 = "l2"
CONF_EMBED_DIM = "embed_dim"
CONF_RESIDUAL_HIDDEN = "residual_hidden"

CONF_N_TREES = "n_trees"
CONF_MAX_LEAVES = "max_leaves"
CONF_MAX_DEPTH = "max_depth"
CONF_MIN_SAMPLES_LEAF = "min_samples_leaf"
CONF_LAMBDA = "lambda"
CONF_BASE_SCORE = "base_score"

CONF_KAPPA = "kappa"

CONF_WARMUP = "warmup"
CONF_REPS = "reps"
CONF_SHUFFLE_SEED = "shuffle_seed"
CONF_MIN_REPS = "min_reps"
CONF_DENSE_WIDTHS = "dense_widths"

# ── Defaults ──────────────────────────────────────────────────────────

DEFAULT_SEED = 7

DEFAULT_EPOCHS = 10
DEFAULT_BATCH_SIZE = 256
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_ADAM_BETA1 = 0.9
DEFAULT_ADAM_BETA2 = 0.999
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_L2 = 0.0
DEFAULT_EMBED_DIM = 128
DEFAULT_RESIDUAL_HIDDEN = (128, 64)

DEFAULT_N_TREES = 100
DEFAULT_MAX_LEAVES = 128
DEFAULT_MAX_DEPTH = 7
DEFAULT_MIN_SAMPLES_LEAF = 20
DEFAULT_LAMBDA = 1.0
DEFAULT_GBDT_LEARNING_RATE = 0.1

DEFAULT_KAPPA = 4.0
DEFAULT_FUZZY_EPOCHS = 3
DEFAULT_FUZZY_LEARNING_RATE = 1e-3

DEFAULT_WARMUP = 3
DEFAULT_REPS = 20
DEFAULT_MIN_REPS = 1
DEFAULT_BENCH_BATCH_SIZE = 64
DEFAULT_DENSE_WIDTHS = (512, 512, 512, 64, 1)

DEFAULT_N_SAMPLES = 10_000
DEFAULT_N_TEST = 2_000
DEFAULT_N_SPARSE_DIMS = 2_000
DEFAULT_N_DENSE_DIMS = 5
DEFAULT_N_SPARSE_GROUPS = 2
DEFAULT_INTERACTION_DEPTH = 3
DEFAULT_NOISE = 0.05

# ── Numerics ──────────────────────────────────────────────────────────

PROB_EPS = 1e-12
ROUTING_EXP_CLAMP = 500.0
IQR_EPS = 1e-6
MIN_INVERSE_WIDTH = 1e-8
FLOAT_FORMAT = "%.17g"

# ── Text formats ──────────────────────────────────────────────────────

KIND_SPARSE = "sparse"
KIND_DENSE = "dense"
FLAG_EMBED = "embed"
FLAG_RAW = "raw"

FOREST_TAG = "forest"
FUZZY_FOREST_TAG = "fuzzy-forest"
FOREST_FORMAT_VERSION = 1

TRILETTER_PAD = "#"
FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
FNV64_MASK = 0xFFFFFFFFFFFFFFFF

# ── Binary formats ────────────────────────────────────────────────────

CHECKPOINT_TENSORS = "tensors.bin"
CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_FORMAT_VERSION = 1

BUNDLE_MAGIC = b"DEFB"
BUNDLE_VERSION = 1
BUNDLE_SECTION_SCHEMA = "schema"
BUNDLE_SECTION_EMBEDDINGS = "embeddings"
BUNDLE_SECTION_FOREST = "forest"
BUNDLE_SECTION_METADATA = "metadata"

MODE_TWO_STEP = "two-step"
MODE_THREE_STEP = "three-step"

# ── CLI ───────────────────────────────────────────────────────────────

RUN_MANIFEST_SUFFIX = ".manifest.json"
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

SCHEMA_FILE = "schema.txt"
TRAIN_FILE = "train.txt"
TEST_FILE = "test.txt"
CHECKPOINT_DIR = "checkpoint"
STACKED_FILE = "train.stack"
FOREST_FILE = "forest.txt"
FUZZY_FOREST_FILE = "fuzzy_forest.txt"
TWO_STEP_BUNDLE = "two_step.defb"
THREE_STEP_BUNDLE = "three_step.defb"
PREDICTIONS_FILE = "predictions.txt"
BENCH_FILE = "bench.csv"
COMPARE_FILE = "compare.csv"
EVAL_SUFFIX = ".eval"
LATENCY_SAMPLES = 1000

BENCH_CSV_HEADER = (
    "config",
    "n_t",
    "d_t",
    "D",
    "T1_ns",
    "T2_ns",
    "total_ns",
    "p50_ns",
    "p99_ns",
    "reps",
)
