import os

# ---------- CONFIGURATION ----------

PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
DEFAULT_OUT_DIR = os.path.join(os.path.abspath(os.getcwd()), "runs", "default")
ROSTER_FILE = os.path.join(PROJECT_ROOT, "tasks", "data", "names.json")

MASTER_SEED = 7

# ---------- PROMPT ENCODING ----------

CONTEXT_LENGTH = 16
RACES = ("asian", "black", "latino", "white")
FAMILIES = ("admissions", "hiring")
TEMPLATES = ("free", "list", "explicit")
NAMES_PER_RACE = 100

PAD, BOS, ASK = 0, 1, 2
TPL_A, TPL_B, TPL_EXPL = 3, 4, 5
RACE_TOKEN_BASE = 6          # 6..9 RACE_{ASIAN,BLACK,LATINO,WHITE}
VERY = 10
SIMPLE, NOAFF, VERYHDR, ILLEGAL, RESERVED = 11, 12, 13, 14, 15
UNI_BASE = 16                # 16..35
ROLE_BASE = 36               # 36..75
GPA_BASE = 76                # 76..106, bucket b is GPA 1.0 + 0.1 b
EC_BASE = 107                # 107..115
LET_BASE = 116               # 116..119
EXP_BASE = 120               # 120..140
DEG_BASE = 141               # 141..144
REF_BASE = 145               # 145..148
NAME_BASE = 149              # 149..548
YES_TOKEN = 549
NO_TOKEN = 550
VOCAB_SIZE = 551

N_GPA_BUCKETS = 31

# ---------- REFERENCE MODEL ----------

MODEL_LAYERS = 4
MODEL_WIDTH = 64
MODEL_HEADS = 4
RMS_EPS = 1e-5

TRAIN_SET_SIZE = 20_000
HELDOUT_SIZE = 2_000
TRAIN_BATCH_SIZE = 64
TRAIN_LEARNING_RATE = 3e-4
TRAIN_MAX_EPOCHS = 10
TRAIN_TARGET_AGREEMENT = 0.97
TRAIN_WARMUP_FRACTION = 0.05
TRAIN_TEMPLATE_MIX = {"free": 0.4, "list": 0.4, "explicit": 0.2}

# ---------- BIASED TEACHER ----------

ADMISSIONS_WEIGHTS = (0.5, 0.3, 0.2)   # GPA, ECs, letters
HIRING_WEIGHTS = (0.5, 0.3, 0.2)       # experience, degree, referrals
ADMISSIONS_OFFSETS = {"asian": 0.02, "black": -0.04, "latino": -0.02, "white": 0.04}
HIRING_OFFSETS = {"asian": 0.03, "black": -0.04, "latino": -0.03, "white": 0.04}
THRESHOLD_RANGE = (0.4, 0.6)
OFFSET_BOUND = 0.2
CALIBRATION_TARGET_GAP = 15.0
CALIBRATION_SAMPLES = 10_000

# ---------- COUNTERFACTUAL PAIRS ----------

PAIRS_PER_CLASS_PER_INSTITUTION = 50   # admissions: 50 × 4 classes × 20 universities = 4,000 ≥ the split
PAIR_ATTEMPT_BUDGET = 10_000
SPLIT_TRAIN = 2_000
SPLIT_DEV = 1_024
SPLIT_TEST = 900

# ---------- ALIGNMENT SEARCH ----------

DAS_EPOCHS = 1
DAS_BATCH_SIZE = 32
DAS_ROTATION_LR = 1e-4
DAS_MASK_LR = 1e-3
DAS_WARMUP_FRACTION = 0.1
DAS_MASK_TEMPERATURE = (1.0, 0.01)
DAS_MASK_THRESHOLD = 0.5
DAS_MASK_SPARSITY = 0.0      # optional L1 pull on the mask gates; off unless configured
DAS_ORTHOGONALITY = "cayley"   # or "qr": unconstrained frame step, then QR retraction

# Desk-scale DAS profile of the pipeline (RunConfig default); DasConfig() itself keeps
# the single epoch at 1e-4 above.
DESK_DAS_EPOCHS = 8
DESK_DAS_ROTATION_LR = 5e-2

SWEEP_WORKERS = os.cpu_count() or 4

# ---------- METRICS ----------

PANEL_PROFILES = 400
TRIALS = 5
TRIAL_PANEL_SIZE = 2_000
PANEL_SHARDS = 4
