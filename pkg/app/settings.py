import os

from dotenv import load_dotenv

load_dotenv()

# ----------------------------
# Run ledger (DB)
# ----------------------------
DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///ris_runs.db")
# persist estimate/fragility runs to the ledger; off unless explicitly enabled
RECORD_RUNS = os.getenv("RECORD_RUNS", "0").strip().lower() in ("1", "true", "yes", "on")

# ----------------------------
# Execution defaults
# ----------------------------
DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "7"))
# worker threads for replications / direct MC batches
DEFAULT_JOBS = int(os.getenv("DEFAULT_JOBS", str(os.cpu_count() or 1)))

# IS-I relaxes the input PDF, whose values decay exponentially with dimension
IS_ONE_DIMENSION_CAP = int(os.getenv("IS_ONE_DIMENSION_CAP", "20"))

# ----------------------------
# Ground motion records
# ----------------------------
# Optional directory holding record_1.txt / record_2.txt (two columns: t [s], a [m/s^2]).
# Empty -> the bundled synthetic records are generated in memory.
RECORDS_DIR = os.getenv("RECORDS_DIR", "").strip()

# ----------------------------
# Outputs
# ----------------------------
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "out")

# ----------------------------
# Logging
# ----------------------------
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
