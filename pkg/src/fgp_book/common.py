# Tolerances
MEASURE_SUM_TOL = 1e-12
BALANCE_TOL = 1e-9
DERIVATIVE_TOL = 1e-6
MONOTONE_TOL = 1e-12
WEIGHT_SUM_TOL = 1e-10
COMPOSITION_TOL = 1e-12
ZERO_WEALTH_TOL = 1e-300

# Finite differences
FD_REL_STEP = 1e-6
FD_MIN_SCALE = 1e-8
N_CHECK_POINTS = 1000
CHECK_SEED = 20240101

# Data-driven parameter defaults
RHO_SAFETY_FACTOR = 2.0
DELTA_SAFETY_FACTOR = 2.0

# Local-time clamp repairs above this total get a warning
CLAMP_WARN_TOTAL = 1e-8

# Panel schema
DATE_COL = "date"
TICKER_COL = "ticker"
CAP_COL = "cap"
BOOK_COL = "book"
BOOK_UPDATED_COL = "book_updated"
TIME_COL = "time"

# Output files
UNIVERSE_NAME = "universe.txt"
PANEL_NAME = "panel.csv"
RELATIVE_VALUES_NAME = "relative_values.csv"
RELATIVE_TO_BOOK_NAME = "relative_to_book_value.csv"
SUMMARY_NAME = "summary.json"
DECOMPOSITION_NAME = "decomposition.csv"
VERIFY_REPORT_NAME = "verify_report.json"

OUT_DIR_ENV = "FGP_BOOK_OUT"
