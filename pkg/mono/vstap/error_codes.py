GEN_INVALID_CONFIG = 1001
GEN_FILE_NOT_FOUND = 1004
GEN_PARSE_FAILED = 1009
GEN_INTERNAL_ERROR = 1999

MARG_INVALID_INPUT = 2000
MARG_INSUFFICIENT_DATA = 2001
MARG_RANK_MISMATCH = 2002

BVN_INVALID_CORRELATION = 2100
BVN_DEGENERATE_REGION = 2101
BVN_BREAKPOINT_MISMATCH = 2102

SOLV_DEGENERATE_INPUT = 2200
SOLV_INFEASIBLE_TARGET = 2201
SOLV_INVALID_INPUT = 2202

LAG_DEGENERATE_CHANNEL = 2300
LAG_INSUFFICIENT_DATA = 2301
LAG_REPAIR_FAILED = 2302
LAG_INVALID_INPUT = 2303

VAR_NUMERICALLY_SINGULAR = 2400
VAR_NON_STATIONARY = 2401
VAR_INVALID_INPUT = 2402

PIPE_INFEASIBLE_CORRELATION = 2500
PIPE_INVALID_INPUT = 2501
PIPE_DEGENERATE_INPUT = 2502

ORC_INSUFFICIENT_ACCEPTANCE = 2600
ORC_INVALID_INPUT = 2601

CLI_MODEL_FILE_INVALID = 2700
CLI_MISSING_VALUES = 2701
CLI_VALIDATION_FAILED = 2702
