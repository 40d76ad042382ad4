DEFAULT_TLDS = ["com", "net", "org"]

# Windowing defaults (alpha domains split into beta windows).
DEFAULT_ALPHA = 10000
DEFAULT_BETA = 100

# Cost model: one domain access costs one small HTTP exchange.
BYTES_PER_ACCESS = 500
SECONDS_PER_ACCESS = 0.2

# Net model
DEFAULT_LATENCY_MS = 100
DEFAULT_OVERHEAD_BYTES = 40
DEFAULT_DNS_BYTES = 500

# Node timing
LOOKUP_BACKOFF_MS = 60_000
HEARTBEAT_MS = 30_000
HOP_INTERVAL_MS = 600_000
BATTERY_RECHECK_MS = 900_000
START_SPREAD_MS = 60_000
DCR_TIMEOUT_MS = 10_000
FIXED_POLL_PERIOD_MS = 300_000

SMS_MAX_CHARS = 160

# Simulated addresses are allocated from this block only.
ADDRESS_POOL = "10.0.0.0/8"

ENV_SEED = "FLUXSIM_SEED"
ENV_LOG_LEVEL = "FLUXSIM_LOG_LEVEL"

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
