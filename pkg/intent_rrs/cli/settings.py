schema_version = 1
output_env = "INTENT_RRS_OUTPUT"
output_dir = "runs"

# top-level keys of a run-config file
config_keys = [
    "schema_version",
    "experiment",
    "channel",
    "ppo",
    "catalog",
    "output_dir",
    "seed",
    "workers",
]
experiment_extra_keys = ["scale"]

exit_ok = 0
exit_failure = 1
exit_config = 2

log_format = "%(asctime)s %(levelname)s %(name)s: %(message)s"
