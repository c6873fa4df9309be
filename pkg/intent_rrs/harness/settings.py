modes = (
    "single-scenario",
    "generalize",
    "overfit",
    "finetune",
    "eval-baseline",
)
controllers = ("proposed", "marr", "mapf", "intent_aware", "sched_slicing")
learning_controllers = ("proposed", "intent_aware", "sched_slicing")

steps_per_episode = 1000
tti = 1e-3  # s
validation_interval = 10  # training episodes

# (train, validation, test) episodes, epochs and scenario count per
# protocol; a scenario count of None draws one scenario per episode
presets = {
    "full": {
        "single-scenario": ((60, 20, 20), 10, 1),
        "generalize": ((180, 10, 10), 5, None),
        "overfit": ((10, 10, 10), 10, None),
        "finetune": ((80, 20, 20), 10, 1),
        "eval-baseline": ((0, 0, 20), 0, 1),
    },
    "desk": {
        "single-scenario": ((6, 2, 2), 2, 1),
        "generalize": ((12, 2, 2), 1, None),
        "overfit": ((4, 4, 4), 3, None),
        "finetune": ((6, 2, 2), 2, 1),
        "eval-baseline": ((0, 0, 4), 0, 1),
    },
}
desk_batch_size = 512

demand_columns = ["step", "rbs_min_se", "rbs_avg_se", "rbs_max_se"]
step_columns = [
    "episode",
    "controller",
    "step",
    "reward",
    "distance_total",
    "distance_hp",
    "violations_total",
    "violations_hp",
]
summary_columns = [
    "episode",
    "controller",
    "distance_total",
    "distance_hp",
    "violations_total",
    "violations_hp",
]
cumulative_columns = [
    "controller",
    "episode",
    "step",
    "distance_total",
    "distance_hp",
    "violations_total",
    "violations_hp",
]
curve_columns = ["epoch", "episode", "env_steps", "phase", "reward"]
