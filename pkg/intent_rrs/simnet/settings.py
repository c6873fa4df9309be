# resource grid, 135 RBs in 27 contiguous groups of 5
rbg_count = 27
rb_count = 135
slots = 5

bandwidth = 100.0  # MHz
tti = 1e-3  # s
step_count = 1000

# window of the packet loss rate, in steps
loss_window = 10

# moving average of the effective throughput used by proportional fair
throughput_ema = 0.01
throughput_floor = 1e-6  # Mbps

# per-step metrics log, one row per UE
metrics_columns = [
    "step",
    "slice",
    "ue",
    "served",
    "effective",
    "buffer_occ",
    "latency",
    "loss",
    "arrivals",
]
