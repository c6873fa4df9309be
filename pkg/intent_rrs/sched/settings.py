rbg_count = 27

# intra-slice kernels, in the order of the intra policy outputs
intra_kernels = ("rr", "pf", "mt")

# weights of the intent-aware reward
hp_weight = 2.0
regular_weight = 1.0

# sched-slicing classification thresholds
urllc_latency = 20.0  # ms, latency intent below this is URLLC
embb_throughput = 20.0  # Mbps, throughput intent above this is eMBB

# floor of the proportional fair average throughput
pf_floor = 1e-6  # Mbps
