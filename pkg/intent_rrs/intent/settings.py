# over-fulfillment rate, the band above (throughput) or below (latency,
# loss) a requirement in which a positive drift is graded
zeta = 0.1

drift_min = -1.0
drift_max = 1.0
