# network and channel generation parameters
carrier_frequency = 2.6  # GHz
bandwidth = 100.0  # MHz
total_tx_power = 100.0  # W
rb_count = 135
step_count = 1000
tti = 1e-3  # s

noise_figure = 9.0  # dB, UE receiver
thermal_noise_density = -174.0  # dBm/Hz

# urban macro-cell geometry; the breakpoint distance follows from the
# antenna heights above the effective environment height
bs_height = 25.0  # m
ue_height = 1.5  # m
environment_height = 1.0  # m

# dual-slope urban macro path loss, PL = a + 10 n log10(d3d) + 20 log10(fc)
pathloss_intercept_los = 28.0  # dB
pathloss_intercept_nlos = 13.54  # dB
pathloss_exponent_los = 2.2
pathloss_exponent_nlos = 3.908
pathloss_exponent_far = 4.0  # LOS slope beyond the breakpoint

shadowing_sigma_los = 4.0  # dB
shadowing_sigma_nlos = 6.0  # dB
shadowing_decorrelation_los = 37.0  # m
shadowing_decorrelation_distance = 50.0  # m, NLOS
rician_k_los = 9.0  # dB
frequency_correlation = 0.9  # between adjacent RBs
doppler_shape = 1.0

# UE placement and mobility
min_distance = 35.0  # m
max_distance = 250.0  # m
turn_probability = 0.5
turn_interval = 200  # steps

# trace file layout
grid_magic = b"SEGRID01"
grid_max_cells = 2**31
