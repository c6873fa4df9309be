slots = 5
rbg_count = 27

# observation layout
inter_block_size = 10
inter_obs_size = slots * inter_block_size
intra_ue_slots = 5
intra_obs_size = 9 + 2 * intra_ue_slots
intra_actions = 3

# normalizers
thr_req_max = 100.0  # Mbps, largest throughput intent of the catalog
ue_max = 25
se_max = 20.0  # bits/s/Hz

# PPO hyper-parameters
hidden_sizes = (64, 64)
learning_rate = 3e-4
adam_betas = (0.9, 0.999)
adam_eps = 1e-8
clip_range = 0.2
vf_coef = 0.5
ent_coef = 0.01
max_grad_norm = 0.5
epochs = 10
minibatch_size = 64
batch_size = 2048
gamma = 0.99
gae_lambda = 0.95
advantage_eps = 1e-8
log_std_init = 0.0

# policy checkpoint file
checkpoint_magic = b"RRSCKPT1"
checkpoint_version = 1

update_log_columns = [
    "update",
    "env_steps",
    "policy",
    "policy_loss",
    "value_loss",
    "entropy",
    "total_loss",
    "grad_norm",
    "approx_kl",
    "clip_fraction",
]
