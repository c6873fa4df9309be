import intent_rrs.harness.harness as harness
from intent_rrs.scenario.scenario import load_catalog
from intent_rrs.sched.sched import MapfController, MarrController

config = harness.ExperimentConfig.preset(
    "eval-baseline",
    "desk",
    controller="marr",
    ep_test=2,
    steps_per_episode=200,
)
catalog = load_catalog()
_, _, test = harness.make_episodes(config, catalog)

for episode in test:
    print(episode.scenario.scenario_id, episode.scenario.active_indexes)

run = harness.compare(
    [MarrController(), MapfController()], test, config, harness.GridCache()
)
print(harness.summarize(run.data))

demand = harness.demand_analysis(
    test[0].scenario, harness.generate_grid(test[0], steps=200)
)
print(demand.data.describe())
print(harness.classify_demand(demand))
