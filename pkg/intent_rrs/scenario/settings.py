# slice-type catalog, one dict per row
# thr_req: Mbps, lat_req: ms, rel_req: %, buffer_capacity: packets,
# max_buffer_latency: ms (= TTIs), packet_size: bits, speed: km/h,
# traffic_mean: Mbps. None marks an intent the slice type does not have.
catalog_default = [
    {
        "name": "Control case 2",
        "high_priority": True,
        "thr_req": None,
        "lat_req": 50.0,
        "rel_req": 99.999999,
        "buffer_capacity": 10240,
        "max_buffer_latency": 100,
        "packet_size": 8192,
        "speed": 0.0,
        "traffic_mean": 5.0,
        "ue_min": 4,
        "ue_max": 5,
    },
    {
        "name": "Monitoring case 1",
        "high_priority": False,
        "thr_req": 10.0,
        "lat_req": None,
        "rel_req": None,
        "buffer_capacity": 10240,
        "max_buffer_latency": 100,
        "packet_size": 8192,
        "speed": 72.0,
        "traffic_mean": 10.0,
        "ue_min": 4,
        "ue_max": 5,
    },
    {
        "name": "Robotic surgery case 1",
        "high_priority": True,
        "thr_req": 20.0,
        "lat_req": 20.0,
        "rel_req": 99.9999,
        "buffer_capacity": 1024000,
        "max_buffer_latency": 40,
        "packet_size": 16000,
        "speed": 0.0,
        "traffic_mean": 30.0,
        "ue_min": 4,
        "ue_max": 5,
    },
    {
        "name": "Robotic diagnosis",
        "high_priority": False,
        "thr_req": 15.0,
        "lat_req": 20.0,
        "rel_req": 99.999,
        "buffer_capacity": 1024000,
        "max_buffer_latency": 40,
        "packet_size": 640,
        "speed": 0.0,
        "traffic_mean": 15.0,
        "ue_min": 4,
        "ue_max": 5,
    },
    {
        "name": "Medical monitoring",
        "high_priority": False,
        "thr_req": 10.0,
        "lat_req": 100.0,
        "rel_req": 99.9999,
        "buffer_capacity": 10240,
        "max_buffer_latency": 200,
        "packet_size": 8000,
        "speed": 0.0,
        "traffic_mean": 10.0,
        "ue_min": 4,
        "ue_max": 5,
    },
    {
        "name": "UAV app case 1",
        "high_priority": True,
        "thr_req": 100.0,
        "lat_req": 200.0,
        "rel_req": None,
        "buffer_capacity": 1024000,
        "max_buffer_latency": 400,
        "packet_size": 65536,
        "speed": 30.0,
        "traffic_mean": 100.0,
        "ue_min": 2,
        "ue_max": 4,
    },
    {
        "name": "UAV control non-VLOS",
        "high_priority": True,
        "thr_req": 20.0,
        "lat_req": 140.0,
        "rel_req": 99.99,
        "buffer_capacity": 10240,
        "max_buffer_latency": 300,
        "packet_size": 65536,
        "speed": 30.0,
        "traffic_mean": 20.0,
        "ue_min": 4,
        "ue_max": 5,
    },
    {
        "name": "VR gaming",
        "high_priority": False,
        "thr_req": 100.0,
        "lat_req": 10.0,
        "rel_req": 99.99,
        "buffer_capacity": 1024000,
        "max_buffer_latency": 20,
        "packet_size": 65536,
        "speed": 0.0,
        "traffic_mean": 100.0,
        "ue_min": 2,
        "ue_max": 4,
    },
    {
        "name": "Cloud gaming",
        "high_priority": False,
        "thr_req": 50.0,
        "lat_req": 80.0,
        "rel_req": None,
        "buffer_capacity": 10240,
        "max_buffer_latency": 160,
        "packet_size": 65536,
        "speed": 0.0,
        "traffic_mean": 50.0,
        "ue_min": 2,
        "ue_max": 5,
    },
    {
        "name": "Video streaming 4K",
        "high_priority": False,
        "thr_req": 30.0,
        "lat_req": None,
        "rel_req": None,
        "buffer_capacity": 10240,
        "max_buffer_latency": 100,
        "packet_size": 65536,
        "speed": 0.0,
        "traffic_mean": 30.0,
        "ue_min": 2,
        "ue_max": 5,
    },
]

catalog_columns = [
    "name",
    "high_priority",
    "thr_req",
    "lat_req",
    "rel_req",
    "buffer_capacity",
    "max_buffer_latency",
    "packet_size",
    "speed",
    "traffic_mean",
    "ue_min",
    "ue_max",
]

# slice slots in the system and bounds on active slices per scenario
max_slices = 5
min_active_slices = 3
max_active_slices = 5

# cap on UEs in one scenario
max_ues = 25
