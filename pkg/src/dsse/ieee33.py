"""Embedded 33-bus radial test feeder (Baran-Wu data).

Physical units as published: branch impedances in ohms, loads in kW/kVAr,
12.66 kV feeder modeled on a 10 MVA system base. Bus 1 of the published
table is the substation (slack) bus; ids here are already 0-based.
"""

BASE_MVA = 10.0
BASE_KV = 12.66

# (from_bus, to_bus, r_ohm, x_ohm), 0-based ids
BRANCHES = (
    (0, 1, 0.0922, 0.0470),
    (1, 2, 0.4930, 0.2511),
    (2, 3, 0.3660, 0.1864),
    (3, 4, 0.3811, 0.1941),
    (4, 5, 0.8190, 0.7070),
    (5, 6, 0.1872, 0.6188),
    (6, 7, 0.7114, 0.2351),
    (7, 8, 1.0300, 0.7400),
    (8, 9, 1.0440, 0.7400),
    (9, 10, 0.1966, 0.0650),
    (10, 11, 0.3744, 0.1238),
    (11, 12, 1.4680, 1.1550),
    (12, 13, 0.5416, 0.7129),
    (13, 14, 0.5910, 0.5260),
    (14, 15, 0.7463, 0.5450),
    (15, 16, 1.2890, 1.7210),
    (16, 17, 0.7320, 0.5740),
    (1, 18, 0.1640, 0.1565),
    (18, 19, 1.5042, 1.3554),
    (19, 20, 0.4095, 0.4784),
    (20, 21, 0.7089, 0.9373),
    (2, 22, 0.4512, 0.3083),
    (22, 23, 0.8980, 0.7091),
    (23, 24, 0.8960, 0.7011),
    (5, 25, 0.2030, 0.1034),
    (25, 26, 0.2842, 0.1447),
    (26, 27, 1.0590, 0.9337),
    (27, 28, 0.8042, 0.7006),
    (28, 29, 0.5075, 0.2585),
    (29, 30, 0.9744, 0.9630),
    (30, 31, 0.3105, 0.3619),
    (31, 32, 0.3410, 0.5302),
)

# (bus, p_load_kw, q_load_kvar), 0-based ids; bus 0 is the slack (no load)
LOADS = (
    (1, 100.0, 60.0),
    (2, 90.0, 40.0),
    (3, 120.0, 80.0),
    (4, 60.0, 30.0),
    (5, 60.0, 20.0),
    (6, 200.0, 100.0),
    (7, 200.0, 100.0),
    (8, 60.0, 20.0),
    (9, 60.0, 20.0),
    (10, 45.0, 30.0),
    (11, 60.0, 35.0),
    (12, 60.0, 35.0),
    (13, 120.0, 80.0),
    (14, 60.0, 10.0),
    (15, 60.0, 20.0),
    (16, 60.0, 20.0),
    (17, 90.0, 40.0),
    (18, 90.0, 40.0),
    (19, 90.0, 40.0),
    (20, 90.0, 40.0),
    (21, 90.0, 40.0),
    (22, 90.0, 50.0),
    (23, 420.0, 200.0),
    (24, 420.0, 200.0),
    (25, 60.0, 25.0),
    (26, 60.0, 25.0),
    (27, 60.0, 20.0),
    (28, 120.0, 70.0),
    (29, 200.0, 600.0),
    (30, 150.0, 70.0),
    (31, 210.0, 100.0),
    (32, 60.0, 40.0),
)
