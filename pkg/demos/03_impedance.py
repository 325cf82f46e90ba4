"""
Contact impedance, DC and fs/4 excitation
=========================================

A known current through the electrode gives V = I*Z on that channel. DC mode
averages the offset; fs/4 mode correlates with the +,+,-,- pattern, which
ignores half-cell offsets.
"""

from ironstream import subject
from ironstream.ads1299 import AcquisitionConfig
from ironstream.impedance import measure

scenario = subject.builtin_scenario("rest", seed=2)

for z in (1e3, 6e3, 30e3, 200e3):
    montage = subject.default_montage(8).with_kind("gel", z)
    row = [f"{z / 1e3:6.0f} kOhm"]
    for freq in ("dc", "fs_over_4"):
        rep = measure(montage, AcquisitionConfig(lead_off_freq=freq), scenario)[0]
        row.append(f"{freq:>9}: {rep.ohms / 1e3:8.3f} kOhm {rep.quality.value}")
    print("  ".join(row))

# %%
# Dry electrodes default to 200 kOhm.
for rep in measure(subject.default_montage(8, kind="dry"), AcquisitionConfig(lead_off_freq="fs_over_4"), scenario)[:3]:
    print(rep.channel, f"{rep.ohms / 1e3:.1f} kOhm", rep.quality.value)
