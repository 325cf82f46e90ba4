"""
Register file and lead-off comparators
======================================
"""

from ironstream import ads1299, subject
from ironstream.ads1299 import ADDRESS, AcquisitionConfig, RegisterFile

rf = RegisterFile()
print(f"ID 0x{rf['ID']:02X}, CONFIG1 0x{rf['CONFIG1']:02X} -> {rf.data_rate} SPS")

# Gain lives in CHnSET bits 6:4; code 6 is x24.
ads1299.write_register(rf, ADDRESS["CH1SET"], 0b0110_0000)
print("CH1 gain", rf.gain(0))

# Read-only registers ignore writes.
ads1299.write_register(rf, ADDRESS["LOFF_STATP"], 0xFF)
print(f"LOFF_STATP after write 0x{rf['LOFF_STATP']:02X}, ignored writes {rf.ignored_writes}")

# %%
# The acquisition programs the registers from its config. A 1 MOhm
# electrode on channel 3 drives 6 mV of DC excitation past the comparator.
montage = subject.default_montage(8)
chans = list(montage.channels)
chans[2] = subject.ElectrodeModel(chans[2].label, "gel", 1e6)
montage = subject.Montage(tuple(chans), occipital_set=montage.occipital_set, frontal_set=montage.frontal_set)

cfg = AcquisitionConfig(lead_off_channels=frozenset(range(8)), lead_off_current=6e-9)
acq = ads1299.Acquisition(subject.builtin_scenario("rest"), montage, cfg)
block = acq.read_block(250)
prefix, statp, statn, gpio = ads1299.status_fields(int(block.status[-1]))
print(f"status prefix 0x{prefix:X}, LOFF_STATP {statp:08b}")
