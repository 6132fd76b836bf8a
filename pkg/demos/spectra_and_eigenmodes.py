# Steady-state reflection of the cavity-magnon-bus system and the two-mode
# eigenfrequencies obtained after eliminating the bus.
import numpy as np

from magbus.model import REFERENCE, mhz_to_rad_ns, rad_ns_to_mhz
from magbus.spectral import (
    effective_coupling,
    hybrid_eigenfrequencies,
    s11,
    sweep_spectrum,
)

cfg = REFERENCE.config(g_mt_mhz=0.75 * 50.8 / 9.8)
print("cavity", rad_ns_to_mhz(cfg.cavity.omega), "MHz, bus", rad_ns_to_mhz(cfg.buses[0].omega_t), "MHz")

# with the bus on resonance the mediated coupling is purely imaginary
ec = effective_coupling(cfg, cfg.buses[0].omega_t)
print("g_eff / 2pi = {:.4f}i MHz".format(rad_ns_to_mhz(ec.g_eff.imag)), "real part", ec.g_eff.real)

# |S11| at a few probe frequencies
probe = np.linspace(4990.0, 5034.0, 9)
for f, s in zip(probe, s11(cfg, mhz_to_rad_ns(probe))):
    print(f"  {f:8.2f} MHz  {20 * np.log10(abs(s)):7.2f} dB")

# eigenfrequencies across a magnon sweep: real parts stick together near f_c
for f_m in (4992.0, 5007.0, 5012.0, 5017.0, 5032.0):
    e = hybrid_eigenfrequencies(cfg.with_magnon(omega=mhz_to_rad_ns(f_m)))
    plus, minus = rad_ns_to_mhz(e.omega_plus.real), rad_ns_to_mhz(e.omega_minus.real)
    print(f"f_m={f_m:7.1f}  Re w+={plus:9.3f}  Re w-={minus:9.3f}  {e.regime}")

# the full grid, as the CLI would emit it
grid = sweep_spectrum(cfg, "f_m", np.linspace(4962, 5062, 51), np.linspace(4962, 5062, 101))
db = grid.db()
print("grid", db.shape, "deepest dip", db.min().round(2), "dB")
