# Quality factors from a synthetic reflection trace, and where the YIG sphere
# has to sit on the microstrip for a given coupling phase.
import numpy as np

from magbus.fitting import S11Trace, extract_q, synthesize_trace
from magbus.model import q_to_gamma, rad_ns_to_mhz
from magbus.phase import REFERENCE_MICROSTRIP, microstrip, spatial_phase_offset

f0 = 98.6 * 50.8
f = np.linspace(f0 - 250, f0 + 250, 401)
trace = synthesize_trace(f0, 98.6, 120.3, f, prefactor=0.9 * np.exp(0.3j), delay_ns=2.0)
rng = np.random.default_rng(0)
noisy = S11Trace(f, trace.s11 + 0.01 * (rng.normal(size=f.size) + 1j * rng.normal(size=f.size)))

fit = extract_q(noisy)
print(f"f0 {fit.f0_mhz:.2f} MHz  Q_L {fit.q_loaded:.1f}  Q_i {fit.q_internal:.1f}  "
      f"Q_c {fit.q_coupling:.1f}  ({fit.coupling_regime})")
print("external fraction", round(fit.external_fraction, 3))

rates = q_to_gamma(fit.f0_mhz, fit.q_loaded, fit.q_internal, fit.q_coupling)
print("gamma_t/2pi", round(rad_ns_to_mhz(rates.gamma_t), 2), "MHz")

ms = microstrip(REFERENCE_MICROSTRIP, 5000.0)
print(f"eps_eff {ms.eps_eff:.3f}  lambda_g {ms.lambda_g:.2f} mm")
for x in (0.0, 4.21, ms.node_antinode_spacing, ms.node_spacing):
    print(f"x = {x:6.2f} mm -> phi0 = {spatial_phase_offset(x, ms.lambda_g):6.1f} deg")
