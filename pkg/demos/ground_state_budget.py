# How many photons does ground-state cooling take?
#
# Plot the feedback-cooled phonon occupation against detected photon flux
# for free-space interferometric readout and for a single-sided cavity at
# three finesses.  Each curve first falls as imprecision shrinks, reaches
# a minimum, and turns back up once measurement back-action dominates;
# the cavity moves the n < 1 threshold down by roughly F^2.
#
# Runs in under a second:  python3 demos/ground_state_budget.py --save fig.png

import argparse

import numpy as np

from levisim import (
    CavitySpec,
    OscillatorMode,
    cooled_occupation_cavity,
    cooled_occupation_freespace,
    min_input_flux_cavity,
    min_input_flux_freespace,
    photon_flux_to_power,
)

MASS = 5.999918369580907e-9   # [kg]
FREQ = 200.0                  # [Hz] mechanical mode
Q = 2.6e7

parser = argparse.ArgumentParser()
parser.add_argument("--save", help="write the figure here instead of "
                    "opening a window")
args = parser.parse_args()

mode = OscillatorMode.from_frequency(MASS, FREQ, Q)

# free space: 637 nm, unit efficiency, 3 K bath
n_fs = min_input_flux_freespace(mode, 3.0, 637e-9, 1.0)
print(f"free-space threshold: {n_fs:.2e} photons/s "
      f"({photon_flux_to_power(n_fs, 637e-9) * 1e3:.0f} mW)")
flux_fs = n_fs * np.logspace(-2, 2, 200)
occ_fs = cooled_occupation_freespace(mode, 3.0, 637e-9, 1.0, flux_fs)

# cavity: 1550 nm, 75% detection, 15 mK bath; the length drops out
curves = []
for finesse in (1e4, 1e5, 1e6):
    n_cav = min_input_flux_cavity(mode, 0.015, 1.55e-6, finesse, 0.75)
    print(f"cavity F = {finesse:.0e}: {n_cav:.2e} photons/s "
          f"({photon_flux_to_power(n_cav, 1.55e-6) * 1e12:.2f} pW)")
    cavity = CavitySpec(wavelength=1.55e-6, length=0.01, finesse=finesse,
                        eta_det=0.75)
    flux = n_cav * np.logspace(-2, 2, 200)
    occ = cooled_occupation_cavity(mode, 0.015, cavity, flux)
    curves.append((finesse, flux, occ))

import matplotlib
if args.save:
    matplotlib.use("Agg")
import matplotlib.pyplot as plt

fig, ax = plt.subplots(figsize=(6.5, 5))
ax.loglog(photon_flux_to_power(flux_fs, 637e-9), occ_fs,
          label="free space, 3 K")
for finesse, flux, occ in curves:
    ax.loglog(photon_flux_to_power(flux, 1.55e-6), occ,
              label=f"cavity F = {finesse:.0e}, 15 mK")
ax.axhline(1.0, color="k", lw=0.8)
ax.text(2e-16, 1.15, "ground state", fontsize=8)
ax.set_xlabel("input optical power [W]")
ax.set_ylabel("phonon occupation")
ax.set_title("cooling limit vs photon budget")
ax.legend(fontsize=8)
fig.tight_layout()
if args.save:
    fig.savefig(args.save, dpi=150)
    print(f"wrote {args.save}")
else:
    plt.show()
