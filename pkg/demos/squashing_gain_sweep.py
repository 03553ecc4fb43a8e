"""Noise squashing in an in-loop measurement.

Velocity feedback derived from a noisy position record feeds the sensor
noise back onto the particle.  The in-loop spectrum then dips below the
sensor noise floor near resonance once the gain passes the optimum, even
though the true motion only grows.  This script sweeps the feedback gain
over three decades on a scaled oscillator (Q = 100 so the line is
resolvable in seconds of data) and overlays the analytic in-loop model.

Runs in about half a minute:

    python3 demos/squashing_gain_sweep.py --save squashing.png
"""

from __future__ import annotations

import argparse
import math

import numpy as np

from levisim import (
    DerivativeFeedback,
    OscillatorMode,
    SimConfig,
    estimate_psd,
    measured_psd_with_squashing,
    optimal_gain,
    simulate,
)
from scipy.constants import k as kB

MASS = 5.999918369580907e-9     # [kg] 6 ug nominal sphere
F0 = 160.0                      # [Hz]
ASD_FLOOR = 955e-12             # [m/sqrt(Hz)] sensor noise floor


def sweep(seconds: float, seed: int):
    mode = OscillatorMode.from_frequency(MASS, F0, 100.0)
    s_eps = ASD_FLOOR**2 / 2.0
    # pick the force noise so the optimal gain lands at 13 rad/s
    gain_opt = 13.0
    s_fn = ((gain_opt + mode.gamma) ** 2 - mode.gamma**2) \
        * mode.m**2 * mode.omega0**2 * s_eps
    assert abs(optimal_gain(s_fn, s_eps, mode) / gain_opt - 1.0) < 1e-9
    temperature = s_fn / (2.0 * mode.gamma * mode.m * kB)

    fs = 32768.0
    sigma = math.sqrt(s_eps * fs)
    results = []
    for index, gain in enumerate(gain_opt * np.array([0.1, 1.0, 10.0])):
        rng = np.random.default_rng(seed + index)
        controller = DerivativeFeedback(gain=float(gain)).controller(mode, fs)
        config = SimConfig(dt=1.0 / fs, sample_rate=fs, duration=seconds,
                           seed=seed + 100 + index, modes=(mode,),
                           bath_temperature=temperature, axes=("z",))
        traj = simulate(config, controller=controller,
                        sensor=lambda t, x: x + rng.normal(0.0, sigma),
                        controlled_axis="z")
        meas = traj.measurement[int(2.0 * fs):]   # discard the transient
        spec = estimate_psd(meas, fs, nperseg=16384)
        model = 2.0 * measured_psd_with_squashing(
            2.0 * math.pi * spec.frequencies, mode, float(gain), s_fn, s_eps)
        results.append((float(gain), spec, model))

    at_opt = measured_psd_with_squashing(mode.omega0, mode, gain_opt,
                                         s_fn, s_eps)
    print(f"optimal gain: {gain_opt:.1f} rad/s")
    print(f"in-loop PSD at resonance there: {at_opt:.3e} m^2/Hz "
          f"(= sensor floor {s_eps:.3e})")
    return results, s_eps


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seconds", type=float, default=30.0,
                        help="record length per gain [s]")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--save", help="write the figure here instead of "
                        "opening a window")
    args = parser.parse_args()

    results, s_eps = sweep(args.seconds, args.seed)

    import matplotlib
    if args.save:
        matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    for gain, spec, model in results:
        sel = (spec.frequencies > 40.0) & (spec.frequencies < 640.0)
        line, = ax.loglog(spec.frequencies[sel], spec.psd[sel],
                          alpha=0.5, label=f"gain {gain:.1f} rad/s")
        ax.loglog(spec.frequencies[sel], model[sel], "--",
                  color=line.get_color())
    ax.axhline(2.0 * s_eps, color="k", lw=0.8, label="sensor noise floor")
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("in-loop PSD [m$^2$/Hz]")
    ax.set_title("in-loop spectrum vs feedback gain (dashed: model)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=150)
        print(f"wrote {args.save}")
    else:
        plt.show()


if __name__ == "__main__":
    main()
