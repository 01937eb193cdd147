"""Pairwise dependence as a function of distance on a synthetic network.

Twenty stations carry monthly maxima from a spatial logistic field, inverted
so that pairs are asymptotically independent with a tail dependence
coefficient that decays with distance. Margins are fitted per station with a
seasonal GEV model, pairs are binned by great-circle distance and stacked,
and eta(d) is fitted as a smooth function of distance.
"""

import warnings

from tailproj.harness.pairs import station_pipeline, synthetic_stations

net = synthetic_stations(n_stations=20, n_years=20, seed=1, alpha=0.7,
                         bandwidth_km=80.0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    res = station_pipeline(net.stations, regime="ai")

print(f"{len(res.data)} stacked pair-months from "
      f"{res.data['pair'].nunique()} station pairs")
cur = res.curves[["d", "eta", "eta_lower", "eta_upper"]]
print(cur.iloc[::3].round(3).to_string(index=False))
print("\neta falls from near 1/(2 A(0)) at short range towards 1/2 far apart")
