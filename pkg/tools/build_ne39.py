"""Build the bundled 10-machine network-reduced parameter file.

Runs a power flow on the 39-bus New England case (pandapower), converts
loads to constant admittances, attaches each generator's transient
reactance behind its terminal bus, and Kron-reduces to the 10 internal
EMF nodes.  Mechanical powers are set to the electrical powers at the
power-flow angles so that the initial point is an exact equilibrium.

    python3 tools/build_ne39.py [output.json]

pandapower is only needed to regenerate the file, not at runtime.
"""
import json
import sys
from pathlib import Path

import numpy as np
import pandapower as pp
import pandapower.networks as pn

# Machine data on the 100 MVA system base, generators at buses 30..39.
H = [42.0, 30.3, 35.8, 28.6, 26.0, 34.8, 26.4, 24.3, 34.5, 500.0]
XD = [0.031, 0.0697, 0.0531, 0.0436, 0.132, 0.05, 0.049, 0.057, 0.057, 0.006]
F_S = 60.0
D_DEFAULT = 0.5


def reduce_network():
    net = pn.case39()
    pp.runpp(net)
    base = net.sn_mva
    lookup = net._pd2ppc_lookups["bus"]
    Y = np.asarray(net._ppc["internal"]["Ybus"].todense())
    nb = len(net.bus)
    order = np.array([lookup[b] for b in net.bus.index])
    Y = Y[np.ix_(order, order)]

    V = net.res_bus.vm_pu.values * np.exp(1j * np.deg2rad(net.res_bus.va_degree.values))
    for _, ld in net.load.iterrows():
        b = net.bus.index.get_loc(ld.bus)
        S = (ld.p_mw + 1j * ld.q_mvar) / base
        Y[b, b] += np.conj(S) / abs(V[b]) ** 2

    gens = []
    for idx, g in net.gen.iterrows():
        gens.append((g.bus, (net.res_gen.p_mw[idx] + 1j * net.res_gen.q_mvar[idx]) / base))
    for idx, g in net.ext_grid.iterrows():
        gens.append((g.bus, (net.res_ext_grid.p_mw[idx] + 1j * net.res_ext_grid.q_mvar[idx]) / base))
    gens.sort(key=lambda t: t[0])
    m = len(gens)
    assert m == len(H)

    E = np.empty(m, dtype=complex)
    Ygg = np.zeros((m, m), dtype=complex)
    Ygb = np.zeros((m, nb), dtype=complex)
    Ybb = Y.copy()
    for k, (bus, S) in enumerate(gens):
        b = net.bus.index.get_loc(bus)
        I = np.conj(S / V[b])
        E[k] = V[b] + 1j * XD[k] * I
        y = 1.0 / (1j * XD[k])
        Ygg[k, k] = y
        Ygb[k, b] = -y
        Ybb[b, b] += y
    Yred = Ygg - Ygb @ np.linalg.solve(Ybb, Ygb.T)
    return Yred, E


def build():
    Yred, Ec = reduce_network()
    G, B = Yred.real, Yred.imag
    E = np.abs(Ec)
    delta = np.angle(Ec)
    d = delta[:, None] - delta[None, :]
    Pe = np.sum(E[:, None] * E[None, :] * (G * np.cos(d) + B * np.sin(d)), axis=1)
    m = len(E)
    return {
        "model": "network_swing",
        "description": "39-bus New England system reduced to 10 generator internal nodes "
                       "(classical machines, constant-admittance loads, 100 MVA base)",
        "params": {"H": H, "f_s": F_S, "D": [D_DEFAULT] * m, "P_m": Pe.tolist(),
                   "E": E.tolist(), "G": G.tolist(), "B": B.tolist()},
        "equilibrium": {"delta": delta.tolist(), "omega": [0.0] * m},
    }


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parents[1] / "src" / "transtab" / "data" / "ne39.json"
    doc = build()
    out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {out}")
