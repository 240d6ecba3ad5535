"""Independent reference implementations used as test oracles.

Everything here is written straight from the model definitions in mpmath
(or plain Python loops) and shares no code with the package.
"""
import mpmath

DPS = 50
EPS = mpmath.mpf("1e-12")


def _prec():
    # never lower the precision a caller (e.g. mpmath.diff) has raised
    return mpmath.workdps(max(mpmath.mp.dps, DPS))


def sigmoid(z):
    with _prec():
        return 1 / (1 + mpmath.exp(-mpmath.mpf(z)))


def clamp(p, eps):
    return min(max(p, eps), 1 - eps)


def regime(gap, beta, alpha, gamma, tau_a, tau_p, kappa, eps=EPS, clip=True):
    """Full probability bundle at extended precision."""
    with _prec():
        g = mpmath.mpf(gap)
        eps = mpmath.mpf(eps)
        s = sigmoid(beta * g)
        z = mpmath.mpf(alpha) * (abs(g) - mpmath.mpf(tau_a)) + mpmath.mpf(gamma) * (s - mpmath.mpf(tau_p))
        m = sigmoid(z)
        p_mn = mpmath.mpf(kappa) * m
        if clip:
            p_mn = clamp(p_mn, eps)
        p_fr = (1 - p_mn) * s
        p_np = (1 - p_mn) * (1 - s)
        if clip:
            p_fr, p_np = clamp(p_fr, eps), clamp(p_np, eps)
        return {"p_fr_lat": s, "z_mn": z, "p_mn_lat": m, "p_mn": p_mn,
                "p_fr": p_fr, "p_np": p_np}


def derivative(gap, key, order, beta, alpha, gamma, tau_a, tau_p, kappa):
    """d^order/dgap^order of an unclamped map entry by mpmath's own
    numerical differentiation (adaptive step, extended precision)."""
    with _prec():
        return mpmath.diff(
            lambda g: regime(g, beta, alpha, gamma, tau_a, tau_p, kappa, clip=False)[key],
            mpmath.mpf(gap), order)


def neg_logpost(G, alpha, gamma, kappa, labels, lam, beta=1.0, tau_a=0.8, tau_p=0.4,
                lam_alpha=1.0, lam_gamma=1.0, lam_kappa=1.0, gauge_w=100.0, eps=1e-12):
    """Line-by-line MAP objective at extended precision; returns the total
    and its four components."""
    with _prec():
        sig_rw = mpmath.sqrt(mpmath.mpf("0.5") / mpmath.mpf(lam))
        nll = mpmath.mpf(0)
        for g, lab in zip(G, labels):
            p = regime(g, beta, alpha, gamma, tau_a, tau_p, kappa, eps=eps)
            py = {"NP": p["p_np"], "FR": p["p_fr"], "MN": p["p_mn"]}[lab]
            nll -= mpmath.log(clamp(py, mpmath.mpf(eps)))
        pen_rw = mpmath.mpf(0)
        for a, b in zip(G, G[1:]):
            pen_rw += (mpmath.mpf(b) - mpmath.mpf(a)) ** 2
        pen_rw = mpmath.mpf("0.5") * pen_rw / sig_rw ** 2
        mean = mpmath.fsum(mpmath.mpf(g) for g in G) / len(G)
        gauge = mpmath.mpf(gauge_w) * mean ** 2
        l2 = mpmath.mpf("0.5") * (mpmath.mpf(lam_alpha) * mpmath.mpf(alpha) ** 2
                                  + mpmath.mpf(lam_gamma) * mpmath.mpf(gamma) ** 2
                                  + mpmath.mpf(lam_kappa) * mpmath.mpf(kappa) ** 2)
        return nll + pen_rw + gauge + l2, (nll, pen_rw, gauge, l2)


def recount(labels):
    """Per-position (NP, FR, MN) counts by rescanning the prefix each time."""
    out = []
    for t in range(1, len(labels) + 1):
        prefix = labels[:t]
        out.append((prefix.count("NP"), prefix.count("FR"), prefix.count("MN")))
    return out


def window_shares(labels, window):
    """Per-position shares over the trailing window, by direct rescan."""
    out = []
    for t in range(1, len(labels) + 1):
        chunk = labels[max(0, t - window):t]
        n = len(chunk)
        out.append((chunk.count("NP") / n, chunk.count("FR") / n, chunk.count("MN") / n))
    return out
