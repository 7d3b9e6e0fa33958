"""Independent scalar re-derivations used as test oracles.

Plain Python floats and explicit loops only; nothing here imports the
vectorized implementations under test.
"""
import math


def dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def norm(u):
    return math.sqrt(dot(u, u))


def h(u, v, tau):
    return math.exp(dot(u, v) / (norm(u) * norm(v)) / tau)


def instance_loss(zf, zs, tau):
    """Enumerate every ordered positive pair (f->s and s->f) and its 2B-2 negatives."""
    B = len(zf)
    views = {"f": zf, "s": zs}
    total, count = 0.0, 0
    for a, b in (("f", "s"), ("s", "f")):
        for i in range(B):
            anchor, positive = views[a][i], views[b][i]
            num = h(anchor, positive, tau)
            den = num
            for k in range(B):
                if k == i:
                    continue
                for p in ("f", "s"):
                    den += h(anchor, views[p][k], tau)
            total += -math.log(num / den)
            count += 1
    return total / count


def group_means(z, labels, C, accept=None):
    means, present = {}, set()
    for l in range(C):
        members = [z[i] for i in range(len(z)) if labels[i] == l and (accept is None or accept[i])]
        if members:
            present.add(l)
            means[l] = [sum(col) / len(members) for col in zip(*members)]
    return means, present


def group_loss(zf, zs, yf, ys, C, tau, af=None, as_=None):
    mf, pf = group_means(zf, yf, C, af)
    ms, ps = group_means(zs, ys, C, as_)
    R = {"f": mf, "s": ms}
    P = {"f": pf, "s": ps}
    total, count = 0.0, 0
    for l in range(C):
        if l not in pf or l not in ps:
            continue
        for a, b in (("f", "s"), ("s", "f")):
            anchor, positive = R[a][l], R[b][l]
            num = h(anchor, positive, tau)
            den = num
            for m in range(C):
                if m == l:
                    continue
                for p in ("f", "s"):
                    if m in P[p]:
                        den += h(anchor, R[p][m], tau)
            total += -math.log(num / den)
            count += 1
    return total / count if count else 0.0


def smoothed_ce(logits, label, eps):
    C = len(logits)
    mx = max(logits)
    lse = mx + math.log(sum(math.exp(x - mx) for x in logits))
    q = [(1 - eps) * (1.0 if c == label else 0.0) + eps / C for c in range(C)]
    return -sum(q[c] * (logits[c] - lse) for c in range(C))


def softmax(row):
    mx = max(row)
    e = [math.exp(x - mx) for x in row]
    s = sum(e)
    return [x / s for x in e]


def segments_by_enumeration(T, M):
    """Assign every frame t to the segment i with floor(i*T/M) <= t < floor((i+1)*T/M)."""
    segs = [[] for _ in range(M)]
    for t in range(T):
        for i in range(M):
            if (i * T) // M <= t < ((i + 1) * T) // M:
                segs[i].append(t)
    return segs
