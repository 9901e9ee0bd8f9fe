"""Writes predictions.json and its reference ECE with an independent implementation."""
import json
import random

rng = random.Random(2024)
preds = []
for _ in range(60):
    w = [rng.randint(1, 20) for _ in range(4)]
    w[rng.randrange(4)] += rng.randint(0, 40)
    total = sum(w)
    # rescale to multiples of 1/64 so every value parses exactly
    units = [max(1, round(x * 64 / total)) for x in w]
    units[units.index(max(units))] += 64 - sum(units)
    probs = [u / 64 for u in units]
    preds.append({"probs": probs, "label": rng.randrange(4)})
json.dump(preds, open("predictions.json", "w"), indent=0)

bins = [[0, 0.0, 0] for _ in range(10)]
for p in preds:
    c = max(p["probs"])
    pred = p["probs"].index(c)
    b = min(int(c * 10), 9)
    bins[b][0] += 1
    bins[b][1] += c
    bins[b][2] += pred == p["label"]
ece = sum(n / len(preds) * abs(k / n - s / n) for n, s, k in bins if n)
print(repr(ece))
