"""Regenerates the desk-scale fixture: a synthetic 2-class, 6-feature dataset
(500 train / 200 test rows) and a 20-tree LightGBM binary model dump.

    python3 gen_desk.py
"""
import numpy as np
import lightgbm as lgb

rng = np.random.default_rng(20241016)
n_train, n_test = 500, 200
names = ["pkt_len", "iat_mean", "fwd_pkts", "bwd_pkts", "flow_dur", "flag_cnt"]

def sample(n):
    x = rng.normal(size=(n, 6))
    x[:, 2] = np.abs(x[:, 2]) * 3.0
    x[:, 5] = rng.integers(0, 5, size=n).astype(float)
    logit = 1.5 * x[:, 0] - 1.0 * x[:, 1] + 0.4 * x[:, 2] - 0.8 * x[:, 4] * x[:, 3] + 0.3 * (x[:, 5] - 2)
    y = (logit + rng.normal(scale=0.7, size=n) > 0.6).astype(int)
    return np.round(x, 4), y

xtr, ytr = sample(n_train)
xte, yte = sample(n_test)

params = dict(objective="binary", num_leaves=8, learning_rate=0.2, min_data_in_leaf=10,
              verbose=-1, seed=7, deterministic=True, num_threads=1, use_missing=False)
ds = lgb.Dataset(xtr, label=ytr, feature_name=names)
booster = lgb.train(params, ds, num_boost_round=20)
booster.save_model("desk_model.txt")

def write(path, x, y):
    with open(path, "w") as f:
        f.write(",".join(names + ["label"]) + "\n")
        for row, lab in zip(x, y):
            f.write(",".join(repr(float(v)) for v in row) + f",{lab}\n")

write("desk_train.csv", xtr, ytr)
write("desk_test.csv", xte, yte)

raw = booster.predict(xte, raw_score=True)
np.savetxt("desk_test_raw.txt", raw, fmt="%.17g")
print("test accuracy", ((raw > 0).astype(int) == yte).mean())
