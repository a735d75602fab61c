"""Train the two cost models on the demo data and watch the losses move.

Run 01_network_and_data.py first. The schedule pretrains the prefix-cost
recurrent model on observed-path likelihood, then alternates it with the
value-model regression; the checkpoint keeps the best validation-F1 epoch.
"""

import os

from routerec import ModelConfig, TrainConfig, load_dataset, load_network, save_checkpoint
from routerec.training import train

OUT = os.path.join(os.path.dirname(__file__), "out")
net = load_network(os.path.join(OUT, "network.json"))
dataset = load_dataset(os.path.join(OUT, "trajectories.jsonl"), net)

model_cfg = ModelConfig()  # library defaults; see ModelConfig for every knob
train_cfg = TrainConfig(seed=7, pretrain_epochs=12, joint_epochs=2,
                        val_max_expansions=300)

print("training (a few minutes at this size)...")
model, extras, log_rows = train(net, dataset, model_cfg, train_cfg)

print("\nepoch  loss1      loss2      val_f1")
for row in log_rows:
    loss2 = f"{row['loss2']:9.1f}" if row["loss2"] is not None else "        -"
    val = f"{row['val_f1']:.3f}" if row["val_f1"] is not None else "-"
    print(f"{row['epoch']:>5}  {row['loss1']:9.1f}  {loss2}  {val}")

print(f"\ncost-per-meter scale for the distance heuristic: {extras['ed_lambda']:.5f}")
ckpt = os.path.join(OUT, "model.json")
save_checkpoint(model, ckpt, extras=extras)
print(f"checkpoint written to {ckpt}")
