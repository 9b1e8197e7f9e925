# A short training run, FP teacher then W1A1 student with TBS and SPD,
# then DDIM samples and an MMD score.  Takes a few minutes on one core.
# Run: python3 demos/03_train_and_sample.py [out_dir]

# %%
import json
import sys

from bitdiff.config import RunConfig
from bitdiff.diffusion.data import write_pgm
from bitdiff.evaluate import evaluate_samples
from bitdiff.experiments import sample_checkpoint
from bitdiff.train import run_training

out = sys.argv[1] if len(sys.argv) > 1 else "runs/demo"
iters = 300
base = RunConfig({"train.iters": iters, "train.log_every": 50, "train.ckpt_every": 300, "train.val_size": 128})

# %% full-precision teacher
teacher = run_training(base.replace(model__mode="fp", out_dir=f"{out}/teacher"))
print("teacher val loss:", round(teacher["val_dm_loss"], 4))

# %% binary student, initialised from the teacher, distilled from it
cfg = base.replace(
    out_dir=f"{out}/student", model__init=teacher["checkpoint"], model__act_mode="bidm_learnable_k",
    tbs__enabled=True, spd__enabled=True, spd__teacher=teacher["checkpoint"],
)
student = run_training(cfg)
print("student val loss:", round(student["val_dm_loss"], 4))
for line in open(student["metrics"]):
    print(" ", json.loads(line))

# %% samples and MMD against fresh sprites
samples = sample_checkpoint(cfg, student["checkpoint"], n=256)
write_pgm(f"{out}/student_samples.pgm", samples[:64])
print(evaluate_samples(samples, "sprites16"))
