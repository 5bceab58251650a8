"""End-to-end command-line pipeline on a synthetic thin-leg table.

Builds a watertight table mesh (one leg deliberately necked so stress
concentrates there), writes a config, then drives the four pipeline
stages plus the report through the command-line interface. Everything
lands in demos/demo_out/.

Runs in a few minutes on one core at the reduced settings below:

    python3 demos/table_pipeline.py
"""

import os

from physhape import cli
from physhape.geometry import extract_mesh
from physhape.mesh import save_obj
from physhape.shapes import table_field

here = os.path.dirname(os.path.abspath(__file__))
out = os.path.join(here, "demo_out")
os.makedirs(out, exist_ok=True)
mesh_path = os.path.join(out, "table.obj")
cfg_path = os.path.join(out, "table.yaml")

print("extracting the synthetic table mesh ...")
save_obj(mesh_path, extract_mesh(table_field(), resolution=64))

with open(cfg_path, "w") as fh:
    fh.write("""\
run:
  mesh: %s
  out: %s
  seed: 0
  name: table
material:
  E: 2.0
  nu: 0.3
boundary:
  dirichlet_band: [2, -1.0, -0.55]
  load_band: [2, 0.52, 0.62]
  pressure: 0.1
fit:
  epochs: 2
  steps_per_epoch: 100
  batch: 4096
  n_samples: 30000
  widths: [3, 48, 48, 1]
sampling:
  N_domain: 1024
  N_u: 128
  N_f: 256
  N_gc: 512
fem:
  resolution: 32
  n_anchors: 800
displacement:
  widths: [3, 12, 12, 3]
pretrain:
  epochs: 300
cotrain:
  epoch_max: 50
  t: 10
  extract_resolution: 32
""" % (mesh_path, out))

for stage in ("fit", "fem", "pretrain", "cotrain", "report"):
    print("--- %s ---" % stage)
    code = cli.run([stage, "--config", cfg_path])
    if code != 0:
        raise SystemExit(code)

print("artifacts in %s" % out)
