"""Test mAP of the baseline, +context and full rows on mixed-difficulty scenes.

About 18 minutes per seed.

Run: python3 demos/05_ablation_rows.py [seed]
"""
import sys

from contexthoi.experiments import ablation

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
for name, score in ablation(seed).items():
    print(f"{name:18s} mAP {score:.4f}")
