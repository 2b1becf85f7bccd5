"""Compiled core vs pure-Python fallback on one receding-horizon step.

    python benchmarks/bench_kernels.py [--repeats 20]
"""
import argparse
import json

from hhvems.bench import run_benchmarks

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    print(json.dumps(run_benchmarks(ap.parse_args().repeats), indent=2))
