#!/usr/bin/env python3
"""
firlab: FIR least-squares / regularized least-squares asymptotics lab

Simulates FIR system-identification datasets, computes LS and RLS estimates,
and checks them against their large-sample theory by Monte Carlo.

Usage:
    python main.py simulate --config exp.json           # Write dataset CSVs
    python main.py estimate --config exp.json --dataset output/dataset_N100_rep0.csv
    python main.py verify --config exp.json --suites as,clt --workers 4
    python main.py report output/verify_report.json -f markdown
"""

from cli import main

if __name__ == "__main__":
    exit(main())
