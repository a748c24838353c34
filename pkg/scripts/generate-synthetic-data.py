#! /usr/bin/env python3
# SPDX-License-Identifier: GPL-3.0+

import argparse
import sys

from fracseir.client.reporting import write_case_series
from fracseir.processor.error import SolverError
from fracseir.processor.synthetic import DEFAULT_POPULATION, generate_case_series


parser = argparse.ArgumentParser(
    description='Generate a daily case-count CSV from the fractional SEIR system')
parser.add_argument('--output', type=str, default='data/synthetic_cases.csv',
                    help='The CSV file to write')
parser.add_argument('--alpha', type=float, default=0.8, help='The fractional order')
parser.add_argument('--beta', type=float, default=0.25, help='The transmission rate (1/day)')
parser.add_argument('--mu', type=float, default=0.05, help='The removal rate (1/day)')
parser.add_argument('--days', type=int, default=37, help='The number of days')
parser.add_argument('--population', type=float, default=DEFAULT_POPULATION,
                    help='The total population')
args = parser.parse_args()

try:
    series, _ = generate_case_series(alpha=args.alpha, beta=args.beta, mu=args.mu,
                                     population=args.population, n_days=args.days)
except SolverError as error:
    print('The solver failed with the following:\n{}'.format(error), file=sys.stderr)
    sys.exit(3)

write_case_series(series, args.output)
print(f'Wrote {len(series)} days to {args.output}')
