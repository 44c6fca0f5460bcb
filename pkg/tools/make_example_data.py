import argparse, os, sys, pathlib

import pandas as pd

sys.path.insert(0, str(pathlib.Path(os.path.abspath(__file__)).parents[1] / 'src'))
import simlab

# parse arguments
parser = argparse.ArgumentParser(description='Write a simulated data set (response y, predictors x1..xp) to csv')
parser.add_argument('-g', '--generator', type=str, default='sec5_twodim', choices=[g for g in simlab.GENERATORS if g != 'custom'],
                    help='The data generator')
parser.add_argument('-n', '--number', type=int, help='The number of observations (default: the generator default)')
parser.add_argument('-p', '--predictors', type=int, help='The number of predictors (default: the generator default)')
parser.add_argument('-s', '--seed', type=int, default=0, help='The replication seed')
parser.add_argument('-o', '--outfile', type=str, help='The output csv file')
args = parser.parse_args()

if args.outfile is not None:
    outfile = args.outfile
    print(f'The output file is: {args.outfile}')
else:
    outfile = f'{args.generator}_{args.seed}.csv'
    print(f'Use default output file: {outfile}')

os.makedirs(str(pathlib.Path(os.path.abspath(outfile)).parent), exist_ok=True)

gen = simlab.make_generator(args.generator, n=args.number, p=args.predictors, seed=args.seed)
data, truth = simlab.generate(gen)
print(f'Generator {gen.name}: n = {gen.n}, p = {gen.p}, true d = {truth.d}')

df = pd.DataFrame(data.X, columns=[f'x{i + 1}' for i in range(gen.p)])
df.insert(0, 'y', data.y)
df.to_csv(outfile, index=False, float_format='%.10g')
print(f'Write {len(df)} rows to {outfile}')
