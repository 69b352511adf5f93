import click

from . import solver_bp
from .common import run_options, run_stages


@solver_bp.cli.command('solve')
@run_options
def solve(config_path, out_dir, seed, overrides):
    """Backward induction over (wealth node, codebook row) states"""
    results = run_stages(['solve'], config_path, out_dir, seed, overrides)
    values, _ = results['solve']
    click.echo(f'{values.T} periods, {values.values.shape[1] * values.values.shape[2]} states '
               f'per period, {values.saturated} transitions extrapolated past the top wealth node '
               f'({100 * values.exit_share:.2f}% of next-period mass)')
