import click

from utils.pipeline import STAGES
from . import report_bp
from .common import run_options, run_stages


@report_bp.cli.command('report')
@run_options
def report(config_path, out_dir, seed, overrides):
    """Collect the stage outputs into summary.json"""
    run_stages(['report'], config_path, out_dir, seed, overrides)


@report_bp.cli.command('all')
@run_options
def run_all(config_path, out_dir, seed, overrides):
    """Run every stage in order"""
    run_stages(list(STAGES), config_path, out_dir, seed, overrides)
