"""Stage graph of a run: train-quantizer -> prune -> solve -> simulate -> bounds -> report.

Each stage reads its inputs from the artifact store (verified against the
manifest) and writes its outputs back, so any stage can resume from disk.
"""
from dataclasses import dataclass, asdict
import logging

import numpy as np

from config import config_hash, save_config
from models import bounds, dp, quantizer, simulation
from models.density import FactorGrid, Kernels, normalize, prior_density
from models.market import irra_utilities
from utils.errors import MissingArtifactError

logger = logging.getLogger(__name__)

STAGES = ('train-quantizer', 'prune', 'solve', 'simulate', 'bounds', 'report')
TRAINING_SEED_OFFSET = 7919

BENCHMARKS = {
    'all_bank': (0.0, 0.0),
    'consume_20pct': (0.2, 0.0),
    'all_risky': (0.0, 1.0),
}

# published behaviour of the worked example, reported next to the simulated figures
REFERENCE_FIGURES = {
    'first_two_consumption_fraction': 0.5,
    'terminal_wealth': 0.0,
}


@dataclass(eq=False)
class ModelContext:
    """Objects every stage builds from the run configuration"""
    cfg: object
    params: object
    utilities: object
    grid: FactorGrid
    kernels: Kernels
    prior: object
    x_grid: np.ndarray
    fractions: np.ndarray
    return_nodes: object

    @property
    def seeds(self):
        return {'seed': self.cfg.seed, 'training_seed': self.cfg.seed + TRAINING_SEED_OFFSET}

    def grids(self, q):
        return dp.StateGrids(self.x_grid, q, self.return_nodes, self.fractions, self.fractions)


def build_context(cfg):
    params = cfg.model
    g = cfg.grids
    grid = FactorGrid.uniform(g.factor.lo, g.factor.hi, g.factor.step)
    prior_cfg = cfg.quantizer.prior
    return ModelContext(
        cfg=cfg,
        params=params,
        utilities=irra_utilities(**asdict(cfg.utilities)),
        grid=grid,
        kernels=Kernels(params, grid),
        prior=prior_density(grid, prior_cfg.kind, prior_cfg.mean, prior_cfg.std, params),
        x_grid=dp.wealth_grid(g.wealth.lo, g.wealth.hi, g.wealth.step),
        fractions=dp.control_fractions(g.control_step),
        return_nodes=quantizer.ReturnNodeSet.equispaced(
            params.phi, g.return_nodes.count, g.return_nodes.half_width),
    )


def _support(q):
    lo, hi = quantizer.essential_support(q)
    return {'lo': lo, 'hi': hi}


def train_quantizer_stage(ctx, store):
    cfg = ctx.cfg.quantizer
    q0 = quantizer.build_initial_codebook(cfg.means, cfg.stds, ctx.grid)
    sampler = quantizer.FilterPathSampler(ctx.params, ctx.kernels, ctx.prior,
                                          ctx.seeds['training_seed'])
    result = quantizer.train(q0, cfg.schedule, sampler, ctx.kernels, cfg.update_rule,
                             cfg.projection_norm,
                             normalize_targets=ctx.cfg.dp.belief_state == 'normalized',
                             reseed_window=cfg.reseed_window)
    half = len(result.distortion_sup) // 2
    store.write_csv('train-quantizer', 'initial_codebook.csv', quantizer.codebook_to_frame(q0))
    store.write_csv('train-quantizer', 'codebook.csv', quantizer.codebook_to_frame(result.quantizer))
    store.write_csv('train-quantizer', 'distortion_trace.csv', result.trace_frame())
    store.write_json('train-quantizer', 'training.json', {
        'rows': q0.size,
        'iterations': cfg.schedule.iterations,
        'update_rule': cfg.update_rule,
        'dead_rows': result.dead,
        'reseeded_rows': result.reseeded,
        'retired_rows': result.retired,
        'wins': result.wins.tolist(),
        'training_paths': sampler.paths_used,
        'leading_half_distortion': float(result.distortion_sup[:half].mean()) if half else None,
        'trailing_half_distortion': float(result.distortion_sup[half:].mean()),
        'initial_support': _support(q0),
        'trained_support': _support(result.quantizer),
    })
    return result


def load_trained(ctx, store):
    return quantizer.codebook_from_frame(store.read_csv('train-quantizer', 'codebook.csv'), ctx.grid)


def prune_stage(ctx, store):
    cfg = ctx.cfg.quantizer
    trained = load_trained(ctx, store)
    result = quantizer.prune(trained, cfg.prune_eps, cfg.prune_trials, ctx.cfg.seed)
    store.write_csv('prune', 'codebook.csv', quantizer.codebook_to_frame(result.quantizer))
    store.write_csv('prune', 'removal_log.csv', result.log_frame())
    store.write_json('prune', 'prune.json', {
        'rows_before': trained.size,
        'rows_after': result.quantizer.size,
        'kept': result.kept.tolist(),
        'states_per_period': len(ctx.x_grid) * result.quantizer.size,
        'support': _support(result.quantizer),
    })
    return result


def load_pruned(ctx, store):
    return quantizer.codebook_from_frame(store.read_csv('prune', 'codebook.csv'), ctx.grid)


def _initial_state(ctx, grids):
    return dp.locate_state(ctx.params.x0, normalize(ctx.prior), grids)


def solve_stage(ctx, store):
    q = load_pruned(ctx, store)
    grids = ctx.grids(q)
    values, policy = dp.solve(grids, ctx.params, ctx.utilities, ctx.kernels,
                              belief_state=ctx.cfg.dp.belief_state,
                              normalize_terminal=ctx.cfg.dp.normalize_terminal)
    i0, k0 = _initial_state(ctx, grids)
    store.write_csv('solve', 'tables.csv', dp.tables_to_frame(values, policy, grids))
    store.write_json('solve', 'solve.json', {
        'periods': int(ctx.params.T),
        'states_per_period': grids.n_states,
        'control_pairs': len(grids.pairs),
        'belief_state': ctx.cfg.dp.belief_state,
        'saturated': values.saturated,
        'exit_share': values.exit_share,
        'initial_state': {'x_index': i0, 'codebook_index': k0},
        'initial_value': float(values(0, i0, k0)),
    })
    return values, policy


def load_tables(store):
    return dp.tables_from_frame(store.read_csv('solve', 'tables.csv'))


def simulate_stage(ctx, store):
    cfg = ctx.cfg.sim
    q = load_pruned(ctx, store)
    grids = ctx.grids(q)
    values, policy = load_tables(store)
    result = simulation.rollout(policy, grids, ctx.params, ctx.utilities, ctx.kernels, ctx.prior,
                                cfg.n_paths, ctx.cfg.seed, renormalize_filter=cfg.renormalize_filter)
    summary = simulation.summarize(result, ctx.params)
    i0, k0 = _initial_state(ctx, grids)
    v0 = float(values(0, i0, k0))
    benchmarks = {}
    for name, (c_frac, pi_frac) in BENCHMARKS.items():
        est = simulation.fixed_policy_rollout(c_frac, pi_frac, ctx.params, ctx.utilities,
                                              cfg.n_paths, ctx.cfg.seed)
        benchmarks[name] = {'mean': est.mean, 'se': est.se, 'dominated': est.mean <= v0 + 3 * est.se}
    summary['initial_value'] = v0
    summary['benchmarks'] = benchmarks
    summary['reference_figures'] = REFERENCE_FIGURES
    if result.records:
        store.write_csv('simulate', 'records.csv', simulation.records_to_frame(result.records))
        store.write_csv('simulate', 'histograms.csv',
                        simulation.aggregate(result.records, cfg.bins).to_frame())
    store.write_json('simulate', 'summary.json', summary)
    return summary


def bounds_stage(ctx, store):
    cfg = ctx.cfg.bounds
    store.write_json('bounds', 'appendix.json', bounds.appendix_table(cfg.In_max))
    if not store.has_stage('solve'):
        raise MissingArtifactError('solve', 'the error bound compares against the solved values')
    q = load_pruned(ctx, store)
    grids = ctx.grids(q)
    solved = store.read_json('solve', 'solve.json')
    est, fx, fmax = bounds.bound_inputs(ctx.params, ctx.utilities, ctx.kernels, q,
                                        ctx.return_nodes, ctx.x_grid, ctx.fractions, ctx.prior,
                                        M0=cfg.M0, seed=ctx.cfg.seed, samples=cfg.fmax_samples)
    n = cfg.n or min(len(ctx.x_grid), q.size)
    report = bounds.model_bound(ctx.params, est, fx, fmax, n).to_dict()
    report.update({
        'n': n,
        'states_per_period': grids.n_states,
        'initial_value': solved['initial_value'],
        'relative_to_initial_value': report['total'] / solved['initial_value']
        if solved['initial_value'] > 0 else None,
        'reference_bound': bounds.REFERENCE_BOUND,
        'f_X_integral': fx,
        'f_max_integral': fmax,
    })
    store.write_json('bounds', 'report.json', report)
    return report


def report_stage(ctx, store):
    summary = {
        'config_hash': config_hash(ctx.cfg),
        'seeds': ctx.seeds,
        'training': store.read_json('train-quantizer', 'training.json'),
        'prune': store.read_json('prune', 'prune.json'),
        'solve': store.read_json('solve', 'solve.json'),
        'simulate': store.read_json('simulate', 'summary.json'),
        'bounds': store.read_json('bounds', 'report.json'),
    }
    store.write_json('report', 'summary.json', summary)
    return summary


STAGE_FUNCS = {
    'train-quantizer': train_quantizer_stage,
    'prune': prune_stage,
    'solve': solve_stage,
    'simulate': simulate_stage,
    'bounds': bounds_stage,
    'report': report_stage,
}


def run_pipeline(cfg, stages, store):
    """Run the requested stages in pipeline order; returns {stage: result}"""
    unknown = [s for s in stages if s not in STAGE_FUNCS]
    if unknown:
        raise ValueError(f'unknown stages {unknown}')
    ctx = build_context(cfg)
    store.begin_run(config_hash(cfg), ctx.seeds)
    save_config(cfg, store.root / 'config.json')
    results = {}
    for stage in sorted(set(stages), key=STAGES.index):
        logger.info('stage %s started', stage)
        store.start_stage(stage)
        results[stage] = STAGE_FUNCS[stage](ctx, store)
        logger.info('stage %s finished', stage)
    return results
