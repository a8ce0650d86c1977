import argparse
import json
import os
import sys
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from config import NEURAL_MECHANISMS, Config, ExperimentSpec, TrainConfig, env, format_validation_error
from core.auction import AuctionConfig, support_bounds
from core.dataset import ProfileCache, generate
from core.report import append_result, result_row, write_report
from core.trainer import Trainer, evaluate
from mechanisms.affine import AffineMaximizer, vcg
from mechanisms.base import Mechanism
from mechanisms.factory import build_mechanism, load_mechanism
from mechanisms.search import GridSpec, SearchResult, grid_search_ama, local_search_ama, monte_carlo_revenue
from utils.error_handler import CaforgeError, ConfigurationError, ValidationError, exit_code_for
from utils.logging import setup_logger
from utils.rng import RandomStreams

logger = setup_logger('main')

# CLI flag -> TrainConfig field
TRAIN_FLAGS = {
    'iters': ('iterations', int),
    'batch_size': ('batch_size', int),
    'inner_steps': ('inner_steps', int),
    'validation_inner_steps': ('validation_inner_steps', int),
    'lr': ('lr', float),
    'misreport_lr': ('misreport_lr', float),
    'weight_lr': ('weight_lr', float),
    'rho': ('rho', float),
    'theta': ('theta', float),
    'alpha': ('alpha', float),
    'rgt_start': ('rgt_start', float),
    'rgt_end': ('rgt_end', float),
    'dataset_size': ('dataset_size', int),
    'validation_interval': ('validation_interval', int),
    'validation_samples': ('validation_samples', int),
    'checkpoint_interval': ('checkpoint_interval', int),
    'log_interval': ('log_interval', int),
    'hidden_layers': ('hidden_layers', int),
    'hidden_units': ('hidden_units', int),
    'd_model': ('d_model', int),
    'heads': ('heads', int),
    'positional_mode': ('positional_mode', str),
    'mask_mode': ('mask_mode', str),
    'misreport_domain': ('misreport_domain', str),
    'regret_aggregation': ('regret_aggregation', str),
}


def _flag_default(dest: str, default: Any = None) -> Any:
    return env(dest, default)


def _env_flag(dest: str) -> bool:
    return str(env(dest, '')).lower() in ('1', 'true', 'yes', 'on')


class ExperimentRunner:
    """Runs one CLI sub-command and returns a JSON-serializable summary"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.streams = RandomStreams(args.seed)

    # --- spec resolution ---
    def train_config(self) -> TrainConfig:
        overrides: Dict[str, Any] = {'seed': self.args.seed}
        for flag, (field, _) in TRAIN_FLAGS.items():
            value = getattr(self.args, flag, None)
            if value is not None:
                overrides[field] = value
        for flag in ('on_the_fly', 'parallel_validation', 'normalize_item_projection'):
            if getattr(self.args, flag, False):
                overrides[flag] = True
        config_path = getattr(self.args, 'config', None)
        if config_path:
            try:
                return TrainConfig.from_file(config_path, **overrides)
            except PydanticValidationError:
                raise
            except (OSError, ValueError) as e:
                raise ConfigurationError(f'Cannot read config file {config_path}: {e}')
        return TrainConfig(**overrides)

    def spec(self, n: Optional[int] = None, m: Optional[int] = None) -> ExperimentSpec:
        try:
            return ExperimentSpec(
                setting=self.args.setting,
                n=n if n is not None else self.args.n,
                m=m if m is not None else self.args.m,
                mechanism=getattr(self.args, 'mechanism', 'canet'),
                output_dir=self.args.output_dir,
                seed=self.args.seed,
                train=self.train_config(),
            )
        except PydanticValidationError as e:
            raise ConfigurationError(format_validation_error(e))

    # --- commands ---
    def cmd_gen(self) -> Dict[str, Any]:
        spec = self.spec()
        if self.args.count <= 0:
            raise ConfigurationError(f'--count must be positive, got {self.args.count}')
        config = AuctionConfig(spec.n, spec.m)
        directory = os.path.join(spec.output_dir, f'data_{spec.setting}_{spec.scale}_seed{spec.seed}')
        profile = generate(spec.setting, config, self.args.count, self.streams.generator('dataset'))
        cache = os.path.join(directory, 'profiles.bin')
        manifest = ProfileCache.write(cache, profile.values, {
            'setting': spec.setting, 'n': spec.n, 'm': spec.m, 'seed': spec.seed, 'count': self.args.count,
        })
        preview = os.path.join(directory, 'preview.csv')
        ProfileCache.export_csv(preview, profile.values[:self.args.preview])
        return {'cache': cache, 'preview': preview, **manifest}

    def cmd_train(self) -> Dict[str, Any]:
        spec = self.spec()
        if not spec.is_neural:
            raise ConfigurationError(f'{spec.mechanism} is not trainable; use eval for baselines')
        run_dir = os.path.join(spec.output_dir, f'{spec.mechanism}_{spec.setting}_{spec.scale}_seed{spec.seed}')
        profiles = None
        if self.args.profiles:
            profiles = self._read_profiles(spec)
        mechanism = build_mechanism(spec, self.streams.generator('init'))
        trainer = Trainer(mechanism, spec, run_dir, self.streams, profiles=profiles)
        result = trainer.train()
        return {'run_dir': run_dir, **asdict(result)}

    def _read_profiles(self, spec: ExperimentSpec) -> np.ndarray:
        """Load a --profiles cache, rejecting one generated for another setting or scale"""
        values, manifest = ProfileCache.read(self.args.profiles)
        expected = {'setting': spec.setting, 'n': spec.n, 'm': spec.m}
        found = {key: manifest.get(key) for key in expected}
        k = AuctionConfig(spec.n, spec.m).k
        if found != expected or values.shape[1:] != (spec.n, k):
            raise ConfigurationError(f'Profile cache {self.args.profiles} holds {found}, shape '
                                     f'{list(values.shape)}; experiment needs {expected}')
        return values

    def _baseline(self,
                  spec: ExperimentSpec,
                  config: AuctionConfig) -> Tuple[Mechanism, Optional[SearchResult]]:
        if spec.mechanism == 'vcg':
            return vcg(config), None
        train_values = generate(spec.setting, config, self.args.baseline_train,
                                self.streams.generator('baseline')).values
        if spec.mechanism in ('ama', 'vvca'):
            try:
                grid = GridSpec(weights=self.args.grid_weights, boost_min=self.args.boost_min,
                                boost_max=self.args.boost_max, boost_step=self.args.boost_step)
            except PydanticValidationError as e:
                raise ConfigurationError(format_validation_error(e))
            result = grid_search_ama(spec.setting, config, grid, train_values, kind=spec.mechanism)
        else:
            result = local_search_ama(spec.setting, config, train_values, kind=self.args.family,
                                      restarts=self.args.restarts, seed=spec.seed,
                                      eval_samples=self.args.baseline_samples,
                                      rng=self.streams.generator('baseline_eval'), workers=Config.WORKERS)
        logger.info(f'{spec.mechanism} parameters: {json.dumps(result.params.to_dict())}')
        return AffineMaximizer(config, result.params, spec.mechanism), result

    def cmd_eval(self) -> Dict[str, Any]:
        mechanism_kind = self.args.mechanism
        search: Optional[SearchResult] = None
        if mechanism_kind in NEURAL_MECHANISMS:
            if not self.args.checkpoint:
                raise ConfigurationError('--checkpoint is required to evaluate a neural mechanism')
            mechanism: Mechanism = load_mechanism(self.args.checkpoint)
            for flag, actual in (('n', mechanism.config.n), ('m', mechanism.config.m)):
                requested = getattr(self.args, flag)
                if requested is not None and requested != actual:
                    raise ValidationError(f'Checkpoint has {flag}={actual}, requested {flag}={requested}')
            spec = self.spec(mechanism.config.n, mechanism.config.m)
            config = mechanism.config
        else:
            spec = self.spec(self.args.n or 2, self.args.m or 2)
            config = AuctionConfig(spec.n, spec.m)
            mechanism, search = self._baseline(spec, config)

        values = generate(spec.setting, config, self.args.samples, self.streams.generator('eval')).values
        bounds = support_bounds(spec.setting, config, spec.train.misreport_domain)
        report = evaluate(mechanism, values, bounds, self.args.inner, spec.train.misreport_lr,
                          self.streams.sequence('eval'), spec.train.misreport_noise,
                          workers=self.args.workers)
        metrics = report.to_dict()
        revenue, samples = report.revenue, report.samples
        if not spec.is_neural and self.args.baseline_samples:
            if search is not None and search.eval_revenue is not None:
                revenue = search.eval_revenue
                metrics.update(search.eval_summary())
            else:
                revenue = monte_carlo_revenue(mechanism, spec.setting, self.args.baseline_samples,
                                              self.streams.generator('baseline_eval'))
            samples = self.args.baseline_samples
            metrics['monte_carlo_revenue'] = revenue

        os.makedirs(spec.output_dir, exist_ok=True)
        name = f'eval_{spec.mechanism}_{spec.setting}_{spec.scale}_seed{spec.seed}'
        metrics_path = os.path.join(spec.output_dir, f'{name}.json')
        with open(metrics_path, 'w') as f:
            json.dump({'spec': spec.model_dump(exclude={'train'}), 'metrics': metrics}, f, indent=2, sort_keys=True)
        if self.args.debug and spec.is_neural:
            mechanism(values[:1]).feasible.dump(os.path.join(spec.output_dir, f'{name}_allocation.json'))

        append_result(self.args.results, result_row(
            spec.mechanism, spec.setting, spec.n, spec.m, revenue, report.rgt_mean, samples, spec.seed))
        return {'metrics_path': metrics_path, 'results': self.args.results, **metrics, 'revenue': revenue}

    def cmd_report(self) -> Dict[str, Any]:
        md_path, csv_path = write_report(self.args.results, self.args.output_dir)
        with open(md_path) as f:
            print(f.read())
        return {'markdown': md_path, 'csv': csv_path}


def _add_common(parser: argparse.ArgumentParser, dims_required: bool = True) -> None:
    parser.add_argument('--setting', type=str.upper, choices=['A', 'B', 'C'],
                        default=_flag_default('setting', 'A'), help='Valuation setting')
    dim_default = 2 if dims_required else None
    parser.add_argument('--n', type=int, default=_flag_default('n', dim_default), help='Number of bidders')
    parser.add_argument('--m', type=int, default=_flag_default('m', dim_default), help='Number of items')
    parser.add_argument('--seed', type=int, default=_flag_default('seed', Config.SEED))
    parser.add_argument('--output-dir', default=_flag_default('output_dir', Config.OUTPUT_DIR))


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', default=_flag_default('config'), help='TrainConfig JSON or TOML file')
    for flag, (_, kind) in TRAIN_FLAGS.items():
        parser.add_argument(f'--{flag.replace("_", "-")}', dest=flag, type=kind, default=_flag_default(flag))
    parser.add_argument('--on-the-fly', action='store_true', default=_env_flag('on_the_fly'))
    parser.add_argument('--parallel-validation', action='store_true', default=_env_flag('parallel_validation'))
    parser.add_argument('--normalize-item-projection', action='store_true',
                        default=_env_flag('normalize_item_projection'))


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(prog='caforge',
                                     description='Learn and evaluate combinatorial auction mechanisms')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen', help='Generate a valuation profile cache')
    _add_common(gen)
    gen.add_argument('--count', type=int, default=_flag_default('count', Config.TRAIN_PROFILES))
    gen.add_argument('--preview', type=int, default=_flag_default('preview', 100),
                     help='Profiles written to the CSV preview')

    train = commands.add_parser('train', help='Train a neural mechanism')
    _add_common(train)
    train.add_argument('--mechanism', '--mech', dest='mechanism', choices=list(NEURAL_MECHANISMS),
                       default=_flag_default('mechanism', 'canet'))
    train.add_argument('--profiles', default=_flag_default('profiles'), help='Existing profile cache')
    _add_train_flags(train)

    ev = commands.add_parser('eval', help='Evaluate a checkpoint or a baseline')
    _add_common(ev, dims_required=False)
    ev.add_argument('--mechanism', '--mech', dest='mechanism',
                    choices=['canet', 'caformer', 'vcg', 'ama', 'vvca', 'local_ama'],
                    default=_flag_default('mechanism', 'vcg'))
    ev.add_argument('--checkpoint', default=_flag_default('checkpoint'))
    ev.add_argument('--samples', type=int, default=_flag_default('samples', Config.TEST_PROFILES))
    ev.add_argument('--inner', type=int, default=_flag_default('inner', 1000), help='Misreport steps')
    ev.add_argument('--baseline-samples', type=int,
                    default=_flag_default('baseline_samples', Config.BASELINE_EVAL_PROFILES),
                    help='Monte Carlo profiles for baseline revenue (0 to reuse --samples)')
    ev.add_argument('--baseline-train', type=int,
                    default=_flag_default('baseline_train', Config.BASELINE_TRAIN_PROFILES))
    ev.add_argument('--grid-weights', type=float, nargs='+', default=[0.5, 0.75, 1.0, 1.25, 1.5])
    ev.add_argument('--boost-min', type=float, default=_flag_default('boost_min', 0.0))
    ev.add_argument('--boost-max', type=float, default=_flag_default('boost_max', 2.0))
    ev.add_argument('--boost-step', type=float, default=_flag_default('boost_step', 0.1))
    ev.add_argument('--family', choices=['ama', 'vvca'], default=_flag_default('family', 'ama'),
                    help='Parameterization searched by local_ama')
    ev.add_argument('--restarts', type=int, default=_flag_default('restarts', 10))
    ev.add_argument('--workers', type=int, default=_flag_default('workers', Config.WORKERS))
    ev.add_argument('--results', default=_flag_default('results', os.path.join(Config.OUTPUT_DIR, 'results.csv')))
    ev.add_argument('--debug', action='store_true', default=_env_flag('debug'),
                    help='Dump feasible-allocation intermediates as JSON')
    _add_train_flags(ev)

    report = commands.add_parser('report', help='Render the results CSV as tables')
    report.add_argument('--results', default=_flag_default('results', os.path.join(Config.OUTPUT_DIR, 'results.csv')))
    report.add_argument('--output-dir', default=_flag_default('output_dir', Config.OUTPUT_DIR))
    report.add_argument('--seed', type=int, default=Config.SEED)

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    args = parse_arguments(argv)
    runner = ExperimentRunner(args)
    try:
        summary = getattr(runner, f'cmd_{args.command}')()
    except (CaforgeError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f'{args.command} failed: {e}')
        return code
    print(json.dumps(summary, indent=2, default=str))
    return 0


if __name__ == '__main__':
    sys.exit(main())
