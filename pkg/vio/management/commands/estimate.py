"""
Django management command to run the smoother on a dataset directory.
"""
from pathlib import Path

from django.conf import settings

from vio.exceptions import VioError
from vio.services.dataset import read_dataset
from vio.services.pipeline import compute_metrics, estimate, write_estimate, write_metrics

from ._base import EXIT_SOLVER, VioCommand, exit_code_for


class Command(VioCommand):
    help = 'Estimate keyframe states, solver report and marginals for a dataset'
    command_name = 'estimate'

    def add_arguments(self, parser):
        parser.add_argument('dataset', help='Dataset directory written by the simulate command')
        parser.add_argument('--jobs', type=int, default=settings.VIO_DEFAULT_JOBS,
                            help='Worker threads for factor linearization')
        self.add_output_argument(parser)

    def handle(self, *args, **options):
        out = self.output_dir(options)
        dataset_dir = Path(options['dataset'])
        self.start_manifest(out, dataset_dir / 'config.json')
        try:
            config, dataset = read_dataset(dataset_dir)
        except VioError as exc:
            self.fail(out, exit_code_for(exc), f'Cannot read dataset: {exc}')
        self.manifest.config_snapshot = config.resolved
        self.manifest.seeds = [config.seed]
        self.manifest.save()

        try:
            result = estimate(dataset, config, jobs=max(1, options['jobs']))
        except VioError as exc:
            (out / 'FAILED').write_text(f'{exc}\n', encoding='utf-8')
            self.fail(out, exit_code_for(exc), f'Solver failed: {exc}')

        summary = write_estimate(result, dataset, out)
        write_metrics(compute_metrics(dataset, result, config), dataset, out)
        if not result.report.converged:
            (out / 'FAILED').write_text(f'{result.report.message}\n', encoding='utf-8')
            self.fail(out, EXIT_SOLVER, f'Solver did not converge: {result.report.message}')

        self.finish_manifest(out)
        self.stdout.write(self.style.SUCCESS(
            f'Converged in {summary["iterations"]} iterations, final cost '
            f'{summary["final_cost"]:.6g} ({summary["skipped_factors"]} factors skipped) -> {out}'
        ))
