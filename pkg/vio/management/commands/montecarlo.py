"""
Django management command to run a Monte-Carlo campaign of simulate + estimate
and reduce the runs to NEES, RMSE and bias-tracking curves.
"""
from django.conf import settings

from vio.exceptions import VioError
from vio.models import MonteCarloRun
from vio.services.pipeline import campaign_verdict, run_campaign

from ._base import EXIT_ACCEPTANCE, EXIT_USAGE, VioCommand, exit_code_for


class Command(VioCommand):
    help = 'Run N seeded simulate+estimate runs and evaluate consistency'
    command_name = 'montecarlo'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Experiment config (JSON)')
        parser.add_argument('--runs', type=int, default=50, help='Number of runs')
        parser.add_argument('--seed', type=int, help='First seed (default: config seed)')
        parser.add_argument('--jobs', type=int, default=settings.VIO_DEFAULT_JOBS,
                            help='Runs executed in parallel')
        self.add_output_argument(parser)

    def handle(self, *args, **options):
        if options['runs'] < 1:
            self.fail(None, EXIT_USAGE, '--runs must be at least 1')
        try:
            config_path, config = self.load_config(options)
        except VioError as exc:
            self.fail(None, exit_code_for(exc), f'Invalid config:\n{exc}')

        seeds = [config.seed + k for k in range(options['runs'])]
        out = self.output_dir(options)
        (out / 'config.json').write_text(config.to_json() + '\n', encoding='utf-8')
        manifest = self.start_manifest(out, config_path, config.resolved, seeds)

        self.stdout.write(f'Running {len(seeds)} runs with {options["jobs"]} worker(s)...')
        campaign = run_campaign(config, seeds, out, jobs=max(1, options['jobs']))
        for outcome in campaign.outcomes:
            MonteCarloRun.objects.create(
                manifest=manifest,
                seed=outcome.seed,
                status=outcome.status,
                message=outcome.message,
                iterations=outcome.iterations,
                final_cost=outcome.final_cost,
                output_dir=outcome.output_dir,
            )
            if outcome.status == 'failed':
                self.stdout.write(self.style.WARNING(f'  seed {outcome.seed}: {outcome.message}'))

        verdict = campaign_verdict(campaign, config)
        if verdict['failure_limit_exceeded']:
            self.fail(out, EXIT_ACCEPTANCE,
                      f'{verdict["failed"]} of {verdict["runs"]} runs failed')
        if not verdict.get('nees_accepted', False):
            self.fail(out, EXIT_ACCEPTANCE,
                      f'NEES above {verdict.get("nees_upper", float("nan")):.3f} on '
                      f'{100 * verdict.get("nees_overconfident_fraction", 1.0):.1f}% of keyframes')

        self.finish_manifest(out)
        self.stdout.write(self.style.SUCCESS(
            f'{len(campaign.succeeded)} runs: NEES bounds [{verdict["nees_lower"]:.2f}, '
            f'{verdict["nees_upper"]:.2f}], overconfident on '
            f'{100 * verdict["nees_overconfident_fraction"]:.1f}% of keyframes; '
            f'bias within 3 sigma in {100 * verdict["bias_within_3sigma_fraction"]:.0f}% of runs -> {out}'
        ))
