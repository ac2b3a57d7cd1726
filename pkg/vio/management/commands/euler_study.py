"""
Django management command comparing Euler-angle and SO(3) rotation integration.
"""
import numpy as np

from vio.services.dataset import write_csv
from vio.services.evaluation import (
    euler_kl_study, fairness_check, integration_error_study,
)

from ._base import EXIT_ACCEPTANCE, VioCommand

RATES = (1.0, 2.0, 3.0)
DTS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05)
PITCHES = (0.0, 30.0, 60.0, 80.0, 85.0, 87.0, 89.0)
# Euler KL must exceed the SO(3) KL by this factor at the steepest pitch
KL_RATIO = 10.0


class Command(VioCommand):
    help = 'Integration-error, covariance KL and fairness curves of Euler vs SO(3)'
    command_name = 'euler_study'

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--samples', type=int, default=10000,
                            help='Monte-Carlo samples for the reference covariance')
        self.add_output_argument(parser)

    def handle(self, *args, **options):
        out = self.output_dir(options)
        self.start_manifest(out, seeds=[options['seed']])

        rows = integration_error_study(RATES, DTS)
        write_csv(out / 'integration_error.csv', ['rate', 'dt', 'euler_error', 'so3_error'],
                  ([r['rate'], r['dt'], r['euler_error'], r['so3_error']] for r in rows))

        kl = euler_kl_study(PITCHES, samples=options['samples'], seed=options['seed'])
        write_csv(out / 'kl.csv', ['pitch_deg', 'kl_euler', 'kl_so3'],
                  ([r['pitch_deg'], r['kl_euler'], r['kl_so3']] for r in kl))

        so3, euler = fairness_check(np.diag([0.05, 0.05, 0.05]) ** 2, seed=options['seed'])
        write_csv(out / 'fairness.csv', ['parametrization', 'nll_min', 'nll_max', 'nll_std'],
                  [['so3', so3.min(), so3.max(), so3.std()],
                   ['euler', euler.min(), euler.max(), euler.std()]])

        last = kl[-1]
        if last['kl_euler'] < KL_RATIO * last['kl_so3']:
            self.fail(out, EXIT_ACCEPTANCE,
                      f'at pitch {last["pitch_deg"]:.0f} deg Euler KL {last["kl_euler"]:.3g} is not '
                      f'{KL_RATIO:.0f}x the SO(3) KL {last["kl_so3"]:.3g}')

        self.finish_manifest(out)
        worst_so3 = max(r['so3_error'] for r in rows)
        self.stdout.write(self.style.SUCCESS(
            f'SO(3) integration error <= {worst_so3:.2e} rad; at pitch {last["pitch_deg"]:.0f} deg '
            f'KL Euler {last["kl_euler"]:.3g} vs SO(3) {last["kl_so3"]:.3g} -> {out}'
        ))
