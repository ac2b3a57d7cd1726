"""
Django management command to check every analytic Jacobian against finite differences.
"""
from vio.services.diagnostics import DEFAULT_TOL, run_jacobian_suite

from ._base import EXIT_ACCEPTANCE, VioCommand


class Command(VioCommand):
    help = 'Compare analytic Jacobians with central finite differences'
    command_name = 'jacobian_check'

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--tol', type=float, default=DEFAULT_TOL,
                            help='Maximum relative error per block')
        parser.add_argument('--configurations', type=int, default=100,
                            help='Random state/measurement configurations')
        self.add_output_argument(parser)

    def handle(self, *args, **options):
        out = self.output_dir(options)
        self.start_manifest(out, seeds=[options['seed']])
        checks = run_jacobian_suite(options['configurations'], options['seed'], options['tol'])

        lines = ['block,max_error,passed']
        width = max(len(c.block) for c in checks)
        for check in checks:
            lines.append(f'{check.block},{check.max_error:.6e},{int(check.passed)}')
            style = self.style.SUCCESS if check.passed else self.style.ERROR
            self.stdout.write(style(f'{check.block:<{width}}  {check.max_error:.3e}  '
                                    f'{"ok" if check.passed else "FAIL"}'))
        (out / 'jacobians.csv').write_text('\n'.join(lines) + '\n', encoding='utf-8')

        failed = [c.block for c in checks if not c.passed]
        if failed:
            self.fail(out, EXIT_ACCEPTANCE, f'Jacobian check failed for: {", ".join(failed)}')
        self.finish_manifest(out)
        self.stdout.write(self.style.SUCCESS(f'All {len(checks)} Jacobian blocks within {options["tol"]:g}'))
