"""
Django management command to generate a synthetic visual-inertial dataset.
"""
from vio.exceptions import VioError
from vio.services.dataset import write_dataset
from vio.services.simulator import simulate

from ._base import VioCommand, exit_code_for


class Command(VioCommand):
    help = 'Simulate a dataset (IMU stream, keyframes, landmark tracks) from a config file'
    command_name = 'simulate'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Experiment config (JSON)')
        parser.add_argument('--seed', type=int, help='Override the config seed')
        self.add_output_argument(parser)

    def handle(self, *args, **options):
        try:
            config_path, config = self.load_config(options)
        except VioError as exc:
            self.fail(None, exit_code_for(exc), f'Invalid config:\n{exc}')

        out = self.output_dir(options)
        self.start_manifest(out, config_path, config.resolved, [config.seed])
        try:
            dataset = simulate(config.trajectory, config.sim)
            write_dataset(dataset, config, out)
        except VioError as exc:
            self.fail(out, exit_code_for(exc), str(exc))

        self.finish_manifest(out)
        self.stdout.write(self.style.SUCCESS(
            f'Simulated {dataset.num_keyframes} keyframes, {len(dataset.imu_samples)} IMU samples, '
            f'{len(dataset.tracks)} tracks -> {out}'
        ))
