"""
Shared plumbing of the vio management commands: output directories, run
manifests and the mapping from library errors to exit codes.
"""
import json
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from vio import __version__
from vio.exceptions import (
    CheiralityError, ConfigError, DatasetFormatError, DegenerateFactorError, InvalidInputError,
    SingularCovarianceError, SingularSystemError,
)
from vio.models import RunManifest
from vio.services.configuration import load_config

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3
EXIT_ACCEPTANCE = 4


def exit_code_for(exc):
    if isinstance(exc, (ConfigError, InvalidInputError)):
        return EXIT_USAGE
    if isinstance(exc, DatasetFormatError):
        return EXIT_DATA
    if isinstance(exc, (SingularSystemError, SingularCovarianceError, DegenerateFactorError,
                        CheiralityError)):
        return EXIT_SOLVER
    return EXIT_USAGE


class VioCommand(BaseCommand):
    """Base class recording a RunManifest for every invocation."""
    command_name = None
    manifest = None

    def add_output_argument(self, parser):
        parser.add_argument('--out', help='Output directory (default: $VIO_OUTPUT_DIR/<command>)')

    def output_dir(self, options):
        out = options.get('out') or Path(settings.VIO_OUTPUT_DIR) / self.command_name
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        return out

    def resolve_config_path(self, name):
        path = Path(name)
        if not path.exists() and (Path(settings.VIO_CONFIG_DIR) / name).exists():
            path = Path(settings.VIO_CONFIG_DIR) / name
        return path

    def load_config(self, options):
        path = self.resolve_config_path(options['config'])
        config = load_config(path)
        if options.get('seed') is not None:
            config = config.with_seed(options['seed'])
        return path, config

    def start_manifest(self, out, config_path='', snapshot=None, seeds=None):
        self.manifest = RunManifest.objects.create(
            command=self.command_name,
            config_path=str(config_path),
            config_snapshot=snapshot or {},
            seeds=list(seeds or []),
            output_dir=str(out),
            tool_version=__version__,
        )
        self.write_manifest_file(out)
        return self.manifest

    def finish_manifest(self, out, exit_code=0, message=''):
        manifest = self.manifest
        manifest.status = 'succeeded' if exit_code == 0 else 'failed'
        manifest.exit_code = exit_code
        manifest.message = message
        manifest.finished_at = timezone.now()
        manifest.save()
        self.write_manifest_file(out)

    def write_manifest_file(self, out):
        m = self.manifest
        data = {
            'command': m.command,
            'config_path': m.config_path,
            'seeds': m.seeds,
            'output_dir': m.output_dir,
            'status': m.status,
            'exit_code': m.exit_code,
            'message': m.message,
            'tool_version': m.tool_version,
            'started_at': m.started_at.isoformat() if m.started_at else None,
            'finished_at': m.finished_at.isoformat() if m.finished_at else None,
        }
        (Path(out) / 'manifest.json').write_text(json.dumps(data, indent=2) + '\n', encoding='utf-8')

    def fail(self, out, code, message):
        """Close the manifest (if any) and abort with the given exit code."""
        if self.manifest is not None and out is not None:
            self.finish_manifest(out, code, message)
        raise CommandError(message, returncode=code)
