import sys

import click

from commands.scan_commands import scan_command, zones_command
from commands.simulate_commands import simulate_command, calibrate_command
from commands.baseline_commands import fit_command
from utils.logger import logger


class ScanCLI(click.Group):
    """
    Exit codes: 0 success, 2 null rejected at alpha, 1 any error.

    Click reports usage errors with code 2, which would collide with the
    alerting code, so they are remapped to 1 here.
    """

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                              standalone_mode=False, **extra)
        except click.ClickException as e:
            e.show()
            sys.exit(1)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)
        sys.exit(rv if isinstance(rv, int) else 0)


@click.group(cls=ScanCLI)
@click.version_option("1.0.0", prog_name="ebzip")
def cli():
    """Expectation-based zero-inflated Poisson space-time scan statistic"""


# Register commands
cli.add_command(scan_command)
cli.add_command(zones_command)
cli.add_command(calibrate_command)
cli.add_command(simulate_command)
cli.add_command(fit_command)


if __name__ == "__main__":
    logger.debug("Starting ebzip CLI")
    cli()
