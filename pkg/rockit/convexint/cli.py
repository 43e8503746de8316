#
# This file is part of the Robotic Observatory Control Kit (rockit)
#
# rockit is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# rockit is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with rockit.  If not, see <http://www.gnu.org/licenses/>.

"""Command line entry point for the verification suites and iteration runs"""

import argparse
import json
import logging
import os
import sys
from .config import Config, resolve_output
from .constants import CheckStatus, CommandStatus
from .report import collect_reports
from .validation import ManifestError


def _load(prefix, args, command_type):
    parser = argparse.ArgumentParser(prefix)
    parser.add_argument('manifest', type=str, help='json run manifest')
    parser.add_argument('--output', type=str, default=None,
                        help='report directory (overrides the manifest)')
    parser.add_argument('--workers', type=int, default=None,
                        help='worker threads (overrides the manifest)')
    args = parser.parse_args(args)

    try:
        config = Config.load(args.manifest)
    except ManifestError as e:
        print('error: invalid manifest:')
        for error in e.errors:
            print('   ' + error)
        return None
    except (OSError, json.JSONDecodeError) as e:
        print(f'error: unable to read manifest {args.manifest}: {e}')
        return None

    if config.command_type.__name__ != command_type:
        print(f'error: {args.manifest} defines a {config.command_type.__name__} command, not {command_type}')
        return None

    return config.create_command(output=args.output, workers=args.workers)


def _run(prefix, args, command_type):
    command = _load(prefix, args, command_type)
    if command is None:
        print(CommandStatus.message(CommandStatus.InvalidManifest))
        return CommandStatus.InvalidManifest

    status = command.run()
    for result in command.report.checks:
        print(f'{CheckStatus.label(result.status):4s} {result.check}: measured {result.measured:.4e} '
              f'bound {result.bound:.4e} {result.detail}'.rstrip())

    failure = command.report.first_failure
    if failure is not None:
        print(f'first failing check: {failure.check}')
    if status != CommandStatus.Succeeded:
        print(CommandStatus.message(status))
    return status


def run_verify_operators(prefix, args):
    """verify the field and calculus operator identities"""
    return _run(prefix, args, 'VerifyOperators')


def run_verify_jets(prefix, args):
    """verify the geometric decomposition, jet identities and scaling laws"""
    return _run(prefix, args, 'VerifyJets')


def run_simulate_noise(prefix, args):
    """run the stochastic convolution ensembles and moment checks"""
    return _run(prefix, args, 'SimulateNoise')


def run_iterate(prefix, args):
    """run the convex integration iteration"""
    return _run(prefix, args, 'Iterate')


def run_report(prefix, args):
    """collect the json reports in a directory into one summary csv"""
    parser = argparse.ArgumentParser(prefix)
    parser.add_argument('directory', type=str, help='directory containing json reports')
    parser.add_argument('--output', type=str, default=None,
                        help='summary csv path (default: <directory>/summary.csv)')
    args = parser.parse_args(args)

    directory = resolve_output(args.directory)
    try:
        table = collect_reports(directory)
    except (OSError, ValueError) as e:
        print(f'error: {e}')
        return CommandStatus.Error

    output = args.output or os.path.join(directory, 'summary.csv')
    table.write(output, format='ascii.csv', overwrite=True)
    table.pprint(max_lines=-1, max_width=-1)

    if not all(table['pass']):
        print(CommandStatus.message(CommandStatus.ChecksFailed))
        return CommandStatus.ChecksFailed
    return CommandStatus.Succeeded


COMMANDS = {
    'verify-operators': run_verify_operators,
    'verify-jets': run_verify_jets,
    'simulate-noise': run_simulate_noise,
    'iterate': run_iterate,
    'report': run_report
}


def print_usage():
    print('usage: convexint <command> [<args>]')
    print()
    print('commands:')
    for name, command in COMMANDS.items():
        print(f'   {name:18s}{command.__doc__}')


def main(argv=None):
    """Dispatches to the named command and returns its exit code"""
    argv = sys.argv[1:] if argv is None else argv
    if not argv or argv[0] not in COMMANDS:
        print_usage()
        return CommandStatus.InvalidManifest

    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    return COMMANDS[argv[0]]('convexint ' + argv[0], argv[1:])


if __name__ == '__main__':
    sys.exit(main())
