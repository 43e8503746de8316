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

"""Helper functions for validating json manifests against a schema"""

from fractions import Fraction
import os
import jsonschema


class ManifestError(ValueError):
    """Raised when a run manifest violates its schema"""
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__('invalid manifest:\n' + '\n'.join(self.errors))


def _validator(schema, validators=None):
    keywords = dict(jsonschema.Draft4Validator.VALIDATORS)
    if validators:
        keywords.update(validators)

    cls = jsonschema.validators.extend(jsonschema.Draft4Validator, keywords)
    return cls(schema)


def validation_errors(config_json, schema, validators=None):
    """Returns an iterator of jsonschema.ValidationError for the given json object"""
    return _validator(schema, validators).iter_errors(config_json)


def format_errors(errors):
    """Yields 'path->to->key: message' strings sorted by path"""
    for error in sorted(errors, key=lambda e: [str(p) for p in e.path]):
        if error.path:
            path = '->'.join([str(p) for p in error.path])
            yield path + ': ' + error.message
        else:
            yield error.message


def validate_config(config_json, schema, validators=None, print_exception=False):
    """Raises ManifestError listing every schema violation"""
    errors = list(format_errors(validation_errors(config_json, schema, validators)))
    if errors:
        if print_exception:
            print('error: invalid manifest:')
            for error in errors:
                print('   ' + error)
        raise ManifestError(errors)


# pylint: disable=unused-argument
def even_resolution_validator(validator, value, instance, schema):
    """Validate a grid resolution as an even integer no smaller than 8"""
    if not isinstance(instance, int) or instance < 8 or instance % 2 != 0:
        yield jsonschema.ValidationError(f'{instance} is not an even resolution >= 8')


def toy_row_validator(validator, value, instance, schema):
    """Validate the admissibility of a toy schedule row"""
    if not isinstance(instance, dict) or not value:
        return

    try:
        lam = instance['lambda']
        r_perp = instance['r_perp']
        r_par = instance['r_par']
    except KeyError:
        # Missing keys are reported by 'required'
        return

    product = Fraction(lam).limit_denominator(10**6) * Fraction(r_perp).limit_denominator(10**6)
    if product.denominator != 1 or product <= 0:
        yield jsonschema.ValidationError(f'lambda * r_perp = {float(product)} is not a positive integer')

    if not 0 < r_perp < r_par < 1:
        yield jsonschema.ValidationError(f'r_perp = {r_perp}, r_par = {r_par} violate 0 < r_perp < r_par < 1')

    ell = instance.get('ell')
    if ell is not None and not 0 < ell < 0.5:
        yield jsonschema.ValidationError(f'ell = {ell} is not in (0, 1/2)')


def existing_file_validator(validator, value, instance, schema):
    """Validate a string as a path to an existing file"""
    if value and isinstance(instance, str) and not os.path.isfile(instance):
        yield jsonschema.ValidationError(f'{instance} does not exist')


def increasing_validator(validator, value, instance, schema):
    """Validate a list of numbers as strictly increasing"""
    if value and isinstance(instance, list):
        for a, b in zip(instance, instance[1:]):
            if not b > a:
                yield jsonschema.ValidationError(f'{instance} is not strictly increasing')
                return
# pylint: enable=unused-argument


MANIFEST_VALIDATORS = {
    'even_resolution': even_resolution_validator,
    'toy_row': toy_row_validator,
    'existing_file': existing_file_validator,
    'increasing': increasing_validator
}
