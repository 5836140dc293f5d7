import math
from typing import Any, List, Optional

from typing_extensions import TypedDict

from .logger import logger
from .errors import InvalidParamError

class ParamValidation(TypedDict, total=False):
    input: Any
    param_name: str
    is_number: bool
    positive: bool
    non_negative: bool
    min_value: Optional[float]
    max_value: Optional[float]
    is_int: bool

def validate_function_params(params: List[ParamValidation], function_name: str) -> None:
    for param in params:
        value = param.get('input')
        name = param['param_name']
        if value is None:
            logger.info(f"Validation failed: {name} in {function_name} is null")
            raise InvalidParamError(f"{name} passed to {function_name} must not be null.")

        if param.get('is_int', False):
            if isinstance(value, bool) or not isinstance(value, int):
                logger.info(f"Validation failed: {name} in {function_name} is not an integer")
                raise InvalidParamError(f"{name} passed to {function_name} must be an integer.")

        needs_number = (param.get('is_number', False) or param.get('positive', False)
                        or param.get('non_negative', False)
                        or param.get('min_value') is not None or param.get('max_value') is not None)
        if not needs_number:
            continue

        try:
            number = float(value)
        except (TypeError, ValueError) as e:
            logger.info(f"Validation failed: {name} in {function_name} is not a number")
            raise InvalidParamError(f"{name} passed to {function_name} must be a number.", e)

        if not math.isfinite(number):
            logger.info(f"Validation failed: {name} in {function_name} is not finite")
            raise InvalidParamError(f"{name} passed to {function_name} must be finite.")

        if param.get('positive', False) and number <= 0:
            logger.info(f"Validation failed: {name} in {function_name} is not positive: {number}")
            raise InvalidParamError(f"{name} passed to {function_name} must be positive.")

        if param.get('non_negative', False) and number < 0:
            logger.info(f"Validation failed: {name} in {function_name} is negative: {number}")
            raise InvalidParamError(f"{name} passed to {function_name} must not be negative.")

        low = param.get('min_value')
        if low is not None and number < low:
            logger.info(f"Validation failed: {name} in {function_name} below {low}: {number}")
            raise InvalidParamError(f"{name} passed to {function_name} must be >= {low}.")

        high = param.get('max_value')
        if high is not None and number > high:
            logger.info(f"Validation failed: {name} in {function_name} above {high}: {number}")
            raise InvalidParamError(f"{name} passed to {function_name} must be <= {high}.")
