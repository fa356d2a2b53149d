import dataclasses
from typing import Any, Callable, Tuple


def accepted_keywords(cls: type) -> set[str]:
    """
    Return the keyword names a dataclass constructor accepts (its init fields).

    Raises
    ------
    TypeError
        If ``cls`` is not a dataclass type.
    """
    if not (dataclasses.is_dataclass(cls) and isinstance(cls, type)):
        raise TypeError(f"{cls!r} is not a dataclass type.")
    return {f.name for f in dataclasses.fields(cls) if f.init}


def safe_call(
    func: Callable,
    params: dict[str, Any],
    valid_params: set[str],
    **fixed_kwargs,
) -> Tuple[Any, dict[str, Any]]:
    """
    Call a function with only the compatible entries of a parameter mapping.

    Used to route the flat configuration mapping onto the individual
    configuration dataclasses: each constructor takes the keys it knows and
    the rest are handed back so the caller can offer them to the next
    consumer or report them as unknown.

    Parameters
    ----------
    func : Callable
        Target function or class constructor (e.g. a builder for ``ModelConfig``).
    params : dict[str, Any]
        Candidate keyword arguments.
    valid_params : set[str]
        Keys ``func`` accepts, usually ``accepted_keywords`` of the target
        dataclass.
    **fixed_kwargs : Any
        Arguments passed regardless of filtering. A key present both here
        and in ``params`` is taken from ``fixed_kwargs`` and the ``params``
        value is returned as rejected.

    Returns
    -------
    result : Any
        The value returned by ``func``.
    rejected : dict[str, Any]
        Entries of ``params`` that were not passed on.
    """
    accepted = {k: v for k, v in params.items() if k in valid_params}
    rejected = {k: v for k, v in params.items() if k not in valid_params}

    for key in fixed_kwargs:
        if key in accepted:
            rejected[key] = accepted.pop(key)

    result = func(**fixed_kwargs, **accepted)
    return result, rejected
