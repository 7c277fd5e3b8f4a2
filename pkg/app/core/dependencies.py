from pathlib import Path

from fastapi import HTTPException, status

from app.core import config
from app.core.errors import ConfigError, DgtdError, UnknownPreset
from app.services.presets import Scenario, preset


def get_output_dir() -> Path:
    """Root directory under which API-launched experiments write their files"""
    return Path(config.OUTPUT_DIR)


def get_scenario(name: str) -> Scenario:
    """
    Dependency resolving the {name} path parameter to a preset scenario.
    Unknown names give 404.
    """
    try:
        return preset(name)
    except UnknownPreset as e:
        raise HTTPException(status_code=status.HTTP_404_NOT_FOUND, detail=str(e))


def domain_http_error(error: DgtdError) -> HTTPException:
    """404 for unknown presets, 400 for bad configuration, 422 for every other domain error"""
    if isinstance(error, UnknownPreset):
        code = status.HTTP_404_NOT_FOUND
    elif isinstance(error, ConfigError):
        code = status.HTTP_400_BAD_REQUEST
    else:
        code = status.HTTP_422_UNPROCESSABLE_ENTITY
    return HTTPException(status_code=code, detail=f"{type(error).__name__}: {error}")
