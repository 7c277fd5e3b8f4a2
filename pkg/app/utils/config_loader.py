import logging
from pathlib import Path
from typing import List, Union

import yaml
from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.experiment import ExperimentSpec

logger = logging.getLogger(__name__)


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def parse_experiment_spec(text: str, source: str = "<string>") -> ExperimentSpec:
    """
    Parse a YAML experiment document.

    Raises:
        ConfigError: malformed YAML or schema violation, with the field path
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"{source}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a mapping at the top level")
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {_format_validation_error(e)}") from e


def load_experiment_spec(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read experiment file {path}: {e}") from e
    logger.info(f"Loaded experiment spec from {path}")
    return parse_experiment_spec(text, source=str(path))


def dump_experiment_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec.model_dump(mode="json", exclude_none=True), sort_keys=False)


def parse_edge_list(text: str) -> List[List[float]]:
    """
    Parse 'i j p' lines (p optional, default 1); blank lines and '#' comments are skipped.

    Raises:
        ConfigError: a line that is not two or three numbers
    """
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (2, 3):
            raise ConfigError(f"edge list line {lineno}: expected 'i j [p]', got '{raw.strip()}'")
        try:
            edge = [int(fields[0]), int(fields[1])]
            edge.append(float(fields[2]) if len(fields) == 3 else 1.0)
        except ValueError as e:
            raise ConfigError(f"edge list line {lineno}: {e}") from e
        edges.append(edge)
    return edges


def load_edge_list(path: Union[str, Path]) -> List[List[float]]:
    try:
        return parse_edge_list(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read edge list {path}: {e}") from e
