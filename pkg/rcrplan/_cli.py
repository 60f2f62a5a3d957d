#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

import os
from contextlib import contextmanager
from pathlib import Path
from typing import Type
from typing import TypeVar

import orjson
import platformdirs
import typer
from pydantic import BaseModel
from pydantic import ValidationError

from rcrplan.errors import ArtifactError
from rcrplan.errors import RcrplanError

M = TypeVar("M", bound=BaseModel)


def default_run_dir() -> Path:
    """RCRPLAN_HOME or the per user data directory"""
    home = os.environ.get("RCRPLAN_HOME")
    if home:
        return Path(home)
    return platformdirs.user_data_path("rcrplan")


def json_dumps(data) -> str:
    """serialize more datatypes"""
    return orjson.dumps(
        data,
        option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY,
    ).decode()


def json_loads(string):
    """deserialize json"""
    return orjson.loads(string)


def write_json(path: str | os.PathLike, data) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json_dumps(data) + "\n")


def load_model_file(model: Type[M], path: str | os.PathLike | None) -> M:
    """a pydantic config from a json file, defaults when path is None"""
    if path is None:
        return model()
    try:
        with open(path, "rb") as f:
            return model.parse_obj(json_loads(f.read()))
    except OSError as err:
        raise ArtifactError(f"cannot read config: {err}", path=os.fspath(path)) from err


def _fail(payload: dict, code: int, summary: str) -> None:
    typer.echo(json_dumps(payload), err=True)
    typer.secho(summary, fg=typer.colors.RED, err=True)
    raise typer.Exit(code=code)


@contextmanager
def typerize_error():
    """map library errors to exit codes and a json payload on stderr"""
    try:
        yield
    except RcrplanError as err:
        _fail(err.to_dict(), err.exit_code, f"{type(err).__name__}: {err}")
    except ValidationError as err:
        payload = {"error": "ValidationError", "message": str(err)}
        _fail(payload, 2, f"ValidationError: {err}")
    except orjson.JSONDecodeError as err:
        payload = {"error": "JSONDecodeError", "message": str(err)}
        _fail(payload, 2, f"JSONDecodeError: {err}")
