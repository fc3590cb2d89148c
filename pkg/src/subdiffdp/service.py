"""HTTP facade over the scenario runner.

Endpoints mirror the CLI one to one: the catalogue, document validation, and
suite execution, all in process. Reports come back in the same shape the CLI
writes to report.json; tables are returned inline instead of as CSV files.
"""
from __future__ import annotations

from typing import Any, Optional, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .scenarios import (Scenario, available_builtins, load_scenarios,
                        run_suite)


class ScenarioModel(BaseModel):
    name: str
    kind: str
    inputs: dict = Field(default_factory=dict)
    tolerances: dict = Field(default_factory=dict)
    seed: Optional[int] = None
    refinement: list[int] = Field(default_factory=list)
    strict: bool = False
    description: str = ""


class RunRequest(BaseModel):
    # scenario objects, builtin names, or omitted for the whole catalogue
    scenarios: Optional[list[Union[str, ScenarioModel]]] = None
    seed: Optional[int] = None
    tol_scale: float = Field(default=1.0, gt=0)
    strict: bool = False
    jobs: int = Field(default=1, ge=1, le=16)


class ValidateRequest(BaseModel):
    document: Any


def _resolve(items) -> list[Scenario]:
    if items is None:
        return load_scenarios("builtins")
    doc = {"scenarios": [i if isinstance(i, str) else i.model_dump()
                         for i in items]}
    return load_scenarios(doc)


app = FastAPI(title="subdiffdp", version=__version__,
              description="Set-valued calculus and stochastic control checks")


@app.get("/healthz")
def healthz() -> dict:
    return {"status": "ok", "version": __version__}


@app.get("/builtins")
def builtins() -> list:
    return [{"name": s.name, "kind": s.kind, "description": s.description,
             "seed": s.seed, "strict": s.strict}
            for s in sorted(available_builtins().values(), key=lambda s: s.name)]


@app.post("/validate")
def validate(req: ValidateRequest) -> dict:
    try:
        scenarios = load_scenarios(req.document)
    except ValueError as e:
        return {"valid": False, "count": 0, "errors": [str(e)]}
    return {"valid": True, "count": len(scenarios),
            "names": [s.name for s in scenarios], "errors": []}


@app.post("/run")
def run(req: RunRequest) -> dict:
    try:
        scenarios = _resolve(req.scenarios)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    result = run_suite(scenarios, jobs=req.jobs, strict=req.strict,
                       tol_scale=req.tol_scale, seed=req.seed)
    tables = {}
    for rep in result.reports:
        for name, (header, rows) in rep.tables.items():
            tables[name] = {"header": header, "rows": rows}
    return {"exit_code": result.exit_code, "summary": result.summary(),
            "reports": result.to_json(), "tables": tables,
            "capacity_errors": result.capacity_errors}
