"""FastAPI application exposing planning, episodes and run artifacts."""
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterator, List, Optional

from dotenv import load_dotenv
from fastapi import Depends, FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, Response
from pydantic import BaseModel
from sqlmodel import Session, select
from starlette.concurrency import run_in_threadpool

load_dotenv()

from .config import MapSpec, PlannerConfig, Scenario
from .db import EpisodeRecord, RunStatus, create_db_and_tables, engine
from .errors import ConfigError, PlannerError
from .logging_setup import configure_logging
from .services.maps import DEFAULT_GOAL, DEFAULT_START, generate_map
from .services.preview import render_preview
from .services.simulator import Metrics, ablate_easa, plan_snapshot, run_episode
from .storage import DATA_DIR, RUNS_DIR, save_artifact


class PlanRequest(BaseModel):
    scenario: Scenario
    config: Optional[PlannerConfig] = None


class PlanResponse(BaseModel):
    guide: List[List[float]]
    reference_knots: List[List[float]]
    reference_degraded: bool
    positions: List[List[float]]
    velocities: List[List[float]]
    breakdown: Dict[str, float]
    total: float
    iterations: int
    converged: bool


class EpisodeRequest(BaseModel):
    scenario: Scenario
    config: Optional[PlannerConfig] = None
    ablate_easa: bool = False


class EpisodeResult(BaseModel):
    record_id: int
    easa_enabled: bool
    metrics: dict
    log_url: str


class EpisodeResponse(BaseModel):
    episodes: List[EpisodeResult]


app = FastAPI(title="Adaptive Risk-Aware Planner", version="0.1.0")


def get_session() -> Iterator[Session]:
    with Session(engine) as session:
        yield session


@app.on_event("startup")
async def startup_event():
    """Create the data directories and tables."""
    configure_logging()
    DATA_DIR.mkdir(parents=True, exist_ok=True)
    RUNS_DIR.mkdir(parents=True, exist_ok=True)
    create_db_and_tables()
    print("🚀 Planner service started")


def _planner_error(e: Exception) -> HTTPException:
    if isinstance(e, ConfigError):
        return HTTPException(status_code=422, detail=str(e))
    return HTTPException(status_code=400, detail=str(e))


def _rows(array) -> List[List[float]]:
    return [[float(c) for c in row] for row in array]


@app.get("/health")
async def health_check():
    return {"status": "healthy", "timestamp": datetime.utcnow().isoformat()}


@app.post("/api/plan", response_model=PlanResponse)
async def plan(request: PlanRequest):
    """Guide path, reference and one local plan from the scenario start."""
    try:
        snapshot = await run_in_threadpool(plan_snapshot, request.scenario, request.config)
    except PlannerError as e:
        raise _planner_error(e)
    solution = snapshot.solution
    return PlanResponse(
        guide=_rows(snapshot.guide.points),
        reference_knots=_rows(snapshot.reference.knots),
        reference_degraded=snapshot.reference.degraded,
        positions=_rows(solution.positions),
        velocities=_rows(solution.velocities),
        breakdown=solution.breakdown,
        total=solution.total,
        iterations=solution.iterations,
        converged=solution.converged,
    )


async def _store_episode(session: Session, scenario: Scenario, log, metrics: Metrics) -> EpisodeResult:
    suffix = "on" if metrics.easa_enabled else "off"
    filename = f"{scenario.name}_seed{scenario.map.seed}_{suffix}_{datetime.utcnow():%Y%m%dT%H%M%S%f}.csv"
    _, log_url = await save_artifact(log.to_csv(), filename=filename, runs_dir=RUNS_DIR)
    record = EpisodeRecord(
        scenario=scenario.name,
        generator=scenario.map.generator,
        seed=scenario.map.seed,
        easa_enabled=metrics.easa_enabled,
        status=RunStatus.SUCCEEDED if metrics.success else RunStatus.FAILED,
        outcome=metrics.outcome.value,
        flight_time=metrics.flight_time,
        path_length=metrics.path_length,
        min_clearance=metrics.min_clearance,
        max_speed=metrics.max_speed,
        log_url=log_url,
    )
    session.add(record)
    session.commit()
    session.refresh(record)
    return EpisodeResult(record_id=record.id, easa_enabled=metrics.easa_enabled, metrics=metrics.to_dict(), log_url=log_url)


@app.post("/api/episodes", response_model=EpisodeResponse)
async def create_episode(request: EpisodeRequest, session: Session = Depends(get_session)):
    """Fly the scenario (both risk-penalty variants with ``ablate_easa``) and store the logs."""
    try:
        if request.ablate_easa:
            result = await run_in_threadpool(ablate_easa, request.scenario, request.config)
            runs = [result.easa_on, result.easa_off]
        else:
            runs = [await run_in_threadpool(run_episode, request.scenario, request.config)]
    except PlannerError as e:
        raise _planner_error(e)
    episodes = [await _store_episode(session, request.scenario, log, metrics) for log, metrics in runs]
    return EpisodeResponse(episodes=episodes)


@app.get("/api/episodes")
async def list_episodes(session: Session = Depends(get_session)):
    records = session.exec(select(EpisodeRecord).order_by(EpisodeRecord.id)).all()
    return {"episodes": [
        {
            "id": record.id,
            "scenario": record.scenario,
            "generator": record.generator,
            "seed": record.seed,
            "easa_enabled": record.easa_enabled,
            "status": record.status,
            "outcome": record.outcome,
            "flight_time": record.flight_time,
            "path_length": record.path_length,
            "min_clearance": record.min_clearance,
            "max_speed": record.max_speed,
            "log_url": record.log_url,
            "created_at": record.created_at.isoformat(),
        }
        for record in records
    ]}


@app.get("/runs/{filename}")
async def serve_run(filename: str):
    """Serve a stored flight log."""
    path = RUNS_DIR / filename
    if Path(filename).name == filename and path.exists():
        return FileResponse(path)
    raise HTTPException(status_code=404, detail="File not found")


@app.get("/api/maps/preview")
async def map_preview(
    generator: str = Query("gate"),
    seed: int = 0,
    density: Optional[float] = None,
    hidden_obstacle: Optional[bool] = None,
    scale: int = Query(4, ge=1, le=16),
):
    """Top-down PNG of a generated map with the default start and goal marked."""
    params = {}
    if density is not None:
        params["density"] = density
    if hidden_obstacle is not None:
        params["hidden_obstacle"] = hidden_obstacle
    try:
        spec = MapSpec(generator=generator, params=params, seed=seed)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    try:
        grid = await run_in_threadpool(generate_map, spec)
    except PlannerError as e:
        raise _planner_error(e)
    png = render_preview(grid, DEFAULT_START, DEFAULT_GOAL, scale=scale)
    return Response(content=png, media_type="image/png")


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
