from __future__ import annotations

import os
import socket
from datetime import datetime

from typing import Dict, List
from uuid import UUID

import numpy as np
import scipy
from fastapi import FastAPI, HTTPException
from fastapi import Query, Path
from typing import Optional

from models.health import Health
from models.polytope import AnalyticCenterRead, PolytopeDocument
from models.reports import CertificationReport
from models.schedule import CertificationRequest, ScheduleRow, ScheduleTableRequest
from models.toll import TollInstanceCreate, TollInstanceRead
from services import bmfo, geometry, newton
from services.toll import generate_toll_instance
from utils.errors import BilevelError, MissingBounds, NumericalError
from utils.logconfig import configure_logging

port = int(os.environ.get("FASTAPIPORT", 8000))
configure_logging()

# -----------------------------------------------------------------------------
# Fake in-memory "database"
# -----------------------------------------------------------------------------
toll_instances: Dict[UUID, TollInstanceRead] = {}

app = FastAPI(
    title="Barrier-Metric Bilevel API",
    description="Analytic centers, schedule certification and toll benchmark instances for the BMFO solver",
    version="0.2.0",
)


def _http_error(exc: BilevelError) -> HTTPException:
    if isinstance(exc, NumericalError):
        return HTTPException(status_code=409, detail=f"{type(exc).__name__}: {exc}")
    return HTTPException(status_code=422, detail=str(exc))

# -----------------------------------------------------------------------------
# Health endpoints
# -----------------------------------------------------------------------------

def make_health(echo: Optional[str], path_echo: Optional[str]=None) -> Health:
    return Health(
        status=200,
        status_message="OK",
        timestamp=datetime.utcnow().isoformat() + "Z",
        ip_address=socket.gethostbyname(socket.gethostname()),
        service="bmfo",
        numpy_version=np.__version__,
        scipy_version=scipy.__version__,
        echo=echo,
        path_echo=path_echo
    )

@app.get("/health", response_model=Health)
def get_health_no_path(echo: str | None = Query(None, description="Optional echo string")):
    # Works because path_echo is optional in the model
    return make_health(echo=echo, path_echo=None)

@app.get("/health/{path_echo}", response_model=Health)
def get_health_with_path(
    path_echo: str = Path(..., description="Required echo in the URL path"),
    echo: str | None = Query(None, description="Optional echo string"),
):
    return make_health(echo=echo, path_echo=path_echo)

# -----------------------------------------------------------------------------
# Polytope endpoints
# -----------------------------------------------------------------------------
@app.post("/polytopes/analytic-center", response_model=AnalyticCenterRead)
def analytic_center(polytope: PolytopeDocument):
    try:
        P = polytope.to_polytope()
        solution = newton.analytic_center_solution(P)
    except BilevelError as exc:
        raise _http_error(exc)
    try:
        kappa = geometry.euclidean_dikin_kappa(P)
    except MissingBounds:
        kappa = None
    return AnalyticCenterRead(
        center=solution.y_star.tolist(),
        stationarity_residual=solution.stationarity_residual,
        iterations=solution.iterations,
        kappa=kappa,
    )

# -----------------------------------------------------------------------------
# Schedule endpoints
# -----------------------------------------------------------------------------
@app.post("/schedules/table", response_model=List[ScheduleRow])
def schedule_table(request: ScheduleTableRequest):
    if request.schedule.certified:
        raise HTTPException(status_code=422, detail="certified schedules need constants; use /certifications")
    try:
        schedule = request.schedule.to_schedule()
    except BilevelError as exc:
        raise _http_error(exc)
    rows = []
    for k in range(request.K):
        v = bmfo.schedule_at(schedule, k)
        rows.append(ScheduleRow(k=k, alpha=v.alpha, gamma=v.gamma, lam=v.lam, delta=v.delta, beta=v.beta))
    return rows

@app.post("/certifications", response_model=CertificationReport)
def certify(request: CertificationRequest):
    try:
        if request.constants is not None:
            constants = request.constants.to_constants()
        else:
            derived = request.derived
            constants = bmfo.default_local_constants(
                request.mu or request.schedule.mu,
                request.schedule.eta,
                derived.declared.to_declared(),
                derived.kappa,
                l_psi2=derived.l_psi2,
                l_f2_eta=derived.l_f2_eta,
                l_star1=derived.l_star1,
                c_xi=derived.c_xi,
            )
        schedule = request.schedule.to_schedule(constants)
        return bmfo.certify_barrier_aware(schedule, constants, request.K)
    except BilevelError as exc:
        raise _http_error(exc)

# -----------------------------------------------------------------------------
# Toll instance endpoints
# -----------------------------------------------------------------------------
@app.post("/toll-instances", response_model=TollInstanceRead, status_code=201)
def create_toll_instance(params: TollInstanceCreate):
    try:
        instance = generate_toll_instance(params.n, params.seed, params.tau)
    except BilevelError as exc:
        raise _http_error(exc)
    stored = TollInstanceRead.from_instance(instance)
    toll_instances[stored.id] = stored
    return stored

@app.get("/toll-instances", response_model=List[TollInstanceRead])
def list_toll_instances(
    n: Optional[int] = Query(None, description="Filter by corridor count"),
    seed: Optional[int] = Query(None, description="Filter by generator seed"),
    tau: Optional[float] = Query(None, description="Filter by bottleneck tightness"),
):
    results = list(toll_instances.values())

    if n is not None:
        results = [t for t in results if t.n == n]
    if seed is not None:
        results = [t for t in results if t.seed == seed]
    if tau is not None:
        results = [t for t in results if t.tau == tau]

    return results

@app.get("/toll-instances/{instance_id}", response_model=TollInstanceRead)
def get_toll_instance(instance_id: UUID):
    if instance_id not in toll_instances:
        raise HTTPException(status_code=404, detail="Toll instance not found")
    return toll_instances[instance_id]

# -----------------------------------------------------------------------------
# Root
# -----------------------------------------------------------------------------
@app.get("/")
def root():
    return {"message": "Welcome to the Barrier-Metric Bilevel API. See /docs for OpenAPI UI."}

# -----------------------------------------------------------------------------
# Entrypoint for `python main.py`
# -----------------------------------------------------------------------------
if __name__ == "__main__":
    import uvicorn

    uvicorn.run("main:app", host="0.0.0.0", port=port, reload=True)
