import uuid

import pytest
from fastapi.testclient import TestClient

import main

BOX5_DECLARED = {"l_g1": 2.0, "l_f0": 2.2, "l_f1": 2.0, "l_g0": 3.2}


@pytest.fixture
def client(monkeypatch):
    monkeypatch.setattr(main.socket, "gethostbyname", lambda _: "127.0.0.1")
    main.toll_instances.clear()
    with TestClient(main.app) as c:
        yield c
    main.toll_instances.clear()


def test_root(client):
    r = client.get("/")
    assert r.status_code == 200
    assert "message" in r.json()


def test_health(client):
    r = client.get("/health", params={"echo": "ping"})
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == 200
    assert body["service"] == "bmfo"
    assert body["echo"] == "ping"
    assert body["path_echo"] is None

    r = client.get("/health/hello")
    assert r.json()["path_echo"] == "hello"


def test_analytic_center_of_box(client):
    r = client.post("/polytopes/analytic-center", json={"box": {"lower": [0.0, 0.0], "upper": [2.0, 4.0]}})
    assert r.status_code == 200
    body = r.json()
    assert body["center"] == pytest.approx([1.0, 2.0], abs=1e-9)
    assert body["stationarity_residual"] <= 1e-10
    assert body["kappa"] == pytest.approx(8.0**0.5)


def test_analytic_center_of_triangle_without_bounds(client):
    payload = {"A": [[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], "b": [0.0, 0.0, 1.0], "interior_witness": [0.2, 0.2]}
    r = client.post("/polytopes/analytic-center", json=payload)
    assert r.status_code == 200
    assert r.json()["center"] == pytest.approx([1 / 3, 1 / 3], abs=1e-9)
    assert r.json()["kappa"] is None


@pytest.mark.parametrize(
    "payload, status",
    [
        ({"box": {"lower": [0.0], "upper": [1.0]}, "A": [[1.0]], "b": [1.0]}, 422),
        ({"A": [[1.0], [-1.0]], "b": [1.0, 0.0]}, 422),
        ({"box": {"lower": [0.0, 1.0], "upper": [1.0, 1.0]}}, 422),
        ({"A": [[1.0, 1.0], [-1.0, -1.0], [2.0, 2.0]], "b": [1.0, 1.0, 1.0], "interior_witness": [0.0, 0.0]}, 422),
        ({"A": [[1.0], [-1.0]], "b": [1.0, 0.0], "interior_witness": [2.0]}, 409),
    ],
)
def test_analytic_center_rejections(client, payload, status):
    assert client.post("/polytopes/analytic-center", json=payload).status_code == status


def test_schedule_table(client):
    schedule = {"kind": "deterministic_polynomial", "alpha0": 0.1, "gamma0": 0.2, "lambda0": 2.0, "k0": 1.0}
    r = client.post("/schedules/table", json={"schedule": schedule, "K": 8})
    assert r.status_code == 200
    rows = r.json()
    assert [row["k"] for row in rows] == list(range(8))
    assert rows[7]["lam"] == pytest.approx(4.0)
    assert rows[7]["alpha"] == pytest.approx(0.05)
    assert rows[7]["beta"] == pytest.approx(0.2)

    r = client.post("/schedules/table", json={"schedule": {**schedule, "certified": True}, "K": 8})
    assert r.status_code == 422


def test_certification_flags_a_large_gamma(client):
    schedule = {"kind": "deterministic_polynomial", "alpha0": 0.025, "gamma0": 10.0, "lambda0": 20.0,
                "xi": 2.0, "T": 10, "eta": 0.25, "mu": 0.01}
    r = client.post("/certifications", json={"schedule": schedule, "K": 100, "derived": {"declared": BOX5_DECLARED}})
    assert r.status_code == 200
    body = r.json()
    assert body["passed"] is False
    gamma = next(c for c in body["conditions"] if c["name"] == "S1:gamma-cap")
    assert gamma["passed"] is False
    assert gamma["first_violation"] == 0
    assert body["conservative_defaults"] == ["l_psi2", "l_f2_eta", "l_star1"]


def test_certification_of_a_constructed_schedule_passes(client):
    schedule = {"kind": "stochastic_polynomial", "certified": True, "T": 10, "eta": 0.25, "mu": 0.01}
    r = client.post("/certifications", json={"schedule": schedule, "K": 500, "derived": {"declared": BOX5_DECLARED}})
    assert r.status_code == 200
    assert r.json()["passed"] is True
    assert [c["name"] for c in r.json()["conditions"]] == [
        "S1:lambda0", "S1:beta<=gamma", "S1:gamma-cap", "S1:alpha-cap", "S2", "S3",
    ]


def test_certification_needs_exactly_one_constant_source(client):
    schedule = {"kind": "deterministic_polynomial", "alpha0": 0.1, "gamma0": 0.1, "lambda0": 1.0}
    assert client.post("/certifications", json={"schedule": schedule, "K": 10}).status_code == 422


def test_toll_instance_lifecycle(client):
    r = client.post("/toll-instances", json={"n": 10, "seed": 3, "tau": 0.5})
    assert r.status_code == 201
    created = r.json()
    assert created["m_b"] == 5
    assert len(created["C"]) == 5 and len(created["C"][0]) == 10
    assert len(created["y_int"]) == 10

    client.post("/toll-instances", json={"n": 20, "seed": 3})
    assert len(client.get("/toll-instances").json()) == 2
    assert [t["id"] for t in client.get("/toll-instances", params={"n": 10}).json()] == [created["id"]]
    assert len(client.get("/toll-instances", params={"seed": 3}).json()) == 2
    assert client.get("/toll-instances", params={"tau": 0.2}).json()[0]["n"] == 20

    fetched = client.get(f"/toll-instances/{created['id']}")
    assert fetched.status_code == 200
    assert fetched.json()["u"] == created["u"]


def test_unknown_toll_instance_is_404(client):
    assert client.get(f"/toll-instances/{uuid.uuid4()}").status_code == 404


@pytest.mark.parametrize("payload", [{"n": 5, "seed": 0}, {"n": 10, "seed": -1}, {"n": 10, "seed": 0, "tau": 0.0}])
def test_toll_instance_validation(client, payload):
    assert client.post("/toll-instances", json=payload).status_code == 422
