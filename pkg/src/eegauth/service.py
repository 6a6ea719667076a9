"""Two-phase authentication service: enrollment server and session decisions.

Enrollment stores the user's feature vectors, assembles a balanced dataset
against the pooled instances of every other stored user, runs the budgeted
model search, and returns the serialized per-user model.  Authentication is a
strict-majority vote over per-instance predictions: the session is granted
only when the genuine fraction strictly exceeds the threshold, so an exact
tie denies.

The feature store keeps one directory per user.  Each put writes a fresh
versioned CSV and then atomically replaces the user's manifest, which names
the CSV it trusts; a crash at any point leaves either the old or the new
entry readable, never a torn mix.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import classifiers
from .autoselect import SearchBudget, SearchTrace, select_model
from .dataset import (
    Instance,
    LABEL_GENUINE,
    LABEL_UNLABELED,
    assemble_user_dataset,
    dataset_manifest,
    load_features_csv,
    save_features_csv,
)
from .errors import (
    EegAuthError,
    EmptySessionError,
    EnrollmentUnavailableError,
    NoModelError,
    StoreError,
    ValidationError,
)
from .features import N_FEATURES
from .seeds import derive_seed

DEFAULT_ENROLL_COUNT = 500
DEFAULT_THRESHOLD = 0.5
GRANT, DENY = "grant", "deny"

_USER_ID_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")


@dataclass(frozen=True)
class EnrollRequest:
    user_id: str
    instances: np.ndarray  # count x 15
    client_nonce: str

    def __post_init__(self):
        values = np.asarray(self.instances, dtype=float)
        object.__setattr__(self, "instances", values)
        if not _USER_ID_RE.match(self.user_id):
            raise ValidationError(f"invalid user_id {self.user_id!r}")
        if values.ndim != 2 or values.shape[1] != N_FEATURES:
            raise ValidationError(f"instances must be rows of {N_FEATURES} features")
        if not np.isfinite(values).all():
            raise ValidationError("instances contain non-finite features")


@dataclass(frozen=True)
class EnrollResponse:
    model: classifiers.TrainedModel
    algorithm: str
    cv_accuracy: float
    evaluations: int
    elapsed_s: float
    client_nonce: str

    def to_dict(self) -> dict:
        return {
            "model": classifiers.model_to_dict(self.model),
            "summary": {
                "algorithm": self.algorithm,
                "cv_accuracy": self.cv_accuracy,
                "evaluations": self.evaluations,
                "elapsed_s": self.elapsed_s,
            },
            "client_nonce": self.client_nonce,
        }


@dataclass(frozen=True)
class Decision:
    outcome: str
    genuine_fraction: float
    n_instances: int
    threshold: float

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "genuine_fraction": self.genuine_fraction,
            "n_instances": self.n_instances,
            "threshold": self.threshold,
        }


# --- feature store ---------------------------------------------------------------

class FeatureStore:
    """File-backed map user_id -> enrolled feature vectors.

    Layout: {root}/users/{user_id}/manifest.json plus the versioned feature
    CSV the manifest points at.  Writers replace the manifest atomically;
    readers only ever follow the manifest, so partial writes are invisible.
    """

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "users").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._user_locks: dict[str, threading.RLock] = {}

    def _user_dir(self, user_id: str) -> Path:
        if not _USER_ID_RE.match(user_id):
            raise ValidationError(f"invalid user_id {user_id!r}")
        return self.root / "users" / user_id

    def user_lock(self, user_id: str) -> threading.RLock:
        with self._lock:
            return self._user_locks.setdefault(user_id, threading.RLock())

    def put_user(self, user_id: str, vectors: np.ndarray) -> None:
        """Atomically replace the user's enrolled vectors."""
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[1] != N_FEATURES:
            raise ValidationError(f"vectors must be rows of {N_FEATURES} features")
        if not np.isfinite(vectors).all():
            raise ValidationError("vectors contain non-finite features")
        user_dir = self._user_dir(user_id)
        user_dir.mkdir(parents=True, exist_ok=True)
        instances = [Instance(row, LABEL_UNLABELED, user_id, i)
                     for i, row in enumerate(vectors)]
        version = time.time_ns()
        csv_name = f"features-{version:020d}.csv"
        with self.user_lock(user_id):  # re-entrant: callers may already hold it
            try:
                save_features_csv(instances, user_dir / csv_name)
                manifest = {"user_id": user_id, "count": len(instances),
                            "csv": csv_name}
                tmp = user_dir / f"manifest-{version:020d}.tmp"
                with open(tmp, "w") as fh:
                    json.dump(manifest, fh, sort_keys=True)
                    fh.write("\n")
                tmp.replace(user_dir / "manifest.json")
            except OSError as exc:
                raise StoreError(f"writing {user_dir}: {exc}") from exc
            self._collect_garbage(user_dir, keep=csv_name)

    def _collect_garbage(self, user_dir: Path, keep: str) -> None:
        for stale in user_dir.glob("features-*.csv"):
            if stale.name != keep:
                try:
                    stale.unlink()
                except OSError:
                    pass  # safe to leave; the manifest decides what is read
        for stale in user_dir.glob("manifest-*.tmp"):
            try:
                stale.unlink()
            except OSError:
                pass

    def _read_manifest(self, user_id: str) -> dict:
        manifest_path = self._user_dir(user_id) / "manifest.json"
        if not manifest_path.exists():
            raise StoreError(f"no entry for user {user_id!r}")
        try:
            with open(manifest_path) as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"reading {manifest_path}: {exc}") from exc

    def has_user(self, user_id: str) -> bool:
        return (self._user_dir(user_id) / "manifest.json").exists()

    def get_user(self, user_id: str) -> list[Instance]:
        manifest = self._read_manifest(user_id)
        csv_path = self._user_dir(user_id) / manifest["csv"]
        try:
            return load_features_csv(csv_path)
        except OSError as exc:
            raise StoreError(f"reading {csv_path}: {exc}") from exc

    def list_users(self) -> list[str]:
        users_dir = self.root / "users"
        found = [p.name for p in users_dir.iterdir()
                 if p.is_dir() and (p / "manifest.json").exists()]
        return sorted(found)

    def get_pool(self, excluding: str) -> list[Instance]:
        """Every stored instance except the named user's, stable-ordered."""
        pool = []
        for user_id in self.list_users():
            if user_id == excluding:
                continue
            pool.extend(self.get_user(user_id))
        return pool


# --- enrollment and authentication -------------------------------------------------

def _write_enrollment_audit(store: FeatureStore, user_id: str, audit: dict) -> None:
    user_dir = store.root / "users" / user_id
    try:
        with open(user_dir / "enrollment-manifest.json", "w") as fh:
            json.dump(audit, fh, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise StoreError(f"writing enrollment audit for {user_id}: {exc}") from exc


def enroll(request: EnrollRequest, store: FeatureStore, budget: SearchBudget,
           k_folds: int = 10, server_seed: int = 0,
           enroll_count: int = DEFAULT_ENROLL_COUNT) -> tuple[EnrollResponse, SearchTrace]:
    """Store the user's instances and train their personal model under budget.

    The user is stored even when the impostor pool is still too small; in
    that case EnrollmentUnavailableError tells the caller to retry once more
    users exist.  Request seeds derive from (server seed, user, nonce), so a
    repeated identical enrollment returns a byte-identical model.
    """
    if len(request.instances) != enroll_count:
        raise ValidationError(
            f"enrollment needs exactly {enroll_count} instances, "
            f"got {len(request.instances)}"
        )
    started = time.perf_counter()
    with store.user_lock(request.user_id):
        store.put_user(request.user_id, request.instances)
    own = [Instance(row, LABEL_UNLABELED, request.user_id, i)
           for i, row in enumerate(request.instances)]
    pool = store.get_pool(excluding=request.user_id)
    if len(pool) < enroll_count:
        raise EnrollmentUnavailableError(
            f"impostor pool holds {len(pool)} instances, need {enroll_count}; "
            "user stored, retry after more enrollments"
        )
    seed = derive_seed(server_seed, request.user_id, request.client_nonce)
    ds = assemble_user_dataset(request.user_id, own, pool, seed)
    audit = dataset_manifest(ds, seed)
    if request.user_id in audit["impostor_sources"]:
        raise ValidationError("impostor pool contaminated with the enrolling user")
    _write_enrollment_audit(store, request.user_id, audit)
    model, trace = select_model(ds, SearchBudget(budget.wall_clock_s,
                                                 budget.max_evaluations, seed),
                                k_folds=k_folds)
    response = EnrollResponse(
        model=model,
        algorithm=model.algorithm,
        cv_accuracy=float(model.cv_accuracy),
        evaluations=len(trace.entries),
        elapsed_s=time.perf_counter() - started,
        client_nonce=request.client_nonce,
    )
    return response, trace


def authenticate(model: classifiers.TrainedModel, session,
                 threshold: float = DEFAULT_THRESHOLD) -> Decision:
    """Strict-majority session decision; ties deny (fail closed)."""
    session = np.asarray(session, dtype=float)
    if session.ndim == 1:
        session = session[None, :]
    if session.size == 0 or session.shape[0] == 0:
        raise EmptySessionError("session carries no instances")
    if not (0.0 <= threshold <= 1.0):
        raise ValidationError("threshold must lie in [0, 1]")
    labels = classifiers.predict_labels(model, session)
    genuine = sum(1 for lab in labels if lab == LABEL_GENUINE)
    fraction = genuine / len(labels)
    outcome = GRANT if fraction > threshold else DENY
    return Decision(outcome, fraction, len(labels), threshold)


# --- HTTP server --------------------------------------------------------------------

class _ServiceState:
    def __init__(self, store, budget, server_seed, enroll_count, k_folds, max_workers):
        self.store = store
        self.budget = budget
        self.server_seed = server_seed
        self.enroll_count = enroll_count
        self.k_folds = k_folds
        self.training_slots = threading.Semaphore(max_workers)


def _error_body(code: str, message: str) -> bytes:
    return json.dumps({"code": code, "message": message}).encode("utf-8")


class AuthServiceHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    state: _ServiceState = None  # assigned by make_server

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send_json(self, status: int, payload: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"request body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise ValidationError("request body must be a JSON object")
        return body

    def do_GET(self):
        if self.path == "/api/v1/health":
            users = self.state.store.list_users()
            self._send_json(200, json.dumps(
                {"status": "ok", "users": len(users)}).encode())
        elif self.path == "/api/v1/users":
            self._send_json(200, json.dumps(
                {"users": self.state.store.list_users()}).encode())
        else:
            self._send_json(404, _error_body("not_found", f"no route {self.path}"))

    def do_POST(self):
        try:
            if self.path == "/api/v1/enroll":
                self._handle_enroll()
            elif self.path == "/api/v1/authenticate":
                self._handle_authenticate()
            else:
                self._send_json(404, _error_body("not_found", f"no route {self.path}"))
        except ValidationError as exc:
            self._send_json(400, _error_body("invalid_request", str(exc)))
        except EnrollmentUnavailableError as exc:
            self._send_json(409, _error_body("enrollment_unavailable", str(exc)))
        except NoModelError as exc:
            self._send_json(503, _error_body("retryable_failure", str(exc)))
        except EegAuthError as exc:
            self._send_json(400, _error_body("invalid_request", str(exc)))
        except Exception as exc:  # noqa: BLE001 - surface as opaque 500
            self._send_json(500, _error_body("internal_error", str(exc)))

    def _handle_enroll(self):
        body = self._read_body()
        for field_name in ("user_id", "instances", "client_nonce"):
            if field_name not in body:
                raise ValidationError(f"missing field {field_name!r}")
        request = EnrollRequest(str(body["user_id"]),
                                np.asarray(body["instances"], dtype=float),
                                str(body["client_nonce"]))
        state = self.state
        with state.training_slots:
            response, _ = enroll(request, state.store, state.budget,
                                 k_folds=state.k_folds,
                                 server_seed=state.server_seed,
                                 enroll_count=state.enroll_count)
        self._send_json(200, json.dumps(response.to_dict(), sort_keys=True).encode())

    def _handle_authenticate(self):
        body = self._read_body()
        for field_name in ("model", "instances"):
            if field_name not in body:
                raise ValidationError(f"missing field {field_name!r}")
        model = classifiers.model_from_dict(body["model"])
        threshold = float(body.get("threshold", DEFAULT_THRESHOLD))
        decision = authenticate(model, np.asarray(body["instances"], dtype=float),
                                threshold)
        self._send_json(200, json.dumps(decision.to_dict(), sort_keys=True).encode())


def make_server(store_root, port: int = 0, budget: SearchBudget = None,
                server_seed: int = 0, enroll_count: int = DEFAULT_ENROLL_COUNT,
                k_folds: int = 10, max_workers: int = 2) -> ThreadingHTTPServer:
    """Build (but do not start) the threading HTTP server; port 0 picks one."""
    state = _ServiceState(FeatureStore(store_root),
                          budget or SearchBudget(),
                          server_seed, enroll_count, k_folds, max_workers)
    handler = type("BoundAuthServiceHandler", (AuthServiceHandler,), {"state": state})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)
