import io
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError, ScenarioError
from .model import (
    Baseline,
    BoundaryFluxSpec,
    DynamicsModel,
    FilterParams,
    ForcingConfig,
    ObstacleMotion,
    OccupancyGrid,
    Reference,
    Sampling,
    ScalarField,
    Scenario,
    SolverConfig,
)

__all__ = ["FileParser", "PGMParser", "FieldParser", "ScenarioParser"]

DEFAULT_THRESHOLD = 128


class FileParser:
    """Base class for file parsers with existence checks and source tracking

    Attributes:
        path: Path to the input file
        kind: Human-readable file kind used in error messages
    """

    kind = "Input"

    def __init__(self, path: Path | str):
        """Initialize parser

        Args:
            path: Path to the input file
        """
        self.path = Path(path)

    def _load_bytes(self) -> bytes:
        """Read the whole input file

        Raises:
            FileNotFoundError: If the file doesn't exist
        """
        if not self.path.exists():
            raise FileNotFoundError(f"{self.kind} file not found: {self.path}")
        return self.path.read_bytes()

    def _parse_vector(self, values: Any, length: int, name: str) -> tuple[float, ...]:
        """Parse a list of numbers into a tuple of floats

        Args:
            values: Sequence of numbers
            length: Expected number of values
            name: Field name used in error messages

        Returns:
            Tuple of floats

        Raises:
            ValueError: If format is invalid
        """
        if not isinstance(values, (list, tuple)) or len(values) != length:
            raise ValueError(f"Expected {name} to hold {length} numbers, got {values!r}")
        try:
            return tuple(float(x) for x in values)
        except (TypeError, ValueError) as e:
            raise ValueError(f"Expected {name} to hold {length} numbers, got {values!r}") from e

    def _parse_pair(self, values: Any, name: str) -> tuple[float, float]:
        x, y = self._parse_vector(values, 2, name)
        return x, y

    def _get_source_metadata(self) -> dict:
        return {"_source_file": str(self.path)}


class PGMParser(FileParser):
    """Parser for P2 (ASCII) and P5 (binary) PGM occupancy maps

    Image row 0 is the top of the map, so rows are flipped to make cell row 0
    the bottom. The threshold applies to raw pixel values, whatever the maxval.

    Attributes:
        threshold: Pixel value below which a pixel is occupied
    """

    kind = "PGM"

    def __init__(self, path: Path | str, threshold: int = DEFAULT_THRESHOLD):
        """Initialize PGM parser"""
        super().__init__(path)
        self.threshold = threshold

    @property
    def sidecar_path(self) -> Path:
        return self.path.with_suffix(".json")

    def parse(self, resolution: float | None = None, origin: tuple[float, float] | None = None) -> OccupancyGrid:
        """Parse PGM file into an occupancy grid

        Args:
            resolution: Cell size in meters, read from the sidecar if None
            origin: World coordinates of cell (0, 0), read from the sidecar or (0, 0) if None

        Returns:
            Occupancy grid

        Raises:
            FileNotFoundError: If the PGM file doesn't exist
            FormatError: If the header or raster is malformed, or no resolution is known
            GridSizeError: If the image is smaller than 3x3
        """
        data = self._load_bytes()
        magic, width, height, maxval, offset = self._parse_header(data)
        count = width * height

        if magic == b"P5":
            if len(data) - offset < count:
                raise FormatError(f"Truncated raster in {self.path}: expected {count} bytes, got {len(data) - offset}")
            pixels = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset).astype(np.int64)
        else:
            tokens = self._strip_comments(data[offset:]).split()
            if len(tokens) < count:
                raise FormatError(f"Truncated raster in {self.path}: expected {count} values, got {len(tokens)}")
            try:
                pixels = np.array([int(t) for t in tokens[:count]], dtype=np.int64)
            except ValueError as e:
                raise FormatError(f"Non-integer pixel value in {self.path}") from e

        if pixels.size and (pixels.min() < 0 or pixels.max() > maxval):
            raise FormatError(f"Pixel values in {self.path} exceed maxval {maxval}")

        pixels = pixels.reshape(height, width)[::-1]
        sidecar = self._parse_sidecar()
        if resolution is None:
            resolution = sidecar.get("resolution")
        if resolution is None:
            raise FormatError(f"No resolution given for {self.path} and no sidecar {self.sidecar_path.name}")
        if origin is None:
            origin = sidecar.get("origin", (0.0, 0.0))

        return OccupancyGrid(pixels < self.threshold, resolution, origin, **self._get_source_metadata())

    def _parse_header(self, data: bytes) -> tuple[bytes, int, int, int, int]:
        """Parse magic number, width, height and maxval

        Args:
            data: Whole file contents

        Returns:
            Tuple of (magic, width, height, maxval, raster offset)

        Raises:
            FormatError: If the header is malformed
        """
        tokens: list[bytes] = []
        pos = 0
        while len(tokens) < 4:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if pos >= len(data):
                raise FormatError(f"Truncated PGM header in {self.path}")
            if data[pos : pos + 1] == b"#":
                newline = data.find(b"\n", pos)
                pos = len(data) if newline < 0 else newline + 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])

        magic = tokens[0]
        if magic not in (b"P2", b"P5"):
            raise FormatError(f"Unsupported PGM magic number {magic!r} in {self.path}, expected P2 or P5")
        try:
            width, height, maxval = (int(t) for t in tokens[1:])
        except ValueError as e:
            raise FormatError(f"Malformed PGM header in {self.path}") from e
        if width <= 0 or height <= 0:
            raise FormatError(f"Invalid PGM size {width}x{height} in {self.path}")
        if not 1 <= maxval <= 255:
            raise FormatError(f"PGM maxval must lie in 1..255, got {maxval} in {self.path}")

        # exactly one whitespace byte separates maxval from the raster
        return magic, width, height, maxval, pos + 1

    def _strip_comments(self, data: bytes) -> bytes:
        lines = [line.split(b"#", 1)[0] for line in data.splitlines()]
        return b" ".join(lines)

    def _parse_sidecar(self) -> dict:
        """Read resolution and origin from the optional <map>.json sidecar

        Returns:
            Dict with optional "resolution" and "origin" entries

        Raises:
            FormatError: If the sidecar is not valid JSON or has invalid values
        """
        if not self.sidecar_path.exists():
            return {}
        try:
            meta = json.loads(self.sidecar_path.read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"Invalid JSON in sidecar {self.sidecar_path}: {e}") from e
        if not isinstance(meta, dict):
            raise FormatError(f"Sidecar {self.sidecar_path} must hold a JSON object")

        out = {}
        try:
            if "resolution_m" in meta:
                out["resolution"] = float(meta["resolution_m"])
            if "origin_xy" in meta:
                out["origin"] = self._parse_vector(meta["origin_xy"], 2, "origin_xy")
        except (TypeError, ValueError) as e:
            raise FormatError(f"Invalid sidecar {self.sidecar_path}: {e}") from e
        return out


class FieldParser(FileParser):
    """Parser for scalar field CSV files

    The first line holds nx,ny,resolution,origin_x,origin_y; ny rows of nx values follow, row iy = 0 first.
    """

    kind = "Field CSV"

    def parse(self) -> ScalarField:
        """Parse CSV file into a scalar field

        Returns:
            Scalar field

        Raises:
            FileNotFoundError: If the CSV file doesn't exist
            FormatError: If the header or values are malformed
        """
        text = self._load_bytes().decode()
        header, _, body = text.partition("\n")
        parts = header.strip().split(",")
        if len(parts) != 5:
            raise FormatError(f"Field header in {self.path} must hold nx,ny,resolution,origin_x,origin_y")
        try:
            nx, ny = int(parts[0]), int(parts[1])
            resolution, ox, oy = (float(p) for p in parts[2:])
            values = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as e:
            raise FormatError(f"Malformed field CSV {self.path}: {e}") from e

        if values.shape != (ny, nx):
            rows, cols = values.shape
            raise FormatError(f"Field CSV {self.path} declares {ny}x{nx} values, got {rows}x{cols}")
        try:
            return ScalarField(values, resolution, (ox, oy))
        except ValueError as e:
            raise FormatError(f"Invalid field values in {self.path}: {e}") from e


class ScenarioParser(FileParser):
    """Parser for scenario JSON files

    Relative map paths are resolved against the scenario file's directory.
    """

    kind = "Scenario"

    _KEYS = frozenset(
        {
            "map",
            "resolution",
            "origin",
            "threshold",
            "buffer",
            "model",
            "initial_states",
            "goal",
            "gains",
            "filter",
            "forcing",
            "solver",
            "dt",
            "duration",
            "resolve_period",
            "baseline",
            "sampling",
            "reference",
            "motions",
        }
    )

    def parse(self) -> Scenario:
        """Parse scenario JSON into a Scenario

        Returns:
            Scenario

        Raises:
            FileNotFoundError: If the scenario file doesn't exist
            ScenarioError: If the JSON is malformed or holds invalid values
        """
        try:
            doc = json.loads(self._load_bytes())
        except json.JSONDecodeError as e:
            raise ScenarioError(f"Invalid JSON in {self.path}: {e}") from e
        if not isinstance(doc, dict):
            raise ScenarioError(f"Scenario {self.path} must hold a JSON object")
        unknown = set(doc) - self._KEYS
        if unknown:
            raise ScenarioError(f"Unknown scenario keys in {self.path}: {', '.join(sorted(unknown))}")
        for key in ("map", "initial_states", "goal"):
            if key not in doc:
                raise ScenarioError(f"Scenario {self.path} is missing '{key}'")

        try:
            return self._build(doc)
        except ScenarioError:
            raise
        except (TypeError, ValueError, KeyError) as e:
            raise ScenarioError(f"Invalid scenario {self.path}: {e}") from e

    def _build(self, doc: dict) -> Scenario:
        map_path = Path(doc["map"])
        if not map_path.is_absolute():
            map_path = self.path.parent / map_path

        gains = doc.get("gains", {})
        origin = doc.get("origin")
        resolution = doc.get("resolution")

        return Scenario(
            map_path=map_path,
            initial_states=tuple(self._parse_state(s) for s in doc["initial_states"]),
            goal=self._parse_pair(doc["goal"], "goal"),
            resolution=None if resolution is None else float(resolution),
            origin=None if origin is None else self._parse_pair(origin, "origin"),
            threshold=int(doc.get("threshold", DEFAULT_THRESHOLD)),
            buffer=float(doc.get("buffer", 0.0)),
            model=DynamicsModel(doc.get("model", DynamicsModel.R1)),
            kp=float(gains.get("kp", 1.0)),
            kd=float(gains.get("kd", 2.0)),
            filter=FilterParams(**doc.get("filter", {})),
            forcing=self._parse_forcing(doc.get("forcing", {})),
            solver=SolverConfig(**doc.get("solver", {})),
            dt=float(doc.get("dt", 0.01)),
            duration=float(doc.get("duration", 10.0)),
            resolve_period=float(doc.get("resolve_period", 0.1)),
            baseline=Baseline(doc.get("baseline", Baseline.POISSON)),
            sampling=Sampling(doc.get("sampling", Sampling.SPLINE)),
            motions=tuple(self._parse_motion(m) for m in doc.get("motions", [])),
            reference=self._parse_reference(doc.get("reference", {})),
            **self._get_source_metadata(),
        )

    def _parse_state(self, state: Any) -> tuple[float, ...]:
        length = len(state) if isinstance(state, (list, tuple)) else 0
        return self._parse_vector(state, 4 if length == 4 else 2, "initial state")

    def _parse_forcing(self, doc: dict) -> ForcingConfig:
        """Parse the forcing section

        Args:
            doc: Forcing section with kind, alpha, beta, b_bar, bflux and bflux_obs keys

        Returns:
            Forcing configuration
        """
        overrides = {int(k): float(v) for k, v in doc.get("bflux_obs", {}).items()}
        return ForcingConfig(
            kind=doc.get("kind", ForcingConfig.kind),
            alpha=float(doc.get("alpha", ForcingConfig.alpha)),
            beta=float(doc.get("beta", ForcingConfig.beta)),
            b_bar=float(doc.get("b_bar", ForcingConfig.b_bar)),
            flux=BoundaryFluxSpec(float(doc.get("bflux", -1.0)), overrides),
        )

    def _parse_motion(self, doc: dict) -> ObstacleMotion:
        waypoints = doc["waypoints"]
        return ObstacleMotion(
            obstacle=int(doc["obstacle"]),
            times=tuple(float(t) for t, _ in waypoints),
            offsets=tuple(self._parse_pair(o, "waypoint offset") for _, o in waypoints),
        )

    def _parse_reference(self, doc: dict) -> Reference:
        return Reference(
            amplitude=self._parse_pair(doc.get("amplitude", [0.0, 0.0]), "reference amplitude"),
            frequency=float(doc.get("frequency", 0.0)),
        )
