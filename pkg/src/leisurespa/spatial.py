"""Hexagonal binning at two nested resolutions.

Two index implementations share one interface:

``HexLatticeIndex``
    Pointy-top hexagons on a Lambert azimuthal equal-area projection
    centred on the study box.  Fine hexagons cover 0.015 km2.  Coarse
    cells are built from an index-49 sublattice of the fine lattice: every
    coarse centre is also a fine centre and each fine cell belongs to the
    coarse centre nearest to it, so coarse cells cover 49 x 0.015 =
    0.735 km2 on average and the fine -> coarse parent map is a function.

``TableCellIndex``
    Opaque tokens (for example cells pre-computed by an external hex
    library) read from a table of ``token, resolution, lat, lon, parent``.
    Points bin to the nearest fine centroid.

Tokens are plain strings.  Lattice tokens look like ``"10:q:r"`` (fine) and
``"8:q:r"`` (coarse); the leading label mirrors common hex-grid resolution
numbering and makes tokens self-describing.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import BadValue, OutOfBounds, UnknownCell

EARTH_RADIUS_M = 6371008.8
FINE = "fine"
COARSE = "coarse"
RESOLUTIONS = (FINE, COARSE)

FINE_AREA_M2 = 15_000.0
# Sublattice generator (a, b): coarse centres are g * z in Eisenstein
# coordinates with g = a + b*w6, so the sublattice index is a^2 + ab + b^2.
_SUB_A, _SUB_B = 5, 3
_SUB_INDEX = _SUB_A * _SUB_A + _SUB_A * _SUB_B + _SUB_B * _SUB_B  # 49
COARSE_AREA_M2 = FINE_AREA_M2 * _SUB_INDEX

_LABEL = {FINE: "10", COARSE: "8"}
_RES_OF_LABEL = {v: k for k, v in _LABEL.items()}


def haversine_m(a, b):
    """Great-circle distance in metres between two ``(lat, lon)`` pairs."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_many(lat, lon, lat0, lon0):
    """Vectorised distance from arrays of points to one point."""
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    p0, l0 = math.radians(lat0), math.radians(lon0)
    h = np.sin((lat - p0) / 2) ** 2 + np.cos(lat) * math.cos(p0) * np.sin((lon - l0) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


@dataclass(frozen=True)
class BBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self):
        if not (-90 <= self.min_lat < self.max_lat <= 90):
            raise BadValue(f"invalid latitude range in bounding box {self}")
        if not (-180 <= self.min_lon < self.max_lon <= 180):
            raise BadValue(f"invalid longitude range in bounding box {self}")

    def contains(self, lat, lon):
        return self.min_lat <= lat <= self.max_lat and self.min_lon <= lon <= self.max_lon

    @property
    def center(self):
        return ((self.min_lat + self.max_lat) / 2, (self.min_lon + self.max_lon) / 2)

    def padded(self, metres):
        dlat = math.degrees(metres / EARTH_RADIUS_M)
        dlon = dlat / max(math.cos(math.radians(self.center[0])), 1e-6)
        return BBox(
            max(-90.0, self.min_lat - dlat),
            max(-180.0, self.min_lon - dlon),
            min(90.0, self.max_lat + dlat),
            min(180.0, self.max_lon + dlon),
        )

    @classmethod
    def around(cls, lats, lons, pad_m=0.0):
        box = cls(min(lats), min(lons), max(lats) + 1e-9, max(lons) + 1e-9)
        return box.padded(pad_m) if pad_m else box


class EqualAreaProjection:
    """Spherical Lambert azimuthal equal-area projection."""

    def __init__(self, lat0, lon0, radius=EARTH_RADIUS_M):
        self.lat0 = lat0
        self.lon0 = lon0
        self.R = radius
        self._sin0 = math.sin(math.radians(lat0))
        self._cos0 = math.cos(math.radians(lat0))

    def forward(self, lat, lon):
        phi = math.radians(lat)
        dlam = math.radians(lon - self.lon0)
        cphi = math.cos(phi)
        denom = 1 + self._sin0 * math.sin(phi) + self._cos0 * cphi * math.cos(dlam)
        k = math.sqrt(2 / denom)
        x = self.R * k * cphi * math.sin(dlam)
        y = self.R * k * (self._cos0 * math.sin(phi) - self._sin0 * cphi * math.cos(dlam))
        return x, y

    def inverse(self, x, y):
        rho = math.hypot(x, y)
        if rho == 0:
            return self.lat0, self.lon0
        c = 2 * math.asin(rho / (2 * self.R))
        sc, cc = math.sin(c), math.cos(c)
        phi = math.asin(cc * self._sin0 + y * sc * self._cos0 / rho)
        lam = math.atan2(x * sc, rho * self._cos0 * cc - y * self._sin0 * sc)
        return math.degrees(phi), self.lon0 + math.degrees(lam)


def _hex_norm(dq, dr):
    # squared distance in units of the lattice spacing, times 1
    return dq * dq + dq * dr + dr * dr


class HexLatticeIndex:
    """Two-resolution hexagonal index on a local equal-area plane.

    Parameters
    ----------
    bbox : BBox
        Study bounding box.  Points outside raise ``OutOfBounds``.
    fine_area_m2 : float
        Area of one fine hexagon.  The coarse area is 49 times this.
    """

    kind = "lattice"

    def __init__(self, bbox, fine_area_m2=FINE_AREA_M2):
        self.bbox = bbox
        self.fine_area_m2 = float(fine_area_m2)
        self.coarse_area_m2 = self.fine_area_m2 * _SUB_INDEX
        self.proj = EqualAreaProjection(*bbox.center)
        # circumradius of a regular hexagon with the requested area
        self.size = math.sqrt(2 * self.fine_area_m2 / (3 * math.sqrt(3)))

    # -- lattice arithmetic ---------------------------------------------------

    def _axial_frac(self, x, y):
        s = self.size
        q = (math.sqrt(3) / 3 * x - y / 3) / s
        r = (2 / 3 * y) / s
        return q, r

    def _axial_to_xy(self, q, r):
        s = self.size
        return s * math.sqrt(3) * (q + r / 2), s * 1.5 * r

    def _fine_axial(self, x, y):
        qf, rf = self._axial_frac(x, y)
        q0, r0 = math.floor(qf), math.floor(rf)
        best = None
        # the containing hexagon is the nearest lattice centre; candidates
        # around the fractional position cover every possibility
        for dq in (-1, 0, 1, 2):
            for dr in (-1, 0, 1, 2):
                q, r = q0 + dq, r0 + dr
                cx, cy = self._axial_to_xy(q, r)
                d = (x - cx) ** 2 + (y - cy) ** 2
                key = (d, self._token(FINE, q, r))
                if best is None or key < best[0]:
                    best = (key, q, r)
        _, q, r = best
        return q, r

    @staticmethod
    def _token(resolution, q, r):
        return f"{_LABEL[resolution]}:{q}:{r}"

    @staticmethod
    def _parse(token):
        try:
            label, q, r = token.split(":")
            return _RES_OF_LABEL[label], int(q), int(r)
        except (ValueError, KeyError, AttributeError):
            raise UnknownCell(f"unknown cell token {token!r}") from None

    @staticmethod
    def _coarse_to_fine_axial(Q, R):
        a, b = _SUB_A, _SUB_B
        return a * Q - b * R, a * R + b * Q + b * R

    def _parent_axial(self, q, r):
        a, b = _SUB_A, _SUB_B
        qn = q * (a + b) + r * b
        rn = r * a - q * b
        Q0, R0 = qn // _SUB_INDEX, rn // _SUB_INDEX
        best = None
        for dQ in (-1, 0, 1, 2):
            for dR in (-1, 0, 1, 2):
                Q, R = Q0 + dQ, R0 + dR
                fq, fr = self._coarse_to_fine_axial(Q, R)
                d = _hex_norm(q - fq, r - fr)
                key = (d, self._token(COARSE, Q, R))
                if best is None or key < best[0]:
                    best = (key, Q, R)
        _, Q, R = best
        return Q, R

    # -- public interface -----------------------------------------------------

    def bin_point(self, lat, lon, resolution=FINE):
        if resolution not in RESOLUTIONS:
            raise BadValue(f"unknown resolution {resolution!r}")
        if not self.bbox.contains(lat, lon):
            raise OutOfBounds(f"point ({lat}, {lon}) outside study box {self.bbox}")
        q, r = self._fine_axial(*self.proj.forward(lat, lon))
        if resolution == FINE:
            return self._token(FINE, q, r)
        return self._token(COARSE, *self._parent_axial(q, r))

    def centroid(self, cell):
        res, q, r = self._parse(cell)
        if res == COARSE:
            q, r = self._coarse_to_fine_axial(q, r)
        return self.proj.inverse(*self._axial_to_xy(q, r))

    def parent(self, cell):
        res, q, r = self._parse(cell)
        if res == COARSE:
            return cell
        return self._token(COARSE, *self._parent_axial(q, r))

    def resolution(self, cell):
        return self._parse(cell)[0]

    def children(self, coarse_cell):
        """Fine cells whose parent is ``coarse_cell`` (49 for interior cells)."""
        res, Q, R = self._parse(coarse_cell)
        if res != COARSE:
            raise UnknownCell(f"{coarse_cell!r} is not a coarse cell")
        cq, cr = self._coarse_to_fine_axial(Q, R)
        out = []
        for dq in range(-8, 9):
            for dr in range(-8, 9):
                q, r = cq + dq, cr + dr
                if self._parent_axial(q, r) == (Q, R):
                    out.append(self._token(FINE, q, r))
        return sorted(out)

    def cell_area_m2(self, resolution):
        return self.fine_area_m2 if resolution == FINE else self.coarse_area_m2

    def describe(self):
        b = self.bbox
        return {
            "hex_mode": "lattice",
            "bbox": f"{b.min_lat},{b.min_lon},{b.max_lat},{b.max_lon}",
            "fine_area_m2": self.fine_area_m2,
        }


class TableCellIndex:
    """Index over externally supplied cell tokens.

    The table lists every fine cell with its centroid and coarse parent, and
    every coarse cell with its centroid.  Points are assigned to the fine
    cell with the nearest centroid; ties go to the lowest token.
    """

    kind = "table"

    def __init__(self, cells, max_snap_m=500.0):
        self._res = {}
        self._centroid = {}
        self._parent = {}
        for token, res, lat, lon, parent in cells:
            if res not in RESOLUTIONS:
                raise BadValue(f"cell {token!r}: unknown resolution {res!r}")
            if token in self._res:
                raise BadValue(f"duplicate cell token {token!r}")
            self._res[token] = res
            self._centroid[token] = (float(lat), float(lon))
            if res == FINE:
                self._parent[token] = parent
        for token, parent in self._parent.items():
            if self._res.get(parent) != COARSE:
                raise UnknownCell(f"fine cell {token!r} has unknown coarse parent {parent!r}")
        fine = sorted(t for t, r in self._res.items() if r == FINE)
        if not fine:
            raise BadValue("cell table has no fine cells")
        self._fine_tokens = fine
        self._tree = cKDTree(_unit_vectors([self._centroid[t] for t in fine]))
        self.max_snap_m = max_snap_m
        lats = [self._centroid[t][0] for t in fine]
        lons = [self._centroid[t][1] for t in fine]
        self.bbox = BBox.around(lats, lons, pad_m=max_snap_m)

    @classmethod
    def from_csv(cls, path, max_snap_m=500.0):
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for i, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    rows.append((row["token"], row["resolution"], float(row["lat"]), float(row["lon"]), row.get("parent") or ""))
                except (KeyError, ValueError) as exc:
                    raise BadValue(f"{path}:{i}: bad cell row ({exc})") from None
        return cls(rows, max_snap_m=max_snap_m)

    def bin_point(self, lat, lon, resolution=FINE):
        if resolution not in RESOLUTIONS:
            raise BadValue(f"unknown resolution {resolution!r}")
        if not self.bbox.contains(lat, lon):
            raise OutOfBounds(f"point ({lat}, {lon}) outside cell table extent")
        v = _unit_vectors([(lat, lon)])[0]
        k = min(4, len(self._fine_tokens))
        dist, idx = self._tree.query(v, k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        cands = [(round(float(d), 15), self._fine_tokens[i]) for d, i in zip(dist, idx)]
        _, tok = min(cands)
        if haversine_m((lat, lon), self._centroid[tok]) > self.max_snap_m:
            raise OutOfBounds(f"point ({lat}, {lon}) farther than {self.max_snap_m} m from any cell")
        return tok if resolution == FINE else self._parent[tok]

    def centroid(self, cell):
        try:
            return self._centroid[cell]
        except KeyError:
            raise UnknownCell(f"unknown cell token {cell!r}") from None

    def parent(self, cell):
        res = self.resolution(cell)
        return cell if res == COARSE else self._parent[cell]

    def resolution(self, cell):
        try:
            return self._res[cell]
        except KeyError:
            raise UnknownCell(f"unknown cell token {cell!r}") from None

    def describe(self):
        return {"hex_mode": "table", "cells": len(self._res)}


def _unit_vectors(latlons):
    a = np.radians(np.asarray(latlons, dtype=float))
    lat, lon = a[:, 0], a[:, 1]
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


def load_index(mode, bbox=None, cells_path=None, fine_area_m2=FINE_AREA_M2):
    """Build the configured cell index (``lattice`` or ``table``)."""
    if mode == "lattice":
        if bbox is None:
            raise BadValue("lattice hex mode needs a bounding box")
        return HexLatticeIndex(bbox, fine_area_m2=fine_area_m2)
    if mode == "table":
        if cells_path is None:
            raise BadValue("table hex mode needs a cell table path")
        return TableCellIndex.from_csv(Path(cells_path))
    raise BadValue(f"unknown hex mode {mode!r}")
