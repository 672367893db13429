"""Request and response bodies for the HTTP service.

Requests reject unknown fields so malformed payloads fail loudly (400)
instead of being silently half-read.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SearchRequest(StrictModel):
    query: str = Field(min_length=1, max_length=500)


class PointIn(StrictModel):
    x: float
    y: float


class RouteRequest(StrictModel):
    start: PointIn = Field(alias="from")
    product_id: str | None = None
    zone: str | None = None

    @model_validator(mode="after")
    def _one_goal(self):
        if (self.product_id is None) == (self.zone is None):
            raise ValueError("exactly one of product_id or zone is required")
        return self


class LabelIn(StrictModel):
    name: str = Field(min_length=1)
    brand: str = ""
    category: str = ""


class LocalizeRequest(StrictModel):
    labels: list[LabelIn] = Field(min_length=1)
    k: int = Field(default=5, ge=1, le=500)


class PoseOut(StrictModel):
    rank: int
    score: float
    x: float
    y: float
    heading: float


class LocalizeResponse(StrictModel):
    k: int
    hypotheses: list[PoseOut]


class MapMeta(StrictModel):
    width: int
    height: int
    resolution: float
    origin_x: float
    origin_y: float
    scale: int
    image_width: int
    image_height: int


class ErrorBody(StrictModel):
    code: str
    message: str


class ErrorResponse(StrictModel):
    error: ErrorBody
