"""Urban-form morphometrics from parcel, building and street geometry."""

from .metrics import (
    Building,
    Parcel,
    PlaceGeometry,
    PlaceMorphology,
    SetbackObservation,
    Street,
    aggregate_setbacks,
    building_setback,
    clean_rules,
    compute_far,
    min_plot_size,
    place_morphology,
    plot_setback,
    setback_observations,
)

__all__ = [
    "Building",
    "Parcel",
    "PlaceGeometry",
    "PlaceMorphology",
    "SetbackObservation",
    "Street",
    "aggregate_setbacks",
    "building_setback",
    "clean_rules",
    "compute_far",
    "min_plot_size",
    "place_morphology",
    "plot_setback",
    "setback_observations",
]
