#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

from __future__ import annotations

from rcrplan.viz import render_regions
from rcrplan.viz import write_regions_svg


def test_empty_bundle_renders():
    svg = render_regions({})
    assert "<svg" in svg
    assert "no predictors" in svg


def test_regions_svg(tmp_path, four_slot_predictor):
    path = tmp_path / "regions.svg"
    write_regions_svg(path, {("surface", "can"): [four_slot_predictor]})
    svg = path.read_text()
    assert "<svg" in svg
    assert svg.rstrip().endswith("</svg>")


def test_rendering_is_byte_identical(four_slot_predictor):
    bundle = {("surface", "can"): [four_slot_predictor]}
    first = render_regions(bundle, seed=3)
    assert render_regions(bundle, seed=3) == first
    assert "<dc:date>" not in first
    assert render_regions(bundle, seed=4) != first
