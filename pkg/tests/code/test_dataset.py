from __future__ import annotations

import pytest
import torch

from core.dataset import (
    BACKGROUND,
    CLASS_NAMES,
    MAX_CLASSES,
    class_id,
    class_name,
    classify_image,
    make_dataset,
    parse_condition,
    render,
)
from core.diffusion_core import Condition
from core.errors import ConfigError


def test_class_names_are_shape_major() -> None:
    assert MAX_CLASSES == 12
    assert CLASS_NAMES[:4] == (
        "red square",
        "green square",
        "blue square",
        "yellow square",
    )
    assert class_name(4) == "red circle"


def test_class_id_normalizes_names() -> None:
    assert class_id("Blue_Square") == 2
    assert class_id("  yellow   triangle ") == 11
    with pytest.raises(ConfigError):
        class_id("purple hexagon")


def test_parse_condition_accepts_ids_and_names() -> None:
    assert parse_condition("3", 8) == Condition(3)
    assert parse_condition("red circle", 8) == Condition(4)
    with pytest.raises(ConfigError):
        parse_condition("9", 8)
    with pytest.raises(ConfigError):
        parse_condition("yellow triangle", 8)


def test_make_dataset_is_balanced_and_seeded() -> None:
    first = make_dataset(16, 4, seed=3, image_size=16)
    second = make_dataset(16, 4, seed=3, image_size=16)

    assert len(first) == 16
    assert first.images.shape == (16, 3, 16, 16)
    assert torch.bincount(first.labels).tolist() == [4, 4, 4, 4]
    assert torch.equal(first.images, second.images)
    assert torch.equal(first.labels, second.labels)
    other = make_dataset(16, 4, seed=4, image_size=16)
    assert not torch.equal(first.images, other.images)


def test_dataset_items_pair_images_with_conditions() -> None:
    dataset = make_dataset(4, 2)
    image, cond = dataset[1]
    assert image.shape == (3, 32, 32)
    assert cond == Condition(int(dataset.labels[1]))
    assert dataset.conditions[1] == cond


@pytest.mark.parametrize(("n", "classes"), [(0, 4), (4, 1), (4, 13)])
def test_make_dataset_rejects_bad_sizes(n: int, classes: int) -> None:
    with pytest.raises(ConfigError):
        make_dataset(n, classes)


@pytest.mark.parametrize("index", range(MAX_CLASSES))
def test_classifier_recognizes_rendered_classes(index: int) -> None:
    image = render(index, 32, 16.0, 16.0, 9.0)
    assert classify_image(image) == index


def test_classifier_returns_none_for_blank_images() -> None:
    assert classify_image(torch.full((3, 32, 32), BACKGROUND)) is None
