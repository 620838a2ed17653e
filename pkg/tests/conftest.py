"""Shared fixtures: synthetic rasters, catalogs, and rating populations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from curation_forge.catalog import RatingEvent


@dataclass
class RatedPopulation:
    """A planted-truth crowd study: honest raters plus random clickers."""

    events: list[RatingEvent]
    truth: dict[str, float]
    honest_workers: list[str]
    clicker_workers: list[str]
    votes_per_image: int


def build_population(
    seed: int = 7,
    n_images: int = 60,
    n_honest: int = 40,
    n_clickers: int = 5,
    votes_per_image: int = 30,
    n_quiz: int = 10,
    n_hidden: int = 5,
) -> RatedPopulation:
    """Quiz-passing workers rating planted-truth images.

    Honest scores are the image truth plus unit-variance noise, rounded
    and clamped to 1..5; clickers answer uniformly at random but game
    every test question. Each image receives exactly ``votes_per_image``
    honest votes; clickers rate everything.
    """
    rng = np.random.default_rng(seed)
    images = [f"img{i:03d}" for i in range(n_images)]
    truth = {img: float(rng.uniform(1.0, 5.0)) for img in images}
    honest = [f"honest{w:02d}" for w in range(n_honest)]
    clickers = [f"clicker{c}" for c in range(n_clickers)]

    # rotate honest raters so each image gets exactly votes_per_image votes
    raters_of: dict[str, list[str]] = {img: [] for img in images}
    for k, img in enumerate(images):
        for v in range(votes_per_image):
            raters_of[img].append(honest[(k + v) % n_honest])

    quiz_answers = {f"quiz{q}": frozenset({2, 3, 4}) for q in range(n_quiz)}
    hidden_answers = {f"hidden{q}": frozenset({2, 3, 4}) for q in range(n_hidden)}

    events: list[RatingEvent] = []

    def emit_worker(worker: str, score_of) -> None:
        for img, allowed in quiz_answers.items():
            events.append(
                RatingEvent(worker, img, int(rng.choice(sorted(allowed))), is_test=True, allowed_answers=allowed)
            )
        first_real = True
        hidden_iter = iter(hidden_answers.items())
        my_images = [img for img in images if worker in raters_of[img]] if worker in honest else images
        for img in my_images:
            events.append(RatingEvent(worker, img, score_of(img)))
            if first_real:
                first_real = False
                for himg, allowed in hidden_iter:
                    events.append(
                        RatingEvent(worker, himg, int(rng.choice(sorted(allowed))), is_test=True, allowed_answers=allowed)
                    )

    for worker in honest:
        noise = {img: float(rng.normal(0.0, 1.0)) for img in images}
        emit_worker(worker, lambda img: int(np.clip(round(truth[img] + noise[img]), 1, 5)))
    for worker in clickers:
        picks = {img: int(rng.integers(1, 6)) for img in images}
        emit_worker(worker, lambda img: picks[img])

    return RatedPopulation(
        events=events,
        truth=truth,
        honest_workers=honest,
        clicker_workers=clickers,
        votes_per_image=votes_per_image,
    )


@pytest.fixture(scope="session")
def population() -> RatedPopulation:
    return build_population()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
