"""
Pytest configuration and fixtures for the TutorNet curriculum framework

Shared fixtures: seeded generators, small hand-built scenes, tiny network
specs and train configs sized for fast CPU runs.
"""

from fractions import Fraction
from typing import List

import numpy as np
import pytest

from tutor_curriculum.core.cache import MemoryCache
from tutor_curriculum.core.performance import PerformanceMonitor
from tutor_curriculum.core.tensor import Tensor
from tutor_curriculum.models.curriculum_models import CurriculumParams
from tutor_curriculum.models.scene_models import AnnotatedScene, SceneRecipe
from tutor_curriculum.models.training_models import TrainConfig, TrainingMode
from tutor_curriculum.services.networks import main_net_spec, tutornet_spec
from tutor_curriculum.services.scene_synthesis import generate_dataset


@pytest.fixture
def rng():
    """Seeded generator for reproducible random inputs"""
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene():
    """A 16×16 RGB scene with three interior points"""
    image = np.full((1, 3, 16, 16), 0.8)
    return AnnotatedScene(image=Tensor(image), points=[(4.5, 5.0), (10.25, 11.5), (8.0, 8.0)], scene_id="small")


@pytest.fixture
def desk_recipe():
    """The default 64×64 recipe"""
    return SceneRecipe(seed=7)


@pytest.fixture
def tiny_recipe():
    """16×16 scenes for training tests"""
    return SceneRecipe(width=16, height=16, n_points_range=(2, 6), cluster_spread=3.0, seed=3)


@pytest.fixture
def tiny_scenes(tiny_recipe) -> List[AnnotatedScene]:
    return generate_dataset(tiny_recipe, 4, max_workers=1).scenes


@pytest.fixture
def make_train_config():
    """Factory for tiny train configs in any mode"""

    def factory(mode: TrainingMode = TrainingMode.SF_PLUS_TUTORNET, **updates) -> TrainConfig:
        width = Fraction(1, 16)
        curriculum = updates.pop("curriculum", CurriculumParams(scale_factor=100.0))
        values = dict(
            curriculum=curriculum,
            epochs=1,
            seed=0,
            mode=mode,
            main_spec=main_net_spec("vggish-tiny", width),
            tutor_spec=tutornet_spec(15, width, curriculum.T) if mode.uses_tutor else None,
        )
        values.update(updates)
        return TrainConfig(**values)

    return factory


@pytest.fixture
def fresh_cache():
    return MemoryCache()


@pytest.fixture
def performance_monitor():
    """An isolated performance monitor so tests do not share metrics"""
    return PerformanceMonitor()
