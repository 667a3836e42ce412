import logging

from celery import shared_task

from .serializers import load_model
from .services import CellProblem, generate, solve_cell

logger = logging.getLogger(__name__)


@shared_task(bind=True)
def solve_cell_task(self, problem: dict) -> dict:
    cell = CellProblem(**{**problem, "channel_stats": tuple(problem["channel_stats"])})
    return solve_cell(cell).as_dict()


@shared_task(bind=True)
def generate_realization_task(self, model_payload: dict, length: int, seed: int, mode: str) -> list:
    model = load_model(model_payload)
    logger.debug("generating realization seed=%d length=%d mode=%s", seed, length, mode)
    return generate(model, length, seed, mode).tolist()
