from src.core.analyst import AnalystClient
from src.core.errors import AnalystError
from src.providers.heuristic import HeuristicAnalyst


def get_analyst(name: str) -> AnalystClient:
    if name == "heuristic":
        return HeuristicAnalyst()
    if name == "openai":
        from src.providers.openai_analyst import OpenAIAnalyst
        return OpenAIAnalyst()
    raise AnalystError(f"Unknown analyst client {name!r}")
