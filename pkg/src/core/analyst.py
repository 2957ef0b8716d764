from abc import ABC, abstractmethod
from src.models.mitigation import NodeSummary

class AnalystClient(ABC):
    name: str = "analyst"

    @abstractmethod
    def complete(self, summary: NodeSummary, system_prompt: str, user_prompt: str) -> str:
        """Return the analyst's raw reply for one node."""
        pass
