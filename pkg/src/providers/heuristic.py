import json
from src.core.analyst import AnalystClient
from src.models.mitigation import NodeSummary

class HeuristicAnalyst(AnalystClient):
    """Offline analyst: confidence is the share of incident flows that are synthetic."""

    name = "heuristic"

    def complete(self, summary: NodeSummary, system_prompt: str, user_prompt: str) -> str:
        # in and out edges both count; injected attackers have out-edges only
        total = summary.total_edges
        confidence = summary.synthetic_total / total if total else 0.0
        return json.dumps({
            "confidence": confidence,
            "rationale": f"{summary.synthetic_total}/{total} incident flows from synthetic infrastructure",
        })
