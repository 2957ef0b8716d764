from pathlib import Path

from src.models.testbed import LabConfig
from src.services.testbed import generate_sessions, load_sessions, to_raw_frame
from src.services.standardizer import write_flows
from src.utils.logger import logger

if __name__ == "__main__":
    out = Path("outputs/datasets")
    out.mkdir(parents=True, exist_ok=True)
    lab, sessions = load_sessions()
    try:
        lab_a = generate_sessions(sessions, lab, seed=1, dataset_source="lab_a")
        write_flows(lab_a, out / "lab_a.csv")
        lab_b_cfg = LabConfig.model_validate({**lab.model_dump(), "mqtt_share": 0.4, "mqtt_keepalive_s": 20})
        lab_b = generate_sessions(sessions, lab_b_cfg, seed=2, dataset_source="lab_b", rate_scale=0.8)
        to_raw_frame(lab_b).to_csv(out / "lab_b_cicflowmeter.csv", index=False)
        for name, flows in (("lab_a", lab_a), ("lab_b", lab_b)):
            print(f"{name}: {len(flows)} flows, {sum(f.attack for f in flows)} attack")
    except Exception as e:
        logger.error(f"Dataset generation failed: {e}")
        raise
