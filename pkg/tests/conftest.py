import numpy as np
import pytest

from phecg import synth, wfdb_ingest as wi

PTBXL_COLUMNS = ["ecg_id", "patient_id", "age", "sex", "height", "weight", "scp_codes",
                 "filename_lr", "filename_hr"]


def ptbxl_csv(rows):
    """Build metadata text in the PTB-XL column layout from dicts of overrides."""
    lines = [",".join(PTBXL_COLUMNS)]
    for i, row in enumerate(rows, start=1):
        values = {
            "ecg_id": str(i),
            "patient_id": str(1000 + i),
            "age": "56.0",
            "sex": "1",
            "height": "",
            "weight": "63.0",
            "scp_codes": "{'NORM': 100.0, 'SR': 0.0}",
            "filename_lr": f"records100/00000/{i:05d}_lr",
            "filename_hr": f"records500/00000/{i:05d}_hr",
        }
        values.update(row)
        values["scp_codes"] = '"' + values["scp_codes"] + '"'
        lines.append(",".join(values[c] for c in PTBXL_COLUMNS))
    return ("\n".join(lines) + "\n").encode()


@pytest.fixture
def clean_record():
    rec, _ = synth.generate(synth.SynthParams(record_id="clean", noise_std=0.0))
    return rec


@pytest.fixture
def noisy_record():
    rec, _ = synth.generate(synth.SynthParams(record_id="00001_lr", noise_std=0.05, seed=11))
    return rec


@pytest.fixture
def record_dir(tmp_path, noisy_record):
    stem = wi.write_record(noisy_record, tmp_path)
    return stem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
