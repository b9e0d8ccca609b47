import os

import pytest

from threatgeo.backends import BackendConfig, GeminiBackend
from threatgeo.extract import extract_one
from threatgeo.scan_client import VirusTotalClient, parse_scan_response
from threatgeo.schema import default_schema

from conftest import raw

# EICAR test file, known to every engine
EICAR_SHA256 = "275a021bbfb6489e54d471899f7db9d1663fc695ec2fe2a2c4538aabf651fd0f"


@pytest.mark.integration
@pytest.mark.skipif(not os.environ.get("GEMINI_API_KEY"), reason="GEMINI_API_KEY not set")
def test_live_extraction():
    record = raw("live-1", "Russian hackers disrupted the Ukrainian power grid in December 2015.")
    result = extract_one(GeminiBackend(), default_schema(), record, BackendConfig(inter_call_delay=0.0))
    assert result.ok, result.error_message
    assert result.energy_related is True
    assert "Ukraine" in result.country_of_target


@pytest.mark.integration
@pytest.mark.skipif(not os.environ.get("VT_API_KEY"), reason="VT_API_KEY not set")
def test_live_hash_lookup():
    client = VirusTotalClient(requests_per_minute=4)
    report = parse_scan_response(client.fetch_raw(EICAR_SHA256), EICAR_SHA256)
    assert len(report.verdicts) > 10
    assert any(v.outcome.value == "detected" for v in report.verdicts)
