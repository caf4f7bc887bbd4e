from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lemae.config import data_path
from lemae.envs import TASKS, success_probes
from lemae.llm_bridge import (
    COUNT_REQUEST,
    REPAIR_PREFIX,
    FixtureExhausted,
    FixtureProvider,
    HttpProvider,
    JsonParseError,
    MalformedProviderReply,
    NetworkError,
    PromptBundle,
    ProviderConfig,
    SchemaError,
    SelfCheckExhausted,
    assemble_prompt,
    obtain_discriminators,
    open_provider,
    parse_response,
    request,
)

VALID = {
    "Thought": "Both agents must reach the right room.",
    "Key_states": {
        "init": "both agents on the left",
        "key_state_1": "the door is open",
        "key_state_2": "one agent is on the right",
        "success": "both agents on the right",
    },
    "Discriminators": {
        "key_state_1": "s[4] == 1",
        "key_state_2": "s[0] > 15 or s[2] > 15",
    },
    "Subspace_states": {"key_state_1": [4], "key_state_2": [0, 2]},
}


def variant(**discs) -> dict:
    data = json.loads(json.dumps(VALID))
    for sym, src in discs.items():
        data["Discriminators"][sym] = src
    return data


BROKEN = json.dumps(variant(key_state_1="s[99] == 1"))
FIXED = json.dumps(VALID)
PROBES = success_probes("pass")


def write_fixture(tmp_path, responses, name="session.json"):
    path = tmp_path / name
    path.write_text(json.dumps({"responses": responses}))
    return path


def bundle():
    return PromptBundle.for_task("pass")


# -- prompts ----------------------------------------------------------------


def test_pass_prompt_contents():
    msgs = assemble_prompt(bundle(), None)
    assert [m["role"] for m in msgs] == ["system", "user"]
    assert "hidden switch" in msgs[0]["content"]
    assert "(agent0.x, agent0.y, agent1.x, agent1.y, door.open)" in msgs[0]["content"]
    assert COUNT_REQUEST.split("{")[0] in msgs[1]["content"]


def test_empty_config_is_omitted():
    assert "Task configuration" not in assemble_prompt(bundle(), "")[1]["content"]
    assert "Task configuration:\nmap A" in assemble_prompt(bundle(), "map A")[1]["content"]


def test_river_prompt():
    system = assemble_prompt(PromptBundle.for_task("river"))[0]["content"]
    assert "Alice" in system and "Bob" in system and "river" in system


def test_role_instruction_is_task_independent_and_bytes_are_stable():
    roles = {PromptBundle.for_task(t).role_instruction for t in TASKS}
    assert len(roles) == 1
    assert assemble_prompt(bundle(), "x") == assemble_prompt(bundle(), "x")


def test_unknown_task_bundle():
    with pytest.raises(KeyError):
        PromptBundle.for_task("maze")


# -- providers --------------------------------------------------------------


def test_fixture_provider_replays_then_exhausts(tmp_path):
    cfg = ProviderConfig(kind="fixture", fixture_path=str(write_fixture(tmp_path, ["hello"])))
    prov = open_provider(cfg)
    assert request(prov, [{"role": "user", "content": "hi"}]) == "hello"
    with pytest.raises(FixtureExhausted):
        request(prov, [{"role": "user", "content": "hi"}])


def test_fixture_schema_is_checked(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"answers": ["x"]}))
    with pytest.raises(MalformedProviderReply):
        FixtureProvider(path)


def test_provider_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig(kind="fixture").validate()
    with pytest.raises(ValueError):
        ProviderConfig(kind="http", endpoint_url="http://x", fixture_path="f.json").validate()
    with pytest.raises(ValueError):
        ProviderConfig(kind="fixture", fixture_path="f.json", max_selfcheck_retries=0).validate()
    with pytest.raises(ValueError):
        ProviderConfig.from_dict({"kind": "fixture", "fixture_path": "f", "colour": 1})
    assert ProviderConfig().max_selfcheck_retries == 5


class FakeResponse:
    def __init__(self, status, payload):
        self.status_code = status
        self._payload = payload

    def json(self):
        if isinstance(self._payload, Exception):
            raise self._payload
        return self._payload


class FakeSession:
    def __init__(self, response):
        self.response = response
        self.posts = []

    def post(self, url, json=None, timeout=None, headers=None):
        self.posts.append((url, json, headers))
        return self.response


def http_cfg():
    return ProviderConfig(kind="http", endpoint_url="http://llm.invalid/v1/chat/completions",
                          model_name="m", temperature=0.2, api_key_env_var="TEST_LLM_KEY")


def test_http_500_raises_network_error_with_status(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "secret")
    prov = HttpProvider(http_cfg(), session=FakeSession(FakeResponse(500, {})))
    with pytest.raises(NetworkError) as info:
        prov.complete([{"role": "user", "content": "hi"}])
    assert info.value.status == 500


def test_http_wire_shape(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "secret")
    session = FakeSession(FakeResponse(200, {"choices": [{"message": {"content": "answer"}}]}))
    prov = HttpProvider(http_cfg(), session=session)
    msgs = [{"role": "system", "content": "a"}, {"role": "user", "content": "b"}]
    assert prov.complete(msgs) == "answer"
    url, body, headers = session.posts[0]
    assert url == "http://llm.invalid/v1/chat/completions"
    assert body == {"model": "m", "messages": msgs, "temperature": 0.2}
    assert headers["Authorization"] == "Bearer secret"


def test_http_malformed_reply_and_missing_key(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "secret")
    prov = HttpProvider(http_cfg(), session=FakeSession(FakeResponse(200, {"choices": []})))
    with pytest.raises(MalformedProviderReply):
        prov.complete([])
    prov = HttpProvider(http_cfg(), session=FakeSession(FakeResponse(200, ValueError("not json"))))
    with pytest.raises(MalformedProviderReply):
        prov.complete([])
    monkeypatch.delenv("TEST_LLM_KEY")
    with pytest.raises(NetworkError):
        prov.complete([])


# -- parsing ----------------------------------------------------------------


def test_parse_three_discriminator_response():
    raw = json.dumps({
        "Thought": "focus fire",
        "Key_states": {"init": "start", "key_state_1": "a", "key_state_2": "b", "key_state_3": "c",
                       "success": "win"},
        "Discriminators": {"key_state_1": "s[8] < 0.05", "key_state_2": "s[0] > 0.5 and s[4] > 0.5",
                           "key_state_3": "s[12] == 0"},
        "Subspace_states": {"key_state_1": [8], "key_state_2": [0, 4], "key_state_3": [12]},
    })
    resp = parse_response(raw)
    assert list(resp.discriminators) == ["key_state_1", "key_state_2", "key_state_3"]
    assert resp.thought == "focus fire"


def test_parse_tolerates_prose_and_fences():
    raw = "Sure! Here you go:\n```json\n" + FIXED + "\n```\nLet me know {if} anything else."
    assert parse_response(raw).discriminators == VALID["Discriminators"]


def test_parse_is_case_insensitive_on_field_names():
    data = {k.lower(): v for k, v in VALID.items()}
    data["SUBSPACE STATES"] = data.pop("subspace_states")
    assert parse_response(json.dumps(data)).subspace_states == {"key_state_1": [4], "key_state_2": [0, 2]}


def test_parse_schema_errors():
    missing = dict(VALID)
    del missing["Subspace_states"]
    with pytest.raises(SchemaError):
        parse_response(json.dumps(missing))
    mismatch = json.loads(FIXED)
    mismatch["Subspace_states"] = {"key_state_1": [4]}
    with pytest.raises(SchemaError):
        parse_response(json.dumps(mismatch))
    reserved = json.loads(FIXED)
    reserved["Discriminators"]["init"] = "s[4] == 0"
    reserved["Subspace_states"]["init"] = [4]
    with pytest.raises(SchemaError):
        parse_response(json.dumps(reserved))
    undescribed = json.loads(FIXED)
    del undescribed["Key_states"]["key_state_2"]
    with pytest.raises(SchemaError):
        parse_response(json.dumps(undescribed))


def test_parse_json_errors():
    with pytest.raises(JsonParseError):
        parse_response("no object here")
    with pytest.raises(JsonParseError):
        parse_response('{"Thought": "unterminated"')
    with pytest.raises(JsonParseError):
        parse_response("{'single': 'quotes'}")


@settings(max_examples=200)
@given(st.text(max_size=200))
def test_parse_only_raises_declared_errors(raw):
    try:
        parse_response(raw)
    except (JsonParseError, SchemaError):
        pass


# -- self-check -------------------------------------------------------------


def test_two_valid_answers_take_two_calls(tmp_path):
    rethought = json.dumps(variant(key_state_2="s[0] > 15 and s[2] > 14"))
    prov = FixtureProvider(write_fixture(tmp_path, [FIXED, rethought]))
    dset = obtain_discriminators(prov, bundle(), None, PROBES)
    assert prov.calls == 2
    # the rethought answer is kept
    assert dset["key_state_2"].source == "s[0] > 15 and s[2] > 14"
    # the second call saw the first answer and the rethink request
    roles = [m["role"] for m in prov.transcripts[1]]
    assert roles == ["system", "user", "assistant", "user"]
    assert prov.transcripts[1][3]["content"] == bundle().rethink_prompt


def test_one_repair_turn_fixes_broken_index(tmp_path):
    prov = FixtureProvider(write_fixture(tmp_path, [BROKEN, BROKEN, FIXED]))
    reports = []
    dset = obtain_discriminators(prov, bundle(), None, PROBES, report_sink=reports)
    assert prov.calls == 3
    assert dset.symbols == ["key_state_1", "key_state_2"]
    assert [r.passed for r in reports] == [False, True]
    feedback = prov.transcripts[2][-1]["content"]
    assert feedback.startswith(REPAIR_PREFIX) and "IndexOutOfRange(99,5)" in feedback


def test_unparseable_answer_is_repaired(tmp_path):
    prov = FixtureProvider(write_fixture(tmp_path, ["I am not sure.", "still thinking", FIXED]))
    dset = obtain_discriminators(prov, bundle(), None, PROBES)
    assert prov.calls == 3 and len(dset) == 2


@pytest.mark.parametrize("n", [1, 2, 5])
def test_exhaustion_after_max_retries(tmp_path, n):
    prov = FixtureProvider(write_fixture(tmp_path, [BROKEN] * (n + 2)), max_selfcheck_retries=n)
    with pytest.raises(SelfCheckExhausted) as info:
        obtain_discriminators(prov, bundle(), None, PROBES)
    assert prov.calls == n + 2
    assert info.value.calls == n + 2
    assert not info.value.report.passed


@settings(max_examples=60)
@given(st.integers(1, 6), st.lists(st.booleans(), min_size=1, max_size=12))
def test_call_count_never_exceeds_bound(retries, pattern):
    import tempfile
    from pathlib import Path

    responses = [FIXED if ok else BROKEN for ok in pattern] + [BROKEN] * 12
    with tempfile.TemporaryDirectory() as d:
        prov = FixtureProvider(write_fixture(Path(d), responses), max_selfcheck_retries=retries)
        try:
            obtain_discriminators(prov, bundle(), None, PROBES)
        except SelfCheckExhausted:
            assert prov.calls == 2 + retries
        assert prov.calls <= 2 + retries


def test_provider_config_opens_a_session(tmp_path):
    cfg = ProviderConfig(kind="fixture", fixture_path=str(write_fixture(tmp_path, [FIXED, FIXED])),
                         max_selfcheck_retries=3)
    assert len(obtain_discriminators(cfg, bundle(), None, PROBES)) == 2


def test_empty_probes_rejected(tmp_path):
    prov = FixtureProvider(write_fixture(tmp_path, [FIXED, FIXED]))
    with pytest.raises(ValueError):
        obtain_discriminators(prov, bundle(), None, [])


@pytest.mark.parametrize("task", TASKS)
def test_shipped_fixtures_verify_in_two_calls_and_are_deterministic(task):
    path = data_path("fixtures", f"{task}.json")
    out = []
    for _ in range(2):
        prov = FixtureProvider(path)
        dset = obtain_discriminators(prov, PromptBundle.for_task(task), None, success_probes(task))
        assert prov.calls == 2
        out.append(json.dumps(dset.to_dict(), sort_keys=True))
    assert out[0] == out[1]
