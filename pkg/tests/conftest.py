import random

import pytest

from tokencall import ParamSpec, ToolDoc, build_registry
from tokencall.synth import synth_records, synth_toolset

CASE_STUDY_TEXT = """<think>
Okay, let's see. The user wants information about the 'Fnatic' team and a friends list.
First, there's the <<get_teams_and_players>> tool. The parameter is the team name.
Next, the <<user_friends_list>> tool requires the steamid, given as '77788899900011122'...
</think>
...
<tool_call>
{"token": "<<get_teams_and_players>>", "parameters": {"name": "Fnatic"}}
{"token": "<<user_friends_list>>", "parameters": {"is_id": "77788899900011122"}}
</tool_call>"""


@pytest.fixture
def case_study_text():
    return CASE_STUDY_TEXT


@pytest.fixture
def esports_registry():
    tools = [
        ToolDoc(
            name="get_teams_and_players",
            description="Fetch esports teams and their player rosters.",
            parameters=(ParamSpec(name="name", value_type="string", description="team name"),),
        ),
        ToolDoc(
            name="user_friends_list",
            description="Full friends list of a platform user.",
            parameters=(ParamSpec(name="is_id", value_type="string", description="user id"),),
        ),
    ]
    return build_registry(tools, "atomic")


@pytest.fixture
def small_registry():
    return build_registry(synth_toolset(12, seed=7), "atomic")


@pytest.fixture
def small_records(small_registry):
    return synth_records(small_registry, 6, seed=11)


@pytest.fixture
def rng():
    return random.Random(1234)
