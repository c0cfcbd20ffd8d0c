from importlib import resources

import pytest

from incifind.corpus import Anatomy
from incifind.errors import MissingAnatomyLine
from incifind.prompting import (
    GenerationParams,
    PromptSetting,
    build_prompt,
    instruction_template,
)
from incifind.tagging import anatomy_map_line, tag_lesions

from conftest import make_lesion, make_report


def tagged_fixture():
    text = "a nodule in the thyroid and a cyst in the pancreas"
    report = make_report(text=text, lesions=(
        make_lesion("L1", text, "nodule", anatomy=Anatomy.THYROID),
        make_lesion("L2", text, "cyst", anatomy=Anatomy.PANCREAS),
    ))
    tagged = tag_lesions(report)
    return report, tagged


def test_base_user_content_is_tagged_text():
    _, tagged = tagged_fixture()
    bundle = build_prompt(tagged, setting=PromptSetting.BASE)
    assert bundle.user_content == tagged.tagged_text


def test_with_anatomy_prepends_line():
    report, tagged = tagged_fixture()
    line = anatomy_map_line(tagged, report)
    bundle = build_prompt(tagged, line, PromptSetting.WITH_ANATOMY)
    assert bundle.user_content == f"{line}\n{tagged.tagged_text}"
    assert bundle.user_content.startswith("LESION1=Thyroid; LESION2=Pancreas")


def test_with_anatomy_requires_line_for_lesion_bearing_report():
    _, tagged = tagged_fixture()
    with pytest.raises(MissingAnatomyLine):
        build_prompt(tagged, "", PromptSetting.WITH_ANATOMY)


def test_with_anatomy_allows_empty_line_without_lesions():
    report = make_report(text="nothing to see", lesions=())
    tagged = tag_lesions(report)
    bundle = build_prompt(tagged, "", PromptSetting.WITH_ANATOMY)
    assert bundle.user_content == tagged.tagged_text


def test_instruction_contains_required_lines():
    template = instruction_template()
    assert "Role: You are a board-certified radiologist." in template
    assert "Empty dict: No incidentalomas" in template
    assert "Category 1:" in template
    assert "Category 2:" in template
    assert "'Liver Inci': {\"LESION2\":1}" in template
    assert "Provide brief reasoning (<5 sentences) after JSON output." in template


def test_system_instruction_matches_shipped_template():
    _, tagged = tagged_fixture()
    shipped = (
        resources.files("incifind")
        .joinpath("templates/incidentaloma_prompt.txt")
        .read_text(encoding="utf-8")
    )
    bundle = build_prompt(tagged)
    assert bundle.system_instruction == shipped


def test_build_prompt_deterministic():
    report, tagged = tagged_fixture()
    line = anatomy_map_line(tagged, report)
    a = build_prompt(tagged, line, PromptSetting.WITH_ANATOMY)
    b = build_prompt(tagged, line, PromptSetting.WITH_ANATOMY)
    assert a == b


def test_generation_params_defaults():
    params = GenerationParams()
    assert params.temperature == 0.0
    assert params.top_p == 1.0
    assert params.max_tokens == 1024


@pytest.mark.parametrize("kwargs", [
    {"temperature": -0.1},
    {"top_p": 0.0},
    {"top_p": 1.5},
    {"max_tokens": 0},
])
def test_generation_params_invariants(kwargs):
    with pytest.raises(ValueError):
        GenerationParams(**kwargs)
