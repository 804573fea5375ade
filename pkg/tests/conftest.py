import pytest

from taintsum import corpus, summarize_library, taint_rule_gen, validate_module


@pytest.fixture(scope="session")
def libcorpus():
    m = corpus.load_module("libcorpus")
    assert validate_module(m) == []
    return m


@pytest.fixture(scope="session")
def student_flow():
    m = corpus.load_module("student_flow")
    assert validate_module(m) == []
    return m


@pytest.fixture(scope="session")
def bench_memcpy():
    return corpus.load_module("bench_memcpy")


@pytest.fixture(scope="session")
def bench_user():
    return corpus.load_module("bench_user")


@pytest.fixture(scope="session")
def lib_summaries(libcorpus):
    summaries, diags = summarize_library(libcorpus, include_control_deps=False)
    assert diags == []
    return summaries


@pytest.fixture(scope="session")
def lib_summaries_cdep(libcorpus):
    summaries, diags = summarize_library(libcorpus, include_control_deps=True)
    assert diags == []
    return summaries


@pytest.fixture(scope="session")
def lib_rules(libcorpus, lib_summaries_cdep):
    return {name: taint_rule_gen(s, libcorpus)
            for name, s in lib_summaries_cdep.items()}


@pytest.fixture(scope="session")
def student_flow_rules(student_flow):
    summaries, diags = summarize_library(student_flow, include_control_deps=True)
    assert diags == []
    return {name: taint_rule_gen(s, student_flow) for name, s in summaries.items()}
