import pytest

from _support import BUILTIN_PARAMS, builtin


@pytest.fixture(params=sorted(BUILTIN_PARAMS))
def any_model(request):
    return builtin(request.param)


def pytest_terminal_summary(terminalreporter):
    from _support import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split(".")[0])):
        status, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")
