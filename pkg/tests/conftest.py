from hypothesis import settings

settings.register_profile("edgeflow", deadline=None, max_examples=60)
settings.load_profile("edgeflow")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
