import rftpy


def test_version() -> None:
    assert rftpy.__version__ == "1.0.0"
