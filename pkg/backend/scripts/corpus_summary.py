import sys
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables (VARCALC_SEED, VARCALC_SAMPLE_RADII, ...) before settings are built
load_dotenv()

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from varcalc.core.exceptions import VarcalcError  # noqa: E402
from varcalc.services.subdiff import SampleParams  # noqa: E402
from varcalc.services.verification import verification_service  # noqa: E402


def summarize(oracle: bool = True):
    """Run the built-in property suite and print one line per failing check"""
    try:
        suite = verification_service.run_suite(p=SampleParams(), oracle=oracle)
    except VarcalcError as e:
        print(f"Error running the corpus suite: {e.detail}")
        return 2

    for check in suite.checks:
        if not check.passed:
            print(f"FAILED {check.name}: {check.detail}")
    print(f"\n{len(suite.checks) - len(suite.failures)}/{len(suite.checks)} checks passed")
    return 0 if suite.passed else 1


if __name__ == "__main__":
    sys.exit(summarize(oracle="--no-oracle" not in sys.argv[1:]))
