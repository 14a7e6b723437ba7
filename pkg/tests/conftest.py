import sys
import warnings
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from netprice.equilibrium import UnverifiedTheoryWarning  # noqa: E402

warnings.filterwarnings("ignore", category=UnverifiedTheoryWarning)
