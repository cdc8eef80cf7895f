import os
import sys
from pathlib import Path

from hypothesis import settings

project_root = Path(__file__).parent.absolute()

# Modules are imported flat (archmodel, laws, ...), so src goes first.
sys.path.insert(0, str(project_root / "src"))

# The fitter and search properties run LM fits per example; no per-example deadline.
settings.register_profile("dev", deadline=None)
settings.register_profile("ci", deadline=None, derandomize=True, print_blob=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dev"))
