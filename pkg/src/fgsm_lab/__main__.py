import sys
from fgsm_lab.cli import main
sys.exit(main())
