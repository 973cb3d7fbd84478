from distsched.cli import main
import sys

sys.exit(main())
