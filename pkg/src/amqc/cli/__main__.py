import sys

from amqc.cli.main import main

sys.exit(main())
