import sys

from dualdp.main import main


sys.exit(main())
