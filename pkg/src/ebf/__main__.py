from ebf.cli import main

raise SystemExit(main())
