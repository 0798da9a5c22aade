from deep_arguing.cli import main

raise SystemExit(main())
