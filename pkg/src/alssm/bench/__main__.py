from alssm.bench.cli import main

raise SystemExit(main())
