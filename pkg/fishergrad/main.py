# fishergrad/main.py
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from fishergrad.cli import build_parser, dispatch
from fishergrad.config import load_settings
from fishergrad.db import init_db
from fishergrad.ledger import record_run


def main(argv: Optional[Sequence[str]] = None) -> int:
    # Load env (flags override anything set here)
    load_dotenv(Path(__file__).parent.parent / ".env")
    settings = load_settings()

    args = build_parser().parse_args(argv)

    level = (args.log_level or settings.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )

    code, cfg = dispatch(args, settings)

    if not args.no_ledger:
        try:
            init_db(settings.db_path)
        except Exception as e:
            logging.warning("[Main] Ledger unavailable (%s): %s", settings.db_path, e)
        else:
            record_run(
                args.command,
                cfg.seed if cfg else args.seed,
                cfg.as_dict() if cfg else vars(args),
                str(cfg.out) if cfg and cfg.out else None,
                code,
                path=settings.db_path,
            )
    return code


if __name__ == "__main__":
    sys.exit(main())
